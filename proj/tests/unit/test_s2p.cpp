#include <gtest/gtest.h>
#include <httplib.h>

#include <nlohmann/json.hpp>

#include <thread>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/s2p/story_to_prompt.hpp"

using namespace talecraft;
using namespace talecraft::s2p;

namespace {

const char* kTeaser =
    "A dog and a cat lived in a small house. One morning they ran into the forest. "
    "They found a river and played until sunset.";

class FailingClient : public LanguageModelClient {
public:
    explicit FailingClient(int failures, std::string reply = "1. a\n2. b") : failures_(failures), reply_(std::move(reply)) {}
    std::string complete(const std::string&) override {
        ++calls;
        if (calls <= failures_) throw TransportError("connection refused", 1);
        return reply_;
    }
    std::string name() const override { return "failing"; }
    int calls = 0;

private:
    int failures_;
    std::string reply_;
};

}  // namespace

TEST(BuildInstruction, ContainsStoryAndCount) {
    StoryRequest r{"a cat and a dog have a wonderful day.", "", "", 3};
    auto text = build_instruction(r);
    EXPECT_NE(text.find("a cat and a dog have a wonderful day."), std::string::npos);
    EXPECT_NE(text.find("3 prompts"), std::string::npos);
    EXPECT_NE(text.find("event, character, and scene"), std::string::npos);
    EXPECT_EQ(text.find("style"), std::string::npos);
    EXPECT_EQ(build_instruction(r), text);
}

TEST(BuildInstruction, StyleClause) {
    StoryRequest r{"a cat and a dog have a wonderful day.", "", "oil painting", 3};
    EXPECT_NE(build_instruction(r).find("in oil painting style"), std::string::npos);
}

TEST(BuildInstruction, InvalidRequests) {
    EXPECT_THROW(build_instruction({"", "", "", 3}), InvalidRequestError);
    EXPECT_THROW(build_instruction({"   ", "", "", 3}), InvalidRequestError);
    EXPECT_THROW(build_instruction({"story", "", "", 0}), InvalidRequestError);
}

TEST(BuildInstruction, CustomTemplate) {
    StoryRequest r{"Once.", "Give me {k} scenes for: {story}", "", 2};
    EXPECT_EQ(build_instruction(r), "Give me 2 scenes for: Once.");
    StoryRequest no_slot{"Once.", "Make {k} prompts.", "", 2};
    EXPECT_NE(build_instruction(no_slot).find("<<<\nOnce.\n>>>"), std::string::npos);
    EXPECT_THROW(instruction_template("v9"), ConfigError);
}

TEST(ParsePromptList, Numbered) {
    auto list = parse_prompt_list("1. A cat naps.\n2. A dog runs.", 2);
    EXPECT_EQ(list.texts(), (std::vector<std::string>{"A cat naps.", "A dog runs."}));
    EXPECT_EQ(list.prompts[1].scene_index, 1);
}

TEST(ParsePromptList, Bullets) {
    EXPECT_EQ(parse_prompt_list("- a\n- b\n- c", 3).texts(), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(ParsePromptList, TooFewThrowsWithRaw) {
    try {
        parse_prompt_list("only one line", 2);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.raw(), "only one line");
    }
}

TEST(ParsePromptList, PreambleQuotesAndPrefixes) {
    auto raw = "Here are the prompts:\n\nPrompt 1: \"A cat naps.\"\n2) \xE2\x80\x9C" "A dog runs.\xE2\x80\x9D\n";
    EXPECT_EQ(parse_prompt_list(raw, 2).texts(), (std::vector<std::string>{"A cat naps.", "A dog runs."}));
    EXPECT_EQ(parse_prompt_list("x\ny\nz", 2).texts(), (std::vector<std::string>{"x", "y"}));
}

TEST(ParsePromptList, RenderRoundTrip) {
    PromptList list;
    list.prompts = {{0, "A cat naps in the sun."}, {1, "2 dogs run, fast."}, {2, "\"Quoted\" word inside"}};
    EXPECT_EQ(parse_prompt_list(render_prompt_list(list), 3), list);
}

TEST(Style, SuffixIdempotent) {
    EXPECT_EQ(style_suffix("oil painting"), "in oil painting style");
    EXPECT_EQ(style_suffix("in oil painting style"), "in oil painting style");
    EXPECT_EQ(style_suffix(""), "");
    auto once = apply_style("A cat naps.", "oil painting");
    EXPECT_EQ(once, "A cat naps in oil painting style");
    EXPECT_EQ(apply_style(once, "oil painting"), once);
    EXPECT_EQ(apply_style("A cat naps.", ""), "A cat naps.");
}

TEST(SplitSentences, Basic) {
    EXPECT_EQ(split_sentences("One. Two! Three? Four"),
              (std::vector<std::string>{"One.", "Two!", "Three?", "Four"}));
    EXPECT_EQ(split_sentences("Value 3.5 stays."), (std::vector<std::string>{"Value 3.5 stays."}));
}

TEST(GeneratePrompts, StubThreeSentences) {
    StubClient stub;
    auto r = generate_prompts({kTeaser, "", "oil painting", 3}, stub);
    ASSERT_EQ(r.prompts.size(), 3u);
    EXPECT_EQ(r.prompts.prompts[0].text, "A dog and a cat lived in a small house in oil painting style");
    for (const auto& p : r.prompts.prompts) {
        EXPECT_TRUE(p.text.ends_with("in oil painting style")) << p.text;
    }
    EXPECT_EQ(r.attempts, 1);
}

TEST(GeneratePrompts, StubSingleCoversStory) {
    StubClient stub;
    auto r = generate_prompts({kTeaser, "", "", 1}, stub);
    ASSERT_EQ(r.prompts.size(), 1u);
    EXPECT_EQ(r.prompts.prompts[0].text, kTeaser);
}

TEST(GeneratePrompts, StubPadsAndMerges) {
    StubClient stub;
    auto many = generate_prompts({"One dog. Two cats.", "", "", 5}, stub);
    EXPECT_EQ(many.prompts.size(), 5u);
    auto clauses = generate_prompts({"A dog runs, a cat sleeps, a bird sings.", "", "", 3}, stub);
    EXPECT_EQ(clauses.prompts.texts(),
              (std::vector<std::string>{"A dog runs", "a cat sleeps", "a bird sings."}));
    auto merged = generate_prompts({"A. B. C. D. E.", "", "", 2}, stub);
    EXPECT_EQ(merged.prompts.texts(), (std::vector<std::string>{"A. B.", "C. D. E."}));
}

TEST(GeneratePrompts, StubIsPure) {
    StubClient a, b;
    for (int k = 1; k <= 6; ++k) {
        StoryRequest r{kTeaser, "", "watercolor", k};
        EXPECT_EQ(generate_prompts(r, a).prompts, generate_prompts(r, b).prompts);
    }
}

TEST(GeneratePrompts, RetriesOnceThenFails) {
    FailingClient once(1);
    auto r = generate_prompts({"s.", "", "", 2}, once);
    EXPECT_EQ(r.attempts, 2);
    EXPECT_EQ(once.calls, 2);

    FailingClient always(5);
    try {
        generate_prompts({"s.", "", "", 2}, always);
        FAIL();
    } catch (const TransportError& e) {
        EXPECT_EQ(e.attempts(), 2);
    }
    EXPECT_EQ(always.calls, 2);
}

TEST(GeneratePrompts, ParseFailurePropagates) {
    FailingClient c(0, "no list here");
    EXPECT_THROW(generate_prompts({"s.", "", "", 2}, c), ParseError);
}

TEST(CharacterWarnings, UnmentionedAndUnknownNames) {
    PromptList list;
    list.prompts = {{0, "Max walks with Luna in the park."}, {1, "Then Luna meets Oscar."}};
    auto w = character_name_warnings(list, {"Luna", "Bella"});
    ASSERT_EQ(w.size(), 2u);
    EXPECT_NE(w[0].find("Bella"), std::string::npos);
    EXPECT_NE(w[1].find("Oscar"), std::string::npos);
    EXPECT_TRUE(character_name_warnings(list, {"Luna", "Oscar"}).empty());
}

TEST(MakeClient, Backends) {
    auto cfg = Config::defaults();
    EXPECT_EQ(make_client(cfg)->name(), "stub");
    cfg.set("s2p.backend", "remote");
    cfg.set("s2p.endpoint", "http://127.0.0.1:1/v1");
    EXPECT_EQ(make_client(cfg)->name(), "remote");
    cfg.set("s2p.backend", "carrier-pigeon");
    EXPECT_THROW(make_client(cfg), ConfigError);
}

TEST(RemoteClient, SimpleAndChatProtocols) {
    httplib::Server server;
    std::string seen_auth;
    server.Post("/simple", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        auto body = nlohmann::json::parse(req.body);
        res.set_content(nlohmann::json{{"text", "1. " + body["instruction"].get<std::string>().substr(0, 5)}}.dump(),
                        "application/json");
    });
    server.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        EXPECT_EQ(body["model"], "gpt-4");
        EXPECT_EQ(body["messages"][0]["role"], "user");
        res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "1. chat"}}}}}}}.dump(),
                        "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto base = "http://127.0.0.1:" + std::to_string(port);
    RemoteClient simple({base + "/simple", RemoteProtocol::simple, "gpt-4", "secret", std::chrono::seconds(5)});
    EXPECT_EQ(simple.complete("Hello world"), "1. Hello");
    EXPECT_EQ(seen_auth, "Bearer secret");

    RemoteClient chat({base + "/chat", RemoteProtocol::openai_chat, "gpt-4", "", std::chrono::seconds(5)});
    EXPECT_EQ(chat.complete("x"), "1. chat");

    RemoteClient broken({base + "/broken", RemoteProtocol::simple, "gpt-4", "", std::chrono::seconds(5)});
    EXPECT_THROW(broken.complete("x"), TransportError);
    auto r = [&] {
        try {
            generate_prompts({"s.", "", "", 1}, broken);
        } catch (const TransportError& e) {
            return e.attempts();
        }
        return 0;
    }();
    EXPECT_EQ(r, 2);

    server.stop();
    thread.join();
}
