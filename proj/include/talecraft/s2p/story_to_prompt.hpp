#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

namespace talecraft {
class Config;
}

namespace talecraft::s2p {

struct StoryRequest {
    std::string story;
    /// Template the instruction is built from; empty selects the built-in "v1".
    std::string instruction;
    /// Style keyword, e.g. "oil painting". Empty disables the suffix.
    std::string style;
    int k = 1;

    /// Throws InvalidRequestError on an empty story or k < 1.
    void validate() const;
};

struct Prompt {
    int scene_index = 0;
    std::string text;

    bool operator==(const Prompt&) const = default;
};

struct PromptList {
    std::vector<Prompt> prompts;

    std::vector<std::string> texts() const;
    std::size_t size() const noexcept { return prompts.size(); }
    bool operator==(const PromptList&) const = default;
};

/// Versioned instruction templates. Placeholders: {story}, {k}, {style_clause}.
std::string instruction_template(const std::string& version);

/// "oil painting" -> "in oil painting style"; an already formed suffix is kept.
std::string style_suffix(const std::string& style);

/// Appends the style suffix unless the prompt already ends with it.
std::string apply_style(const std::string& prompt, const std::string& style);

std::string build_instruction(const StoryRequest& request);

/// Extracts exactly k prompts from a numbered, bulleted or line-separated list.
/// Throws ParseError (carrying `raw`) when fewer than k items are found.
PromptList parse_prompt_list(const std::string& raw, int k);

/// Inverse of parse_prompt_list: "1. first\n2. second".
std::string render_prompt_list(const PromptList& list);

/// Splits text into sentences on terminal punctuation.
std::vector<std::string> split_sentences(const std::string& text);

class LanguageModelClient {
public:
    virtual ~LanguageModelClient() = default;
    /// Sends one instruction and returns the model's raw text. Throws TransportError.
    virtual std::string complete(const std::string& instruction) = 0;
    virtual std::string name() const = 0;
};

/// Offline stand-in for the language model. Reads the story and the prompt count
/// back out of the instruction, splits the story into sentences and pads or merges
/// them to exactly k items. A pure function of (story, k, style).
class StubClient final : public LanguageModelClient {
public:
    std::string complete(const std::string& instruction) override;
    std::string name() const override { return "stub"; }
};

enum class RemoteProtocol {
    simple,       // POST {"instruction": ...} -> {"text": ...}
    openai_chat,  // chat-completions body, reads choices[0].message.content
};

struct RemoteClientOptions {
    std::string endpoint;  // scheme://host[:port]/path
    RemoteProtocol protocol = RemoteProtocol::simple;
    std::string model = "gpt-4";
    std::string api_key;
    std::chrono::seconds timeout{60};
};

class RemoteClient final : public LanguageModelClient {
public:
    explicit RemoteClient(RemoteClientOptions options);
    std::string complete(const std::string& instruction) override;
    std::string name() const override { return "remote"; }

private:
    RemoteClientOptions options_;
};

/// Builds the client selected by `s2p.backend`. The remote key comes from
/// the TALECRAFT_LLM_KEY environment variable.
std::unique_ptr<LanguageModelClient> make_client(const Config& config);

struct GenerationResult {
    PromptList prompts;
    std::string raw_response;
    int attempts = 1;
};

/// Instruction -> client (one retry on transport failure) -> parse -> style suffix.
GenerationResult generate_prompts(const StoryRequest& request, LanguageModelClient& client);

/// Warnings for registered character names that no prompt mentions and for
/// capitalized mid-sentence words that match no registered name.
std::vector<std::string> character_name_warnings(const PromptList& prompts,
                                                 const std::vector<std::string>& registered_names);

}  // namespace talecraft::s2p
