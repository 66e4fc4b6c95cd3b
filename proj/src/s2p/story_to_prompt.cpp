#include "talecraft/s2p/story_to_prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <regex>
#include <set>
#include <sstream>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"

namespace talecraft::s2p {

namespace {

constexpr const char* kStoryOpen = "<<<\n";
constexpr const char* kStoryClose = "\n>>>";

std::string trim(const std::string& s) {
    auto begin = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
    auto end = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
    return begin < end ? std::string(begin, end) : std::string();
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

bool ends_with_ci(const std::string& s, const std::string& suffix) {
    if (suffix.size() > s.size()) return false;
    return lower(s.substr(s.size() - suffix.size())) == lower(suffix);
}

std::string strip_list_marker(std::string line, bool& had_marker) {
    static const std::regex marker(
        R"(^\s*(?:(?:prompt|scene)\s*\d+\s*[:.)-]\s*|\d+\s*[.):]\s+|\(\d+\)\s*|[-*•]\s+))",
        std::regex::icase);
    std::smatch m;
    had_marker = std::regex_search(line, m, marker);
    if (had_marker) {
        line = line.substr(static_cast<std::size_t>(m.length(0)));
    }
    line = trim(line);
    // Surrounding quotes, straight or curly.
    for (const auto& [open, close] : {std::pair<std::string, std::string>{"\"", "\""},
                                      {"'", "'"},
                                      {"\xE2\x80\x9C", "\xE2\x80\x9D"}}) {
        if (line.size() >= open.size() + close.size() && line.starts_with(open) && line.ends_with(close)) {
            line = trim(line.substr(open.size(), line.size() - open.size() - close.size()));
            break;
        }
    }
    return line;
}

/// Splits a sentence into clauses on , ; : keeping the punctuation out.
std::vector<std::string> split_clauses(const std::string& sentence) {
    std::vector<std::string> out;
    std::string current;
    for (char c : sentence) {
        if (c == ',' || c == ';' || c == ':') {
            if (auto t = trim(current); !t.empty()) out.push_back(t);
            current.clear();
        } else {
            current += c;
        }
    }
    if (auto t = trim(current); !t.empty()) out.push_back(t);
    return out;
}

/// Pads or merges `items` into exactly k contiguous groups.
std::vector<std::string> fit_to_k(std::vector<std::string> items, int k) {
    const auto target = static_cast<std::size_t>(k);
    if (items.size() < target) {
        std::vector<std::string> clauses;
        for (const auto& s : items) {
            for (auto& c : split_clauses(s)) clauses.push_back(std::move(c));
        }
        if (clauses.size() > items.size()) {
            items = std::move(clauses);
        }
    }
    if (items.empty()) {
        return {};
    }
    while (items.size() < target) {
        items.push_back(items.back());
    }
    if (items.size() == target) {
        return items;
    }
    std::vector<std::string> groups;
    const std::size_t n = items.size();
    for (std::size_t g = 0; g < target; ++g) {
        std::size_t begin = g * n / target;
        std::size_t end = (g + 1) * n / target;
        std::string merged;
        for (std::size_t i = begin; i < end; ++i) {
            if (!merged.empty()) merged += ' ';
            merged += items[i];
        }
        groups.push_back(merged);
    }
    return groups;
}

}  // namespace

void StoryRequest::validate() const {
    if (trim(story).empty()) {
        throw InvalidRequestError("story must not be empty");
    }
    if (k < 1) {
        throw InvalidRequestError("k must be at least 1, got " + std::to_string(k));
    }
}

std::vector<std::string> PromptList::texts() const {
    std::vector<std::string> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(p.text);
    return out;
}

std::string instruction_template(const std::string& version) {
    if (version == "v1") {
        return "Write {k} prompts from the story below for a text-to-image diffusion model. "
               "Each prompt must describe the event, character, and scene of one moment of the story."
               "{style_clause} "
               "Answer with a numbered list of exactly {k} prompts, one per line.\n\n"
               "Story:\n<<<\n{story}\n>>>";
    }
    throw ConfigError("unknown instruction template version: " + version);
}

std::string style_suffix(const std::string& style) {
    auto s = trim(style);
    if (s.empty()) return {};
    auto l = lower(s);
    if (l.starts_with("in ") && l.ends_with(" style")) return s;
    return "in " + s + " style";
}

std::string apply_style(const std::string& prompt, const std::string& style) {
    auto suffix = style_suffix(style);
    auto p = trim(prompt);
    if (suffix.empty() || ends_with_ci(p, suffix)) return p;
    while (!p.empty() && (p.back() == '.' || p.back() == '!' || p.back() == '?')) p.pop_back();
    p = trim(p);
    if (ends_with_ci(p, suffix)) return p;
    return p.empty() ? suffix : p + " " + suffix;
}

std::string build_instruction(const StoryRequest& request) {
    request.validate();
    std::string text = request.instruction.empty() ? instruction_template("v1") : request.instruction;
    if (text.find("{story}") == std::string::npos) {
        text += "\n\nStory:\n<<<\n{story}\n>>>";
    }
    std::string style_clause;
    if (auto suffix = style_suffix(request.style); !suffix.empty()) {
        style_clause = " End every prompt with the suffix \"" + suffix + "\".";
    }
    replace_all(text, "{k}", std::to_string(request.k));
    replace_all(text, "{style_clause}", style_clause);
    replace_all(text, "{story}", trim(request.story));
    return text;
}

PromptList parse_prompt_list(const std::string& raw, int k) {
    if (k < 1) {
        throw InvalidRequestError("k must be at least 1");
    }
    std::vector<std::string> marked;
    std::vector<std::string> plain;
    std::istringstream in(raw);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        bool had_marker = false;
        auto text = strip_list_marker(line, had_marker);
        if (text.empty()) continue;
        (had_marker ? marked : plain).push_back(text);
    }
    // A list with markers wins over preamble lines like "Here are the prompts:".
    const auto& items = marked.size() >= static_cast<std::size_t>(k) ? marked : (marked.empty() ? plain : marked);
    if (items.size() < static_cast<std::size_t>(k)) {
        throw ParseError("expected " + std::to_string(k) + " prompts, found " + std::to_string(items.size()), raw);
    }
    PromptList out;
    for (int i = 0; i < k; ++i) {
        out.prompts.push_back({i, items[static_cast<std::size_t>(i)]});
    }
    return out;
}

std::string render_prompt_list(const PromptList& list) {
    std::string out;
    for (std::size_t i = 0; i < list.prompts.size(); ++i) {
        out += std::to_string(i + 1) + ". " + list.prompts[i].text + "\n";
    }
    return out;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        current += c;
        bool terminal = c == '.' || c == '!' || c == '?';
        bool boundary = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
        if (terminal && boundary) {
            if (auto t = trim(current); !t.empty()) out.push_back(t);
            current.clear();
        }
    }
    if (auto t = trim(current); !t.empty()) out.push_back(t);
    return out;
}

std::string StubClient::complete(const std::string& instruction) {
    auto open = instruction.find(kStoryOpen);
    auto close = instruction.rfind(kStoryClose);
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw ParseError("stub client: no story block in instruction", instruction);
    }
    auto story = instruction.substr(open + 4, close - open - 4);

    static const std::regex count_re(R"((\d+) prompts)");
    std::smatch m;
    if (!std::regex_search(instruction, m, count_re)) {
        throw ParseError("stub client: no prompt count in instruction", instruction);
    }
    const int k = std::stoi(m[1].str());

    static const std::regex suffix_re(R"re(suffix "([^"]*)")re");
    std::string style;
    if (std::smatch sm; std::regex_search(instruction, sm, suffix_re)) {
        style = sm[1].str();
    }

    auto items = fit_to_k(split_sentences(story), k);
    PromptList list;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
        list.prompts.push_back({i, apply_style(items[static_cast<std::size_t>(i)], style)});
    }
    return render_prompt_list(list);
}

std::unique_ptr<LanguageModelClient> make_client(const Config& config) {
    const auto backend = config.get_string("s2p.backend", "stub");
    if (backend == "stub") {
        return std::make_unique<StubClient>();
    }
    if (backend == "remote") {
        RemoteClientOptions options;
        options.endpoint = config.get_string("s2p.endpoint");
        const auto protocol = config.get_string("s2p.protocol", "simple");
        if (protocol == "simple") {
            options.protocol = RemoteProtocol::simple;
        } else if (protocol == "openai") {
            options.protocol = RemoteProtocol::openai_chat;
        } else {
            throw ConfigError("unknown s2p.protocol: " + protocol);
        }
        options.model = config.get_string("s2p.model", "gpt-4");
        options.timeout = std::chrono::seconds(config.get_int("s2p.timeout_s", 60));
        if (const char* key = std::getenv("TALECRAFT_LLM_KEY")) {
            options.api_key = key;
        }
        return std::make_unique<RemoteClient>(std::move(options));
    }
    throw ConfigError("unknown s2p.backend: " + backend);
}

GenerationResult generate_prompts(const StoryRequest& request, LanguageModelClient& client) {
    const auto instruction = build_instruction(request);
    GenerationResult result;
    constexpr int kMaxAttempts = 2;
    for (int attempt = 1;; ++attempt) {
        try {
            result.raw_response = client.complete(instruction);
            result.attempts = attempt;
            break;
        } catch (const TransportError& e) {
            if (attempt >= kMaxAttempts) {
                throw TransportError(std::string("language model request failed: ") + e.what(), attempt);
            }
        }
    }
    result.prompts = parse_prompt_list(result.raw_response, request.k);
    for (auto& p : result.prompts.prompts) {
        p.text = apply_style(p.text, request.style);
    }
    return result;
}

std::vector<std::string> character_name_warnings(const PromptList& prompts,
                                                 const std::vector<std::string>& registered_names) {
    std::vector<std::string> warnings;
    std::set<std::string> registered;
    for (const auto& n : registered_names) registered.insert(lower(n));

    std::set<std::string> seen_words;
    std::set<std::string> unknown_capitalized;
    static const std::regex word_re(R"([A-Za-z][A-Za-z'-]*)");
    for (const auto& p : prompts.prompts) {
        bool sentence_start = true;
        for (auto it = std::sregex_iterator(p.text.begin(), p.text.end(), word_re); it != std::sregex_iterator();
             ++it) {
            auto word = it->str();
            seen_words.insert(lower(word));
            if (!sentence_start && std::isupper(static_cast<unsigned char>(word[0])) &&
                !registered.count(lower(word))) {
                unknown_capitalized.insert(word);
            }
            auto end = static_cast<std::size_t>(it->position() + it->length());
            sentence_start = end < p.text.size() && (p.text[end] == '.' || p.text[end] == '!' || p.text[end] == '?');
        }
    }
    for (const auto& n : registered_names) {
        if (!seen_words.count(lower(n))) {
            warnings.push_back("registered character '" + n + "' is not mentioned in any prompt");
        }
    }
    for (const auto& w : unknown_capitalized) {
        warnings.push_back("'" + w + "' looks like a name but matches no registered character");
    }
    return warnings;
}

}  // namespace talecraft::s2p
