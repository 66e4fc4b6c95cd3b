#include "talecraft/ct2i/text_encoder.hpp"

#include <cctype>
#include <regex>

#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"

namespace talecraft::ct2i {

namespace F = torch::nn::functional;

namespace {

constexpr std::int64_t kPad = 0;
constexpr std::int64_t kBos = 1;
constexpr std::int64_t kFirstWord = 2;

}  // namespace

bool is_special_token(const std::string& token) {
    static const std::regex re(R"(^<[a-z0-9_]{1,24}>$)");
    return std::regex_match(token, re);
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(current);
        current.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '<') {
            const auto close = text.find('>', i);
            if (close != std::string::npos) {
                std::string candidate = text.substr(i, close - i + 1);
                for (auto& ch : candidate) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
                if (is_special_token(candidate)) {
                    flush();
                    out.push_back(candidate);
                    i = close;
                    continue;
                }
            }
        }
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

TextEncoderImpl::TextEncoderImpl(TextEncoderOptions options) : options_(options) {
    const auto w = options_.width;
    word_embed = register_module("word_embed", torch::nn::Embedding(kFirstWord + options_.hash_buckets, w));
    custom_tokens = register_module("custom_tokens", torch::nn::Embedding(options_.custom_slots, w));
    position_embed = register_module("position_embed", torch::nn::Embedding(options_.max_tokens, w));
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
    attn = register_module("attn", Attention(w, w, w, options_.heads, 0));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
    ff1 = register_module("ff1", torch::nn::Linear(w, 4 * w));
    ff2 = register_module("ff2", torch::nn::Linear(4 * w, w));
    final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
    torch::NoGradGuard no_grad;
    word_embed->weight.normal_(0.0, 0.5);
    custom_tokens->weight.normal_(0.0, 0.5);
    position_embed->weight.normal_(0.0, 0.1);
}

std::int64_t TextEncoderImpl::word_id(const std::string& word) const {
    // Custom tokens are offset past the word table so the two never collide.
    if (auto it = slots_.find(word); it != slots_.end()) {
        return kFirstWord + options_.hash_buckets + it->second;
    }
    return kFirstWord + static_cast<std::int64_t>(fnv1a(word) % static_cast<std::uint64_t>(options_.hash_buckets));
}

EncodedText TextEncoderImpl::tokenize(const std::vector<std::string>& texts) const {
    const auto b = static_cast<std::int64_t>(texts.size());
    auto tokens = torch::full({b, options_.max_tokens}, kPad, torch::kLong);
    auto acc = tokens.accessor<std::int64_t, 2>();
    for (std::int64_t i = 0; i < b; ++i) {
        acc[i][0] = kBos;
        auto words = split_words(texts[static_cast<std::size_t>(i)]);
        const auto n = std::min<std::size_t>(words.size(), static_cast<std::size_t>(options_.max_tokens - 1));
        for (std::size_t j = 0; j < n; ++j) acc[i][static_cast<std::int64_t>(j) + 1] = word_id(words[j]);
    }
    return {tokens, tokens != kPad};
}

torch::Tensor TextEncoderImpl::forward(const EncodedText& encoded) {
    const auto& tokens = encoded.tokens;
    const auto custom_base = kFirstWord + options_.hash_buckets;
    auto is_custom = tokens >= custom_base;
    auto words = word_embed(torch::where(is_custom, torch::zeros_like(tokens), tokens));
    auto custom = custom_tokens(torch::where(is_custom, tokens - custom_base, torch::zeros_like(tokens)));
    auto x = torch::where(is_custom.unsqueeze(-1), custom, words);
    x = x + position_embed->weight.narrow(0, 0, tokens.size(1)).unsqueeze(0);
    x = x + attn(norm1(x), torch::Tensor(), encoded.mask);
    x = x + ff2(F::gelu(ff1(norm2(x))));
    return final_norm(x);
}

torch::Tensor TextEncoderImpl::phrase_embedding(const std::vector<std::string>& phrases) {
    auto encoded = tokenize(phrases);
    auto features = forward(encoded);
    auto words = encoded.mask.clone();
    words.select(1, 0).fill_(false);
    auto empty = words.sum(1) == 0;
    // Phrases without words pool over BOS alone.
    words.select(1, 0).copy_(empty);
    auto weights = words.to(features.dtype()).unsqueeze(-1);
    return (features * weights).sum(1) / weights.sum(1);
}

int TextEncoderImpl::register_token(const std::string& token) {
    if (!is_special_token(token)) {
        throw RegistrationError("character token must look like <name> (lower-case letters, digits, _): " + token);
    }
    if (slots_.count(token)) {
        throw RegistrationError("token already registered: " + token);
    }
    for (int slot = 0; slot < options_.custom_slots; ++slot) {
        bool used = false;
        for (const auto& [_, s] : slots_) used = used || s == slot;
        if (!used) {
            slots_[token] = slot;
            return slot;
        }
    }
    throw CapacityError("no free character token slots");
}

void TextEncoderImpl::unregister_token(const std::string& token) { slots_.erase(token); }

torch::Tensor TextEncoderImpl::token_embedding(const std::string& token) const {
    auto it = slots_.find(token);
    if (it == slots_.end()) throw NotFoundError("token not registered: " + token);
    return custom_tokens->weight[it->second].detach().clone();
}

void TextEncoderImpl::set_token_embedding(const std::string& token, const torch::Tensor& value) {
    auto it = slots_.find(token);
    if (it == slots_.end()) throw NotFoundError("token not registered: " + token);
    torch::NoGradGuard no_grad;
    custom_tokens->weight[it->second].copy_(value);
}

}  // namespace talecraft::ct2i
