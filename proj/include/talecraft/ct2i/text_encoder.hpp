#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "talecraft/ct2i/attention.hpp"

namespace talecraft::ct2i {

struct TextEncoderOptions {
    std::int64_t width = 64;
    std::int64_t hash_buckets = 2048;
    int custom_slots = 8;
    int max_tokens = 24;
    int heads = 4;
};

/// True for strings of the form "<name>" reserved for learned character tokens.
bool is_special_token(const std::string& token);

/// Lower-cased words and "<...>" tokens, in order.
std::vector<std::string> split_words(const std::string& text);

struct EncodedText {
    torch::Tensor tokens;  // (B, L) int64, PAD = 0, BOS = 1 at position 0
    torch::Tensor mask;    // (B, L) bool, true for BOS and words
};

/// Word-level text encoder. Ordinary words hash into a fixed table; registered
/// special tokens ("<sks>") own rows in a separate, separately trainable table.
class TextEncoderImpl : public torch::nn::Module {
public:
    explicit TextEncoderImpl(TextEncoderOptions options = {});

    EncodedText tokenize(const std::vector<std::string>& texts) const;

    /// (B, L, width) token features for each text.
    torch::Tensor forward(const EncodedText& encoded);
    torch::Tensor forward(const std::vector<std::string>& texts) { return forward(tokenize(texts)); }

    /// Mean of the word features, BOS excluded; (B, width). An empty phrase
    /// falls back to the BOS feature.
    torch::Tensor phrase_embedding(const std::vector<std::string>& phrases);

    /// Reserves a row for `token`. Throws RegistrationError for malformed or
    /// already registered tokens and CapacityError when all slots are taken.
    int register_token(const std::string& token);
    void unregister_token(const std::string& token);
    bool has_token(const std::string& token) const { return slots_.count(token) > 0; }
    const std::map<std::string, int>& registered_tokens() const noexcept { return slots_; }

    torch::Tensor token_embedding(const std::string& token) const;
    void set_token_embedding(const std::string& token, const torch::Tensor& value);

    const TextEncoderOptions& options() const noexcept { return options_; }

    torch::nn::Embedding word_embed{nullptr}, custom_tokens{nullptr}, position_embed{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, final_norm{nullptr};
    Attention attn{nullptr};
    torch::nn::Linear ff1{nullptr}, ff2{nullptr};

private:
    std::int64_t word_id(const std::string& word) const;

    TextEncoderOptions options_;
    std::map<std::string, int> slots_;
};
TORCH_MODULE(TextEncoder);

}  // namespace talecraft::ct2i
