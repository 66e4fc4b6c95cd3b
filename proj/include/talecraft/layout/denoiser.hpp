#pragma once

#include <torch/torch.h>

#include "talecraft/layout/layout.hpp"

namespace talecraft::layout {

struct LayoutDenoiserOptions {
    LayoutVocab vocab;
    int n_max = 16;
    int timesteps = 50;
    int width = 256;
    int layers = 4;
    int heads = 4;
    int ff_mult = 4;
};

/// Pre-norm bidirectional transformer block.
class EncoderBlockImpl : public torch::nn::Module {
public:
    EncoderBlockImpl(int width, int heads, int ff_mult);
    torch::Tensor forward(torch::Tensor x);

private:
    torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::MultiheadAttention attn_{nullptr};
    torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
};
TORCH_MODULE(EncoderBlock);

/// Estimates p̃(z0 | z_t) for every position of a flattened layout.
class LayoutDenoiserImpl : public torch::nn::Module {
public:
    explicit LayoutDenoiserImpl(LayoutDenoiserOptions options);

    /// tokens (B, L) int64, t (B) int64 -> raw logits (B, L, D).
    torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& t);

    /// Logits restricted to the legal range of each field and normalized.
    /// Positions holding PAD in `tokens` are one-hot on PAD.
    torch::Tensor probs(const torch::Tensor& tokens, const torch::Tensor& t);

    const LayoutDenoiserOptions& options() const noexcept { return options_; }
    int sequence_length() const noexcept { return kFieldsPerObject * options_.n_max; }

private:
    LayoutDenoiserOptions options_;
    torch::nn::Embedding token_embed_{nullptr}, position_embed_{nullptr}, time_embed_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::LayerNorm out_norm_{nullptr};
    torch::nn::Linear head_{nullptr};
    torch::Tensor legal_;  // (L, D) bool
};
TORCH_MODULE(LayoutDenoiser);

}  // namespace talecraft::layout
