#pragma once

#include <torch/torch.h>

#include <vector>

#include "talecraft/ct2i/lora.hpp"

namespace talecraft::ct2i {

/// Multi-head scaled dot-product attention with LoRA-capable q/k/v maps.
class AttentionImpl : public torch::nn::Module {
public:
    AttentionImpl(std::int64_t query_dim, std::int64_t context_dim, std::int64_t width, int heads, int lora_rank);

    /// x (B, N, query_dim); context (B, M, context_dim) or undefined for self-attention;
    /// key_mask (B, M) bool, true = attend, undefined = all keys.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context = {},
                          const torch::Tensor& key_mask = {});

    LoRALinear to_q{nullptr}, to_k{nullptr}, to_v{nullptr};
    torch::nn::Linear to_out{nullptr};

private:
    int heads_;
};
TORCH_MODULE(Attention);

/// Self-attention followed by the gated grounding term:
///   f <- f + SA(f);  f <- f + tanh(alpha) * TS(SA([f, g]))
/// where TS keeps the first |f| positions. alpha starts at 0 (gate closed).
class GatedSelfAttentionImpl : public torch::nn::Module {
public:
    GatedSelfAttentionImpl(std::int64_t width, int heads, int lora_rank);

    /// f (B, N, W); g (B, G, W) or undefined; g_mask (B, G) bool or undefined.
    torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& g = {}, const torch::Tensor& g_mask = {});

    torch::nn::LayerNorm norm{nullptr};
    Attention self_attn{nullptr};
    torch::nn::LayerNorm gate_norm{nullptr};
    Attention gate_attn{nullptr};
    torch::Tensor gate_alpha;
};
TORCH_MODULE(GatedSelfAttention);

struct BlockConditions {
    torch::Tensor context;         // (B, L, ctx)
    torch::Tensor context_mask;    // (B, L) bool
    torch::Tensor grounding;       // (B, G, width) or undefined
    torch::Tensor grounding_mask;  // (B, G) bool
};

/// Spatial transformer: grouped norm, 1x1 projection into the attention width,
/// gated self-attention, cross-attention on text, feed-forward, projection out.
class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(std::int64_t channels, std::int64_t width, int heads, std::int64_t context_dim,
                         int lora_rank);

    torch::Tensor forward(const torch::Tensor& x, const BlockConditions& cond);

    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d proj_in{nullptr}, proj_out{nullptr};
    GatedSelfAttention gsa{nullptr};
    torch::nn::LayerNorm cross_norm{nullptr}, ff_norm{nullptr};
    Attention cross_attn{nullptr};
    torch::nn::Linear ff1{nullptr}, ff2{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// [sin(2^k pi v), cos(2^k pi v)] for k < n_freq, per coordinate in the order
/// x, y, w, h. box (..., 4) in [0,1] (clamped); result (..., 8 * n_freq).
torch::Tensor fourier_embed(const torch::Tensor& box, int n_freq);

/// e_g = MLP([phrase embedding, Fourier(box)]).
class GroundingNetImpl : public torch::nn::Module {
public:
    GroundingNetImpl(std::int64_t text_dim, int n_freq, std::int64_t width);

    /// phrase (..., text_dim), box (..., 4) -> (..., width)
    torch::Tensor forward(const torch::Tensor& phrase, const torch::Tensor& box);

    int n_freq() const noexcept { return n_freq_; }

    torch::nn::Linear fc1{nullptr}, fc2{nullptr};

private:
    int n_freq_;
};
TORCH_MODULE(GroundingNet);

}  // namespace talecraft::ct2i
