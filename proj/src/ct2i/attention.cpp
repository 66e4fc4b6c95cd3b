#include "talecraft/ct2i/attention.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::ct2i {

namespace F = torch::nn::functional;

AttentionImpl::AttentionImpl(std::int64_t query_dim, std::int64_t context_dim, std::int64_t width, int heads,
                             int lora_rank)
    : heads_(heads) {
    if (width % heads != 0) throw ConfigError("attention width must divide by the head count");
    to_q = register_module("to_q", LoRALinear(query_dim, width, lora_rank));
    to_k = register_module("to_k", LoRALinear(context_dim, width, lora_rank));
    to_v = register_module("to_v", LoRALinear(context_dim, width, lora_rank));
    to_out = register_module("to_out", torch::nn::Linear(width, query_dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context,
                                     const torch::Tensor& key_mask) {
    const auto& ctx = context.defined() ? context : x;
    auto q = to_q(x);
    auto k = to_k(ctx);
    auto v = to_v(ctx);
    const auto b = x.size(0);
    const auto n = x.size(1);
    const auto m = ctx.size(1);
    const auto head_dim = q.size(-1) / heads_;
    auto split = [&](const torch::Tensor& t, std::int64_t len) {
        return t.view({b, len, heads_, head_dim}).transpose(1, 2);  // (B, H, len, d)
    };
    q = split(q, n);
    k = split(k, m);
    v = split(v, m);
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    if (key_mask.defined()) {
        auto blocked = key_mask.logical_not().view({b, 1, 1, m});
        scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
    }
    auto out = torch::matmul(torch::softmax(scores, -1), v);
    return to_out(out.transpose(1, 2).reshape({b, n, heads_ * head_dim}));
}

GatedSelfAttentionImpl::GatedSelfAttentionImpl(std::int64_t width, int heads, int lora_rank) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    self_attn = register_module("self_attn", Attention(width, width, width, heads, lora_rank));
    gate_norm = register_module("gate_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    gate_attn = register_module("gate_attn", Attention(width, width, width, heads, 0));
    gate_alpha = register_parameter("gate_alpha", torch::zeros({1}));
}

torch::Tensor GatedSelfAttentionImpl::forward(const torch::Tensor& f_in, const torch::Tensor& g,
                                              const torch::Tensor& g_mask) {
    auto f = f_in + self_attn(norm(f_in));
    const auto n = f.size(1);
    torch::Tensor joint = f;
    torch::Tensor mask;
    if (g.defined() && g.size(1) > 0) {
        joint = torch::cat({f, g.to(f.dtype())}, 1);
        if (g_mask.defined()) {
            mask = torch::cat({torch::ones({f.size(0), n}, g_mask.options()), g_mask}, 1);
        }
    }
    auto y = gate_attn(gate_norm(joint), torch::Tensor(), mask).narrow(1, 0, n);
    return f + torch::tanh(gate_alpha) * y;
}

TransformerBlockImpl::TransformerBlockImpl(std::int64_t channels, std::int64_t width, int heads,
                                           std::int64_t context_dim, int lora_rank) {
    norm = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, channels).eps(1e-6)));
    proj_in = register_module("proj_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, width, 1)));
    gsa = register_module("gsa", GatedSelfAttention(width, heads, lora_rank));
    cross_norm = register_module("cross_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    cross_attn = register_module("cross_attn", Attention(width, context_dim, width, heads, lora_rank));
    ff_norm = register_module("ff_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    ff1 = register_module("ff1", torch::nn::Linear(width, 4 * width));
    ff2 = register_module("ff2", torch::nn::Linear(4 * width, width));
    proj_out = register_module("proj_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, channels, 1)));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const BlockConditions& cond) {
    const auto b = x.size(0);
    const auto h = x.size(2);
    const auto w = x.size(3);
    auto t = proj_in(norm(x));
    const auto width = t.size(1);
    t = t.flatten(2).transpose(1, 2);  // (B, HW, width)
    t = gsa(t, cond.grounding, cond.grounding_mask);
    t = t + cross_attn(cross_norm(t), cond.context, cond.context_mask);
    t = t + ff2(F::gelu(ff1(ff_norm(t))));
    t = t.transpose(1, 2).reshape({b, width, h, w});
    return x + proj_out(t);
}

torch::Tensor fourier_embed(const torch::Tensor& box, int n_freq) {
    if (box.size(-1) != 4) throw ShapeError("box must have 4 coordinates");
    auto v = box.clamp(0.0, 1.0);
    auto freqs = torch::pow(2.0, torch::arange(n_freq, v.options())) * M_PI;  // (F)
    auto angles = v.unsqueeze(-1) * freqs;                                    // (..., 4, F)
    auto pairs = torch::stack({torch::sin(angles), torch::cos(angles)}, -1);  // (..., 4, F, 2)
    auto sizes = box.sizes().vec();
    sizes.back() = 8 * n_freq;
    return pairs.reshape(sizes);
}

GroundingNetImpl::GroundingNetImpl(std::int64_t text_dim, int n_freq, std::int64_t width) : n_freq_(n_freq) {
    const auto in = text_dim + 8 * n_freq;
    fc1 = register_module("fc1", torch::nn::Linear(in, 2 * width));
    fc2 = register_module("fc2", torch::nn::Linear(2 * width, width));
}

torch::Tensor GroundingNetImpl::forward(const torch::Tensor& phrase, const torch::Tensor& box) {
    auto x = torch::cat({phrase, fourier_embed(box.to(phrase.dtype()), n_freq_)}, -1);
    return fc2(F::silu(fc1(x)));
}

}  // namespace talecraft::ct2i
