#include "talecraft/layout/denoiser.hpp"

#include "talecraft/common/error.hpp"

namespace talecraft::layout {

EncoderBlockImpl::EncoderBlockImpl(int width, int heads, int ff_mult) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    attn_ = register_module("attn", torch::nn::MultiheadAttention(torch::nn::MultiheadAttentionOptions(width, heads)));
    ff1_ = register_module("ff1", torch::nn::Linear(width, width * ff_mult));
    ff2_ = register_module("ff2", torch::nn::Linear(width * ff_mult, width));
}

torch::Tensor EncoderBlockImpl::forward(torch::Tensor x) {
    // x: (L, B, E)
    auto h = norm1_(x);
    x = x + std::get<0>(attn_(h, h, h));
    return x + ff2_(torch::gelu(ff1_(norm2_(x))));
}

LayoutDenoiserImpl::LayoutDenoiserImpl(LayoutDenoiserOptions options) : options_(options) {
    const auto d = options_.vocab.size();
    const auto len = sequence_length();
    token_embed_ = register_module("token_embed", torch::nn::Embedding(d, options_.width));
    position_embed_ = register_module("position_embed", torch::nn::Embedding(len, options_.width));
    time_embed_ = register_module("time_embed", torch::nn::Embedding(options_.timesteps + 1, options_.width));
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < options_.layers; ++i) {
        blocks_->push_back(EncoderBlock(options_.width, options_.heads, options_.ff_mult));
    }
    out_norm_ = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({options_.width})));
    head_ = register_module("head", torch::nn::Linear(options_.width, d));

    auto legal = torch::zeros({len, d}, torch::kBool);
    const auto m = options_.vocab.m_bins;
    const auto c = options_.vocab.n_categories;
    for (int p = 0; p < len; ++p) {
        if (p % kFieldsPerObject < 4) {
            legal.index_put_({p, torch::indexing::Slice(0, m)}, true);
        } else {
            legal.index_put_({p, torch::indexing::Slice(m, m + c)}, true);
        }
    }
    legal_ = register_buffer("legal", legal);
}

torch::Tensor LayoutDenoiserImpl::forward(const torch::Tensor& tokens, const torch::Tensor& t) {
    if (tokens.dim() != 2 || tokens.size(1) != sequence_length()) {
        throw ShapeError("layout denoiser expects (B, " + std::to_string(sequence_length()) + ") tokens");
    }
    auto positions = torch::arange(tokens.size(1), torch::kLong);
    auto x = token_embed_(tokens) + position_embed_(positions).unsqueeze(0) +
             time_embed_(t.to(torch::kLong)).unsqueeze(1);
    x = x.transpose(0, 1);  // (L, B, E)
    for (const auto& block : *blocks_) {
        x = block->as<EncoderBlock>()->forward(x);
    }
    return head_(out_norm_(x.transpose(0, 1)));
}

torch::Tensor LayoutDenoiserImpl::probs(const torch::Tensor& tokens, const torch::Tensor& t) {
    auto logits = forward(tokens, t);
    auto neg_inf = -std::numeric_limits<float>::infinity();
    auto masked = logits.masked_fill(~legal_.unsqueeze(0), neg_inf);
    auto p = torch::softmax(masked.to(torch::kFloat64), -1);
    auto pad = options_.vocab.pad();
    auto is_pad = (tokens == pad).unsqueeze(-1);
    auto pad_one_hot = torch::zeros_like(p);
    pad_one_hot.index_put_({torch::indexing::Ellipsis, pad}, 1.0);
    return torch::where(is_pad, pad_one_hot, p);
}

}  // namespace talecraft::layout
