#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "talecraft/ct2i/attention.hpp"

namespace talecraft::ct2i {

/// Everything the denoiser is conditioned on, already embedded.
struct Conditions {
    torch::Tensor context;         // (B, L, ctx) prompt features
    torch::Tensor context_mask;    // (B, L) bool
    torch::Tensor grounding;       // (B, G, width) or undefined
    torch::Tensor grounding_mask;  // (B, G) bool
    std::vector<torch::Tensor> sketch;  // one map per level, or empty
    torch::Tensor sketch_beta;          // (B); required when sketch is set

    BlockConditions block() const { return {context, context_mask, grounding, grounding_mask}; }
};

struct UNetOptions {
    std::int64_t latent_channels = 4;
    std::int64_t channels0 = 32;
    std::int64_t channels1 = 64;
    std::int64_t attn_width = 64;
    int heads = 4;
    std::int64_t context_dim = 64;
    int lora_rank = 4;
};

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(std::int64_t in, std::int64_t out, std::int64_t temb);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// sin/cos timestep features of width `dim`, (B) -> (B, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim, torch::Dtype dtype);

/// Two-level UNet with a spatial transformer at every level. The 4-channel
/// input path is the text-to-image denoiser; the 9-channel path (noisy latent,
/// masked original, mask) is the inpainting variant and differs only in its
/// input convolution.
class ControllableUNetImpl : public torch::nn::Module {
public:
    explicit ControllableUNetImpl(UNetOptions options);

    /// x (B, 4 or 9, h, w); t (B) int64 -> predicted noise (B, 4, h, w).
    /// Throws NumericalError naming the first stage with non-finite output.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const Conditions& cond);

    /// Copies the 4-channel input weights into the inpainting input conv and
    /// zeroes the extra channels.
    void init_inpaint_from_base();

    const UNetOptions& options() const noexcept { return options_; }

    torch::nn::Conv2d conv_in{nullptr}, inpaint_conv_in{nullptr};
    torch::nn::Linear time1{nullptr}, time2{nullptr};
    ResBlock down0_res{nullptr}, down1_res{nullptr}, mid_res1{nullptr}, mid_res2{nullptr}, up1_res{nullptr},
        up0_res{nullptr};
    TransformerBlock down0_attn{nullptr}, down1_attn{nullptr}, mid_attn{nullptr}, up1_attn{nullptr},
        up0_attn{nullptr};
    torch::nn::Conv2d downsample{nullptr}, upsample{nullptr};
    torch::nn::GroupNorm out_norm{nullptr};
    torch::nn::Conv2d conv_out{nullptr};

private:
    UNetOptions options_;
};
TORCH_MODULE(ControllableUNet);

}  // namespace talecraft::ct2i
