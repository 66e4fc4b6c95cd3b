#include "talecraft/ct2i/unet.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::ct2i {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::GroupNorm group_norm(std::int64_t channels) {
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, channels).eps(1e-6));
}

void check_finite(const torch::Tensor& x, const char* stage) {
    if (!torch::isfinite(x).all().item<bool>()) {
        throw NumericalError("non-finite activations", std::string("unet.") + stage);
    }
}

torch::Tensor inject(const torch::Tensor& h, const Conditions& cond, std::size_t level) {
    if (cond.sketch.empty()) return h;
    const auto& fs = cond.sketch.at(level);
    auto beta = cond.sketch_beta.to(h.dtype()).view({-1, 1, 1, 1});
    return h + beta * fs.to(h.dtype());
}

}  // namespace

ResBlockImpl::ResBlockImpl(std::int64_t in, std::int64_t out, std::int64_t temb) {
    norm1 = register_module("norm1", group_norm(in));
    conv1 = register_module("conv1", conv3(in, out));
    time_proj = register_module("time_proj", torch::nn::Linear(temb, out));
    norm2 = register_module("norm2", group_norm(out));
    conv2 = register_module("conv2", conv3(out, out));
    if (in != out) {
        skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1(F::silu(norm1(x)));
    h = h + time_proj(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(F::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim, torch::Dtype dtype) {
    const auto half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::TensorOptions(dtype)) /
                            static_cast<double>(half));
    auto args = t.to(dtype).unsqueeze(-1) * freqs.unsqueeze(0);
    return torch::cat({torch::cos(args), torch::sin(args)}, -1);
}

ControllableUNetImpl::ControllableUNetImpl(UNetOptions o) : options_(o) {
    const auto c0 = o.channels0;
    const auto c1 = o.channels1;
    const auto temb = 4 * c0;
    auto block = [&](std::int64_t channels) {
        return TransformerBlock(channels, o.attn_width, o.heads, o.context_dim, o.lora_rank);
    };
    conv_in = register_module("conv_in", conv3(o.latent_channels, c0));
    inpaint_conv_in = register_module("inpaint_conv_in", conv3(2 * o.latent_channels + 1, c0));
    time1 = register_module("time1", torch::nn::Linear(c0, temb));
    time2 = register_module("time2", torch::nn::Linear(temb, temb));
    down0_res = register_module("down0_res", ResBlock(c0, c0, temb));
    down0_attn = register_module("down0_attn", block(c0));
    downsample = register_module("downsample", conv3(c0, c0, 2));
    down1_res = register_module("down1_res", ResBlock(c0, c1, temb));
    down1_attn = register_module("down1_attn", block(c1));
    mid_res1 = register_module("mid_res1", ResBlock(c1, c1, temb));
    mid_attn = register_module("mid_attn", block(c1));
    mid_res2 = register_module("mid_res2", ResBlock(c1, c1, temb));
    up1_res = register_module("up1_res", ResBlock(2 * c1, c1, temb));
    up1_attn = register_module("up1_attn", block(c1));
    upsample = register_module("upsample", conv3(c1, c1));
    up0_res = register_module("up0_res", ResBlock(c1 + c0, c0, temb));
    up0_attn = register_module("up0_attn", block(c0));
    out_norm = register_module("out_norm", group_norm(c0));
    conv_out = register_module("conv_out", conv3(c0, o.latent_channels));
    init_inpaint_from_base();
}

void ControllableUNetImpl::init_inpaint_from_base() {
    torch::NoGradGuard no_grad;
    inpaint_conv_in->weight.zero_();
    inpaint_conv_in->weight.narrow(1, 0, options_.latent_channels).copy_(conv_in->weight);
    inpaint_conv_in->bias.copy_(conv_in->bias);
}

torch::Tensor ControllableUNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const Conditions& cond) {
    const auto in_channels = x.size(1);
    torch::Tensor h;
    if (in_channels == options_.latent_channels) {
        h = conv_in(x);
    } else if (in_channels == 2 * options_.latent_channels + 1) {
        h = inpaint_conv_in(x);
    } else {
        throw ShapeError("denoiser input must have " + std::to_string(options_.latent_channels) + " or " +
                         std::to_string(2 * options_.latent_channels + 1) + " channels, got " +
                         std::to_string(in_channels));
    }
    if (!cond.sketch.empty() && !cond.sketch_beta.defined()) {
        throw InvalidRequestError("sketch features need a strength per sample");
    }
    auto emb = time2(F::silu(time1(timestep_embedding(t, options_.channels0, x.scalar_type()))));
    const auto bc = cond.block();

    h = inject(down0_res(h, emb), cond, 0);
    h = down0_attn(h, bc);
    check_finite(h, "down0");
    auto skip0 = h;
    h = inject(down1_res(downsample(h), emb), cond, 1);
    h = down1_attn(h, bc);
    check_finite(h, "down1");
    auto skip1 = h;
    h = mid_res2(mid_attn(mid_res1(h, emb), bc), emb);
    check_finite(h, "mid");
    h = up1_attn(up1_res(torch::cat({h, skip1}, 1), emb), bc);
    h = upsample(F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    check_finite(h, "up1");
    h = up0_attn(up0_res(torch::cat({h, skip0}, 1), emb), bc);
    check_finite(h, "up0");
    return conv_out(F::silu(out_norm(h)));
}

}  // namespace talecraft::ct2i
