#include "talecraft/ct2i/sketch.hpp"

#include <algorithm>
#include <cmath>

#include "talecraft/common/error.hpp"
#include "talecraft/ct2i/checksum.hpp"

namespace talecraft::ct2i {

namespace F = torch::nn::functional;

PixelRect box_to_pixels(const layout::Box& box, std::int64_t width, std::int64_t height) {
    auto px = [](double v, std::int64_t n) {
        return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(v * static_cast<double>(n))), 0, n);
    };
    PixelRect r{px(box.x - box.w / 2, width), px(box.y - box.h / 2, height), px(box.x + box.w / 2, width),
                px(box.y + box.h / 2, height)};
    if (!(box.w > 0) || !(box.h > 0) || r.x1 <= r.x0 || r.y1 <= r.y0) {
        throw InvalidBoxError("box covers no pixel: center (" + std::to_string(box.x) + ", " + std::to_string(box.y) +
                              "), size " + std::to_string(box.w) + " x " + std::to_string(box.h));
    }
    return r;
}

torch::Tensor compose_sketch_canvas(const torch::Tensor& sketch, const layout::Box& box, std::int64_t canvas_size) {
    if (sketch.dim() != 3 || sketch.size(0) != 1) {
        throw ShapeError("sketch must be (1, H, W)");
    }
    const auto r = box_to_pixels(box, canvas_size, canvas_size);
    const auto h = r.y1 - r.y0;
    const auto w = r.x1 - r.x0;
    const bool shrinking = h < sketch.size(1) || w < sketch.size(2);
    auto resized = F::interpolate(sketch.unsqueeze(0).to(torch::kFloat32),
                                  F::InterpolateFuncOptions()
                                      .size(std::vector<std::int64_t>{h, w})
                                      .mode(torch::kBilinear)
                                      .align_corners(false)
                                      .antialias(shrinking))
                       .squeeze(0)
                       .clamp(0.0, 1.0);
    auto canvas = torch::zeros({1, canvas_size, canvas_size});
    canvas.narrow(1, r.y0, h).narrow(2, r.x0, w).copy_(resized);
    return canvas;
}

torch::Tensor merge_sketch_canvases(const std::vector<torch::Tensor>& canvases, std::int64_t canvas_size) {
    auto out = torch::zeros({1, canvas_size, canvas_size});
    for (const auto& c : canvases) out = torch::maximum(out, c);
    return out;
}

SketchResBlockImpl::SketchResBlockImpl(std::int64_t channels) {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor SketchResBlockImpl::forward(const torch::Tensor& x) {
    return x + conv2(F::silu(conv1(F::silu(x))));
}

SketchEncoderImpl::SketchEncoderImpl(std::int64_t image_size, std::int64_t latent_size, std::int64_t channels0,
                                     std::int64_t channels1)
    : image_size_(image_size), factor_(image_size / latent_size) {
    if (factor_ < 1 || factor_ * latent_size != image_size) {
        throw ConfigError("image size must be a multiple of the latent size");
    }
    conv_in = register_module(
        "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(factor_ * factor_, channels0, 3).padding(1)));
    block0 = register_module("block0", SketchResBlock(channels0));
    block1 = register_module("block1", SketchResBlock(channels0));
    down = register_module("down",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(channels0, channels1, 3).stride(2).padding(1)));
    block2 = register_module("block2", SketchResBlock(channels1));
    block3 = register_module("block3", SketchResBlock(channels1));
}

std::vector<torch::Tensor> SketchEncoderImpl::forward(const torch::Tensor& canvas) {
    auto x = factor_ > 1 ? F::pixel_unshuffle(canvas, F::PixelUnshuffleFuncOptions(factor_)) : canvas;
    x = conv_in(x.to(conv_in->weight.dtype()));
    auto f0 = block1(block0(x));
    auto f1 = block3(block2(down(f0)));
    return {f0, f1};
}

const std::vector<torch::Tensor>& SketchEncoderImpl::blank_features() {
    const auto key = parameters_checksum(*this);
    if (blank_cache_.empty() || key != blank_key_) {
        torch::NoGradGuard no_grad;
        auto blank = torch::zeros({1, 1, image_size_, image_size_}, conv_in->weight.options());
        blank_cache_ = forward(blank);
        blank_key_ = key;
    }
    return blank_cache_;
}

}  // namespace talecraft::ct2i
