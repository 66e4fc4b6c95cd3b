#pragma once

#include <torch/torch.h>

#include <vector>

#include "talecraft/layout/layout.hpp"

namespace talecraft::ct2i {

/// Pixel rectangle [x0, x1) x [y0, y1) covered by a normalized center box on an
/// S x S canvas. Throws InvalidBoxError if it covers no pixel.
struct PixelRect {
    std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};
PixelRect box_to_pixels(const layout::Box& box, std::int64_t width, std::int64_t height);

/// Resizes `sketch` (1, h, w) in [0,1] to the box extent and places it on a
/// blank (zero) canvas of size (1, S, S).
torch::Tensor compose_sketch_canvas(const torch::Tensor& sketch, const layout::Box& box, std::int64_t canvas_size);

/// Pixel-wise maximum of several canvases; a blank canvas when `canvases` is empty.
torch::Tensor merge_sketch_canvases(const std::vector<torch::Tensor>& canvases, std::int64_t canvas_size);

class SketchResBlockImpl : public torch::nn::Module {
public:
    explicit SketchResBlockImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(SketchResBlock);

/// Pixel-unshuffle to latent resolution, then four residual blocks: two at the
/// latent resolution and two after a stride-2 downsample. Produces one feature
/// map per UNet level, matching the UNet channel widths.
class SketchEncoderImpl : public torch::nn::Module {
public:
    SketchEncoderImpl(std::int64_t image_size, std::int64_t latent_size, std::int64_t channels0,
                      std::int64_t channels1);

    /// canvas (B, 1, S, S) -> {(B, c0, h, w), (B, c1, h/2, w/2)}
    std::vector<torch::Tensor> forward(const torch::Tensor& canvas);

    /// Features of a blank canvas, cached until the weights change.
    const std::vector<torch::Tensor>& blank_features();

    torch::nn::Conv2d conv_in{nullptr}, down{nullptr};
    SketchResBlock block0{nullptr}, block1{nullptr}, block2{nullptr}, block3{nullptr};

private:
    std::int64_t image_size_;
    std::int64_t factor_;
    std::uint64_t blank_key_ = 0;
    std::vector<torch::Tensor> blank_cache_;
};
TORCH_MODULE(SketchEncoder);

}  // namespace talecraft::ct2i
