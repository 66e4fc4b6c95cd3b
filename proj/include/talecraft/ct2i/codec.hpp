#pragma once

#include <torch/torch.h>

namespace talecraft::ct2i {

enum class LatentMode { autoencoder, identity };

LatentMode parse_latent_mode(const std::string& name);

/// Image <-> latent map. In autoencoder mode a small convolutional autoencoder
/// downsamples 4x into 4 channels; in identity mode the latent is the image
/// rescaled to [-1, 1] plus a zero fourth channel.
class LatentCodecImpl : public torch::nn::Module {
public:
    LatentCodecImpl(LatentMode mode, std::int64_t image_size, std::int64_t latent_channels = 4);

    /// images (B, 3, H, W) in [0,1] -> latents (B, 4, h, w), scaled to unit variance.
    torch::Tensor encode(const torch::Tensor& images);
    /// latents -> images in [0,1].
    torch::Tensor decode(const torch::Tensor& latents);

    /// Unscaled autoencoder reconstruction, for training the codec.
    torch::Tensor reconstruct(const torch::Tensor& images);

    LatentMode mode() const noexcept { return mode_; }
    std::int64_t latent_size() const noexcept { return latent_size_; }
    std::int64_t image_size() const noexcept { return image_size_; }
    double scale() const { return latent_scale.item<double>(); }
    void set_scale(double s);

    torch::nn::Sequential encoder{nullptr}, decoder{nullptr};
    torch::Tensor latent_scale;

private:
    torch::Tensor encode_raw(const torch::Tensor& images);
    torch::Tensor decode_raw(const torch::Tensor& latents);

    LatentMode mode_;
    std::int64_t image_size_;
    std::int64_t latent_size_;
    std::int64_t latent_channels_;
};
TORCH_MODULE(LatentCodec);

}  // namespace talecraft::ct2i
