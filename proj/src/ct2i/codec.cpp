#include "talecraft/ct2i/codec.hpp"

#include "talecraft/common/error.hpp"

namespace talecraft::ct2i {

namespace nn = torch::nn;

LatentMode parse_latent_mode(const std::string& name) {
    if (name == "autoencoder") return LatentMode::autoencoder;
    if (name == "identity") return LatentMode::identity;
    throw ConfigError("unknown latent mode: " + name);
}

LatentCodecImpl::LatentCodecImpl(LatentMode mode, std::int64_t image_size, std::int64_t latent_channels)
    : mode_(mode), image_size_(image_size), latent_channels_(latent_channels) {
    latent_scale = register_buffer("latent_scale", torch::ones({1}));
    if (mode == LatentMode::identity) {
        if (latent_channels < 3) throw ConfigError("identity latents need at least 3 channels");
        latent_size_ = image_size;
        return;
    }
    if (image_size % 4 != 0) throw ConfigError("image size must be divisible by 4");
    latent_size_ = image_size / 4;
    auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1) {
        return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
    };
    encoder = register_module("encoder", nn::Sequential(conv(3, 32, 3), nn::SiLU(), conv(32, 64, 3, 2), nn::SiLU(),
                                                         conv(64, 64, 3, 2), nn::SiLU(), conv(64, latent_channels, 1)));
    decoder = register_module(
        "decoder",
        nn::Sequential(conv(latent_channels, 64, 3), nn::SiLU(),
                       nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)),
                       conv(64, 64, 3), nn::SiLU(),
                       nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)),
                       conv(64, 32, 3), nn::SiLU(), conv(32, 3, 3)));
}

torch::Tensor LatentCodecImpl::encode_raw(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_size_ || images.size(3) != image_size_) {
        throw ShapeError("codec expects (B, 3, " + std::to_string(image_size_) + ", " + std::to_string(image_size_) +
                         ") images");
    }
    if (mode_ == LatentMode::identity) {
        auto rgb = images * 2.0 - 1.0;
        auto rest = torch::zeros({images.size(0), latent_channels_ - 3, image_size_, image_size_}, images.options());
        return torch::cat({rgb, rest}, 1);
    }
    return encoder->forward(images * 2.0 - 1.0);
}

torch::Tensor LatentCodecImpl::decode_raw(const torch::Tensor& latents) {
    if (mode_ == LatentMode::identity) {
        return (latents.narrow(1, 0, 3) + 1.0) / 2.0;
    }
    return (decoder->forward(latents) + 1.0) / 2.0;
}

torch::Tensor LatentCodecImpl::encode(const torch::Tensor& images) {
    return encode_raw(images) * latent_scale.to(images.dtype());
}

torch::Tensor LatentCodecImpl::decode(const torch::Tensor& latents) {
    return decode_raw(latents / latent_scale.to(latents.dtype())).clamp(0.0, 1.0);
}

torch::Tensor LatentCodecImpl::reconstruct(const torch::Tensor& images) { return decode_raw(encode_raw(images)); }

void LatentCodecImpl::set_scale(double s) {
    torch::NoGradGuard no_grad;
    latent_scale.fill_(s);
}

}  // namespace talecraft::ct2i
