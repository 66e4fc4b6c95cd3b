#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "talecraft/ct2i/codec.hpp"
#include "talecraft/ct2i/sketch.hpp"
#include "talecraft/ct2i/text_encoder.hpp"
#include "talecraft/ct2i/unet.hpp"
#include "talecraft/layout/layout.hpp"

namespace talecraft {
class Config;
}

namespace talecraft::ct2i {

struct CT2IOptions {
    std::int64_t image_size = 64;
    LatentMode latent = LatentMode::autoencoder;
    std::int64_t latent_channels = 4;
    std::int64_t channels0 = 32;
    std::int64_t channels1 = 64;
    std::int64_t attn_width = 64;
    int heads = 4;
    int lora_rank = 4;
    int n_freq = 8;
    int train_timesteps = 1000;
    TextEncoderOptions text;

    std::int64_t latent_size() const noexcept {
        return latent == LatentMode::identity ? image_size : image_size / 4;
    }
    static CT2IOptions from_config(const Config& config);
    /// Stable hash of the architecture; stored with weights and character bundles.
    std::string fingerprint() const;
};

struct GroundedPhrase {
    std::string phrase;
    layout::Box box;
};

/// One sample's conditioning before embedding.
struct ConditionSet {
    std::string prompt;
    std::vector<GroundedPhrase> grounding;
    torch::Tensor sketch;      // (1, S, S) canvas, or undefined
    double sketch_beta = 1.0;  // in [0, 2]; ignored without a sketch

    /// Empty prompt, no grounding, no sketch: the unconditional branch.
    static ConditionSet unconditional() { return {}; }
    void validate() const;
};

enum class ParamGroup { backbone, grounding, sketch, lora, inpaint, codec };
enum class TrainPhase { backbone, sketch, grounding, lora, all };

std::string to_string(ParamGroup group);
TrainPhase parse_train_phase(const std::string& name);
ParamGroup classify_parameter(const std::string& name);
bool phase_trains(TrainPhase phase, ParamGroup group);

/// Text encoder, grounding MLP, sketch encoder, UNet and latent codec.
class ControllableT2IImpl : public torch::nn::Module {
public:
    explicit ControllableT2IImpl(CT2IOptions options);

    /// Embeds a batch of condition sets for the denoiser.
    Conditions embed(const std::vector<ConditionSet>& conds);

    /// Grounding tokens for one set of phrases; (G, attn_width).
    torch::Tensor grounding_tokens(const std::vector<GroundedPhrase>& phrases);

    torch::Tensor predict_noise(const torch::Tensor& z, const torch::Tensor& t, const Conditions& cond) {
        return unet(z, t, cond);
    }

    /// Enables gradients only for parameters in `phase`; returns them.
    std::vector<torch::Tensor> set_trainable(TrainPhase phase);
    std::map<ParamGroup, std::uint64_t> group_checksums() const;

    void save(const std::filesystem::path& path);
    /// Throws ConfigError if the file does not exist or was written for a
    /// different architecture.
    void load(const std::filesystem::path& path);

    const CT2IOptions& options() const noexcept { return options_; }

    TextEncoder text_encoder{nullptr};
    GroundingNet grounding{nullptr};
    SketchEncoder sketch_encoder{nullptr};
    ControllableUNet unet{nullptr};
    LatentCodec codec{nullptr};

private:
    CT2IOptions options_;
};
TORCH_MODULE(ControllableT2I);

/// Every LoRA-adapted projection in the model, keyed by parameter path prefix.
std::map<std::string, LoRALinear> lora_layers(ControllableT2IImpl& model);

}  // namespace talecraft::ct2i
