#pragma once

#include <ATen/core/Generator.h>
#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "talecraft/ct2i/diffusion.hpp"
#include "talecraft/ct2i/model.hpp"

namespace talecraft::ct2i {

struct AdapterWeights {
    torch::Tensor a;  // (r, in)
    torch::Tensor b;  // (out, r)
};

/// A personalized character: its token, the token's embedding row and one
/// LoRA adapter per adapted projection. Owns its tensors.
struct CharacterBundle {
    std::string name;
    std::string token;       // e.g. "<sks>"
    std::string class_noun;  // e.g. "dog"
    int rank = 4;
    std::string config_hash;
    std::map<std::string, AdapterWeights> adapters;  // keyed by layer path
    torch::Tensor token_embedding;
    std::vector<std::string> reference_images;  // file names under refs/
    nlohmann::json training;                    // options snapshot

    /// "<token> <class noun>"
    std::string phrase() const { return token + " " + class_noun; }
};

/// adapters.bin: "TCAD", u32 version, u32 count, then per tensor: u32 name
/// length, name, u32 rank, u32 dims[rank], little-endian float32 data.
void write_tensor_file(const std::filesystem::path& path, const std::vector<std::pair<std::string, torch::Tensor>>& tensors);
std::vector<std::pair<std::string, torch::Tensor>> read_tensor_file(const std::filesystem::path& path);

/// Directory layout: meta.json, adapters.bin, refs/ (reference images are
/// copied by the caller).
void save_bundle(const CharacterBundle& bundle, const std::filesystem::path& dir);
CharacterBundle load_bundle(const std::filesystem::path& dir);

/// Installs a bundle's adapters and token into a model for the scope's lifetime.
/// On destruction the adapters are zeroed and the token released.
class AdapterScope {
public:
    AdapterScope(ControllableT2IImpl& model, const CharacterBundle& bundle);
    ~AdapterScope();
    AdapterScope(const AdapterScope&) = delete;
    AdapterScope& operator=(const AdapterScope&) = delete;

private:
    ControllableT2IImpl& model_;
    std::string token_;
};

/// Zeroes every adapter (B = 0) so the model behaves as the base model.
void clear_adapters(ControllableT2IImpl& model);

struct PersonalizationOptions {
    int steps = 200;
    double lr = 1e-4;
    int batch_size = 4;
    std::uint64_t seed = 0;
    double cond_dropout = 0.0;
};

/// Trains a fresh token embedding plus rank-r adapters on 5-9 character images,
/// mixing in regularization latents rendered for the bare class noun. Only the
/// adapter group changes; the base weights are verified unchanged.
/// Throws ValidationError for the wrong image count and RegistrationError when
/// the token is malformed or already taken by the model or `taken_tokens`.
CharacterBundle train_personalization(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                      const std::string& name, const std::string& token,
                                      const std::string& class_noun, const std::vector<torch::Tensor>& images,
                                      const std::vector<torch::Tensor>& regularization_latents,
                                      const PersonalizationOptions& options,
                                      const std::vector<std::string>& taken_tokens = {});

/// Base-model renders of "a <class noun>" used as the prior-preservation set.
std::vector<torch::Tensor> render_regularization_set(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                                     const std::string& class_noun, int count, std::uint64_t seed,
                                                     int ddim_steps, double guidance);

}  // namespace talecraft::ct2i
