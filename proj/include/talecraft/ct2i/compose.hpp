#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <map>
#include <string>
#include <vector>

#include "talecraft/ct2i/character.hpp"
#include "talecraft/ct2i/diffusion.hpp"
#include "talecraft/layout/layout.hpp"

namespace talecraft::ct2i {

/// Removes every "<token>" from a prompt or phrase and tidies the spacing.
std::string strip_special_tokens(const std::string& text);

/// Places `token` directly before the first occurrence of `noun` in `prompt`
/// (matched word-wise, case-insensitive). If the noun does not occur, appends
/// ", <token> <noun>".
std::string inject_token(const std::string& prompt, const std::string& noun, const std::string& token);

/// Head noun of a box phrase: its last plain word ("big brown dog" -> "dog").
std::string head_noun(const std::string& phrase);

struct ComposeRequest {
    std::string prompt;
    layout::SceneLayout layout;
    /// Per-object sketch images (1, h, w) in [0,1]; undefined or missing = none.
    std::vector<torch::Tensor> sketches;
    double sketch_beta = 1.0;
    /// Object index -> character name. Passes run in layout order.
    std::map<std::size_t, std::string> characters;
    SampleOptions sample;
};

struct PassRecord {
    std::string character;  // empty for a plain generation
    std::string prompt;
    int object_index = -1;  // -1 for the full-image pass
    std::uint64_t seed = 0;
    int input_channels = 4;
};

struct ComposeResult {
    torch::Tensor image;   // (3, S, S) float32 in [0,1]
    torch::Tensor latent;  // (4, h, w)
    std::vector<PassRecord> passes;
    std::vector<torch::Tensor> pass_images;  // image after each pass
};

/// Generates a scene with any number of personalized characters. The first
/// pass renders the whole image with the first character's adapter and its
/// token injected into the prompt. Every further character's box is then
/// inpainted with that character's adapter, token-bearing box phrase and the
/// previous pass as the original; pixels outside the box are carried over.
/// Throws NotFoundError before sampling if an assigned character is missing.
ComposeResult iterative_compose(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                const ComposeRequest& request,
                                const std::map<std::string, CharacterBundle>& bundles,
                                const std::function<void(const PassRecord&)>& on_pass = {});

}  // namespace talecraft::ct2i
