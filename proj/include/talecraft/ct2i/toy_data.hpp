#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "talecraft/layout/layout.hpp"

namespace talecraft::ct2i {

using Rgb = std::array<std::uint8_t, 3>;

/// A drawable object class: its prompt noun and its Objects365 category name.
struct ToyCategory {
    std::string noun;
    std::string category;
    Rgb color;
};

const std::vector<ToyCategory>& toy_categories();
const ToyCategory& toy_category(const std::string& noun);
const std::vector<std::string>& toy_backgrounds();

struct ToyObject {
    std::string noun;
    layout::Box box;
    std::optional<Rgb> color;  // overrides the category color (character variants)
};

struct ToyScene {
    std::string prompt;
    std::string background;
    layout::SceneLayout layout;
    torch::Tensor image;                  // (3, S, S) in [0,1]
    std::vector<torch::Tensor> sketches;  // per object: outline cropped to its box, (1, h, w)
};

struct ToySceneOptions {
    int image_size = 64;
    int min_objects = 1;
    int max_objects = 2;
};

/// Draws the objects, in order, over a two-tone background.
ToyScene render_toy_scene(const std::vector<ToyObject>& objects, const std::string& background, int image_size);

/// Random scene: distinct nouns, non-overlapping halves for two objects.
ToyScene make_toy_scene(std::uint64_t seed, const ToySceneOptions& options = {});
std::vector<ToyScene> make_toy_dataset(int count, std::uint64_t seed, const ToySceneOptions& options = {});

/// "a dog and a cat in a forest"
std::string toy_prompt(const std::vector<ToyObject>& objects, const std::string& background);

/// Several views of one recognisable character: a fixed color, random
/// placement and background.
std::vector<torch::Tensor> make_character_images(const std::string& noun, const Rgb& color, int count,
                                                 std::uint64_t seed, int image_size);

}  // namespace talecraft::ct2i
