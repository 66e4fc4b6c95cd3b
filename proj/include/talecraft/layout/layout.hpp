#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace talecraft::layout {

/// Shared token vocabulary for flattened layouts. Index ranges, in order:
/// geometry bins [0, M), categories [M, M+C), PAD, MASK.
struct LayoutVocab {
    int m_bins = 64;
    int n_categories = 365;

    int size() const noexcept { return m_bins + n_categories + 2; }
    std::int64_t pad() const noexcept { return m_bins + n_categories; }
    std::int64_t mask() const noexcept { return m_bins + n_categories + 1; }

    /// bin in 1..M
    std::int64_t geometry_token(int bin) const;
    /// category in 1..C
    std::int64_t category_token(int category) const;

    bool is_geometry(std::int64_t token) const noexcept { return token >= 0 && token < m_bins; }
    bool is_category(std::int64_t token) const noexcept { return token >= m_bins && token < m_bins + n_categories; }

    int bin_of(std::int64_t token) const noexcept { return static_cast<int>(token) + 1; }
    int category_of(std::int64_t token) const noexcept { return static_cast<int>(token) - m_bins + 1; }
};

inline constexpr int kFieldsPerObject = 5;  // x, y, w, h, category

/// Normalized box; (x, y) is the center.
struct Box {
    double x = 0, y = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

/// Box quantized to bins 1..M per coordinate.
struct QuantizedBox {
    int x = 1, y = 1, w = 1, h = 1;
    bool operator==(const QuantizedBox&) const = default;
};

struct LayoutObject {
    QuantizedBox box;
    int category = 1;
    std::optional<std::string> phrase;
    bool operator==(const LayoutObject&) const = default;
};

struct Layout {
    std::vector<LayoutObject> objects;
    bool operator==(const Layout&) const = default;
};

struct TokenSequence {
    std::vector<std::int64_t> tokens;
    bool operator==(const TokenSequence&) const = default;
};

/// min(floor(v*M), M-1) + 1. Values outside [0,1] are clamped with a warning.
int quantize(double v, int m_bins);
/// Center of bin b: (b - 0.5) / M.
double dequantize(int bin, int m_bins);

QuantizedBox quantize_box(const Box& box, int m_bins);
Box dequantize_box(const QuantizedBox& box, int m_bins);

/// Layout -> x,y,w,h,l per object, PAD-filled to 5*n_max. Throws CapacityError.
TokenSequence flatten(const Layout& layout, const LayoutVocab& vocab, int n_max);

/// Inverse of flatten. Throws DecodeError naming the first bad position.
Layout unflatten(const TokenSequence& seq, const LayoutVocab& vocab);

// ---------------------------------------------------------------------------
// Scene layouts: what users edit and what is stored on disk. Boxes stay in
// normalized floats; quantization only happens inside text-to-layout.

struct SceneObject {
    Box bbox;
    std::string category;
    std::string phrase;
    bool operator==(const SceneObject&) const = default;
};

struct SceneLayout {
    std::vector<SceneObject> objects;
    int canvas_w = 512;
    int canvas_h = 512;
    bool operator==(const SceneLayout&) const = default;
};

/// Issues found in a scene layout (boxes leaving the canvas, empty boxes...).
/// Empty means valid.
std::vector<std::string> validate(const SceneLayout& layout);

/// Dequantizes and clamps every box into the unit canvas. `category_names[c-1]`
/// names category c; phrases default to the lower-cased category name.
SceneLayout to_scene_layout(const Layout& layout, int m_bins, const std::vector<std::string>& category_names);

/// Unknown category names map through `category_id`, which returns 0 if unknown.
Layout from_scene_layout(const SceneLayout& scene, int m_bins,
                         const std::vector<std::string>& category_names);

nlohmann::json to_json(const SceneLayout& layout);
SceneLayout scene_layout_from_json(const nlohmann::json& j);

}  // namespace talecraft::layout
