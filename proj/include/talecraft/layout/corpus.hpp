#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "talecraft/layout/layout.hpp"

namespace talecraft::layout {

/// Procedural layouts over a dozen everyday categories with class-specific
/// size and height priors. Every box lies fully inside the canvas.
std::vector<Layout> synthetic_corpus(std::size_t count, int m_bins, int max_objects, std::uint64_t seed);

/// Category ids the synthetic corpus draws from.
const std::vector<int>& synthetic_categories();

/// Reads a directory of per-image annotation files:
///   {"width": W, "height": H, "annotations": [{"category_id": c, "bbox": [left, top, w, h]}]}
/// with pixel boxes and 1-based Objects365 ids. Files are visited in sorted order;
/// at most `n_max` largest objects per image are kept.
std::vector<Layout> load_object365_subset(const std::filesystem::path& dir, int m_bins, int n_max);

}  // namespace talecraft::layout
