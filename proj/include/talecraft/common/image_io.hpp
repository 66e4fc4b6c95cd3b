#pragma once

#include <torch/types.h>

#include <filesystem>

namespace talecraft {

// Images are float tensors in [0,1], laid out (channels, height, width).

/// Reads any 8- or 16-bit image as RGB.
torch::Tensor load_rgb(const std::filesystem::path& path);

/// Reads a single-channel image (sketches); color inputs are converted to gray.
torch::Tensor load_gray(const std::filesystem::path& path);

/// Writes an 8-bit PNG; one or three channels.
void save_png(const std::filesystem::path& path, const torch::Tensor& image);

/// 16-bit single-channel depth in millimetres -> (H,W) metres.
torch::Tensor load_depth_mm(const std::filesystem::path& path);
void save_depth_mm(const std::filesystem::path& path, const torch::Tensor& depth_m);

/// Encodes as an in-memory PNG (HTTP uploads and asset hashing).
std::vector<unsigned char> encode_png(const torch::Tensor& image);
torch::Tensor decode_rgb(const std::vector<unsigned char>& bytes);

}  // namespace talecraft
