#pragma once

#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "talecraft/i2v/camera.hpp"

namespace talecraft::i2v {

enum class DepthSource { supplied, heuristic };

struct DepthMap {
    torch::Tensor depth;  // (H, W) float64, metres
    DepthSource source = DepthSource::supplied;

    /// Throws ValidationError unless every value is finite and positive.
    void validate() const;
    double median() const;
};

/// Ground-plane guess: far at the top row, near at the bottom row.
DepthMap heuristic_depth(int width, int height, double near_depth = 1.0, double far_depth = 4.0);

/// Reads a 16-bit depth image in millimetres.
DepthMap load_depth(const std::filesystem::path& path);

struct WarpResult {
    torch::Tensor frame;  // (3, H, W) float32, holes zeroed
    torch::Tensor holes;  // (H, W) bool, true where nothing landed
};

/// Forward-splats every pixel (2x2 sub-samples) into the new view. Where
/// several surfaces land on one pixel the nearest wins; samples within a
/// small relative depth band of the nearest are averaged.
WarpResult warp(const torch::Tensor& image, const DepthMap& depth, const Pose& pose, const Intrinsics& intrinsics);

/// Fills holes by repeatedly averaging each hole's already-known 4-neighbours.
/// Known pixels are never modified.
torch::Tensor fill_holes(const torch::Tensor& frame, const torch::Tensor& holes);

struct Clip {
    std::string preset;
    std::vector<torch::Tensor> frames;   // (3, H, W) float32
    std::vector<double> hole_fraction;   // before filling, per frame
};

/// One warped and hole-filled frame per pose; frame 0 is the input itself.
Clip animate(const torch::Tensor& image, const DepthMap& depth, const CameraPath& path,
             const Intrinsics& intrinsics);

/// Writes frame_0000.png ... and manifest.json into `dir`; returns the manifest.
nlohmann::json write_clip(const Clip& clip, const std::filesystem::path& dir, int fps = 24);

/// Shell command that muxes a written clip directory into clip.mp4.
std::string mux_command(const std::filesystem::path& dir, int fps = 24);

}  // namespace talecraft::i2v
