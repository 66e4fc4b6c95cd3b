#pragma once

#include <array>
#include <string>
#include <vector>

namespace talecraft::i2v {

/// Pinhole intrinsics in pixels; pixel (u, v) has its center at (u, v).
struct Intrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;

    /// Square pixels, principal point at the image center.
    static Intrinsics from_fov(int width, int height, double horizontal_fov_deg = 60.0);
    /// Throws InvalidRequestError for non-positive or non-finite focal lengths.
    void validate() const;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

/// Camera pose relative to the source view: orientation and center, both in
/// source camera coordinates. A source-frame point X maps to R^T (X - C).
struct Pose {
    Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 center{0, 0, 0};

    static Pose identity() { return {}; }
    Vec3 to_camera(const Vec3& x) const;
    bool is_identity() const;
};

/// Frobenius distance between two poses (rotation and center together).
double pose_distance(const Pose& a, const Pose& b);

/// Rotation about the camera's vertical axis.
Mat3 yaw(double radians);

enum class Preset { zoom_in, circle, swing };

Preset parse_preset(const std::string& name);
std::string to_string(Preset preset);
const std::vector<std::string>& preset_names();
/// Default motion amplitude per preset, as a fraction of the reference depth.
double default_amplitude(Preset preset);

struct CameraPath {
    Preset preset = Preset::zoom_in;
    std::vector<Pose> poses;
};

/// zoom-in moves the camera forward linearly; circle runs the center once
/// around a loop in the image plane and returns to the start; swing oscillates
/// sideways with a slight counter-yaw. Distances scale with `reference_depth`.
/// Throws InvalidRequestError for frames < 1 and ConfigError for unknown names.
CameraPath path_preset(Preset preset, int frames, double amplitude, double reference_depth = 1.0);
CameraPath path_preset(const std::string& name, int frames, double amplitude, double reference_depth = 1.0);

}  // namespace talecraft::i2v
