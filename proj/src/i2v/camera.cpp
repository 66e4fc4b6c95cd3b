#include "talecraft/i2v/camera.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::i2v {

Intrinsics Intrinsics::from_fov(int width, int height, double horizontal_fov_deg) {
    const double f = 0.5 * width / std::tan(0.5 * horizontal_fov_deg * M_PI / 180.0);
    return {f, f, 0.5 * (width - 1), 0.5 * (height - 1)};
}

void Intrinsics::validate() const {
    if (!(std::isfinite(fx) && std::isfinite(fy) && fx > 0 && fy > 0 && std::isfinite(cx) && std::isfinite(cy))) {
        throw InvalidRequestError("degenerate camera intrinsics");
    }
}

Vec3 Pose::to_camera(const Vec3& x) const {
    const Vec3 d{x[0] - center[0], x[1] - center[1], x[2] - center[2]};
    const auto& r = rotation;
    return {r[0] * d[0] + r[3] * d[1] + r[6] * d[2], r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
            r[2] * d[0] + r[5] * d[1] + r[8] * d[2]};
}

bool Pose::is_identity() const { return pose_distance(*this, Pose{}) == 0.0; }

double pose_distance(const Pose& a, const Pose& b) {
    double s = 0;
    for (int i = 0; i < 9; ++i) s += (a.rotation[i] - b.rotation[i]) * (a.rotation[i] - b.rotation[i]);
    for (int i = 0; i < 3; ++i) s += (a.center[i] - b.center[i]) * (a.center[i] - b.center[i]);
    return std::sqrt(s);
}

Mat3 yaw(double r) {
    const double c = std::cos(r), s = std::sin(r);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}

Preset parse_preset(const std::string& name) {
    if (name == "zoom-in" || name == "zoom_in") return Preset::zoom_in;
    if (name == "circle") return Preset::circle;
    if (name == "swing") return Preset::swing;
    throw ConfigError("unknown camera preset '" + name + "' (expected zoom-in, circle or swing)");
}

std::string to_string(Preset preset) {
    switch (preset) {
        case Preset::zoom_in: return "zoom-in";
        case Preset::circle: return "circle";
        case Preset::swing: return "swing";
    }
    return "unknown";
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"zoom-in", "circle", "swing"};
    return names;
}

double default_amplitude(Preset preset) {
    switch (preset) {
        case Preset::zoom_in: return 0.15;
        case Preset::circle: return 0.02;
        case Preset::swing: return 0.03;
    }
    return 0.0;
}

CameraPath path_preset(Preset preset, int frames, double amplitude, double reference_depth) {
    if (frames < 1) throw InvalidRequestError("a camera path needs at least one frame");
    if (!(reference_depth > 0) || !std::isfinite(amplitude)) {
        throw InvalidRequestError("camera path scale must be positive and finite");
    }
    CameraPath path{preset, {}};
    const double a = amplitude * reference_depth;
    for (int f = 0; f < frames; ++f) {
        const double s = frames > 1 ? static_cast<double>(f) / (frames - 1) : 0.0;
        Pose p;
        switch (preset) {
            case Preset::zoom_in:
                p.center = {0, 0, a * s};
                break;
            case Preset::circle: {
                const double theta = 2 * M_PI * s;
                p.center = {a * std::sin(theta), a * (1 - std::cos(theta)) * 0.5, 0};
                break;
            }
            case Preset::swing: {
                const double x = a * std::sin(2 * M_PI * s);
                p.center = {x, 0, 0};
                // Turn slightly back toward the scene center.
                p.rotation = yaw(-std::atan2(x, reference_depth) * 0.5);
                break;
            }
        }
        if (f == 0) p = Pose::identity();
        path.poses.push_back(p);
    }
    return path;
}

CameraPath path_preset(const std::string& name, int frames, double amplitude, double reference_depth) {
    return path_preset(parse_preset(name), frames, amplitude, reference_depth);
}

}  // namespace talecraft::i2v
