#include "talecraft/i2v/animate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "talecraft/common/error.hpp"
#include "talecraft/common/image_io.hpp"

namespace talecraft::i2v {

namespace F = torch::nn::functional;

namespace {

constexpr double kDepthBand = 1e-3;
constexpr double kSubsample[2] = {-0.25, 0.25};

}  // namespace

void DepthMap::validate() const {
    if (!depth.defined() || depth.dim() != 2) throw ValidationError("depth map must be (H, W)", {"shape"});
    if (!torch::isfinite(depth).all().item<bool>()) throw ValidationError("depth map has non-finite values", {"finite"});
    if (!(depth > 0).all().item<bool>()) throw ValidationError("depth map has non-positive values", {"positive"});
}

double DepthMap::median() const { return depth.flatten().median().item<double>(); }

DepthMap heuristic_depth(int width, int height, double near_depth, double far_depth) {
    if (width < 1 || height < 1) throw InvalidRequestError("depth map size must be positive");
    auto rows = height > 1 ? torch::linspace(0.0, 1.0, height, torch::kFloat64) : torch::ones({1}, torch::kFloat64);
    auto d = far_depth + (near_depth - far_depth) * rows;
    return {d.view({height, 1}).expand({height, width}).contiguous(), DepthSource::heuristic};
}

DepthMap load_depth(const std::filesystem::path& path) {
    DepthMap m{load_depth_mm(path).to(torch::kFloat64), DepthSource::supplied};
    m.validate();
    return m;
}

WarpResult warp(const torch::Tensor& image, const DepthMap& depth, const Pose& pose, const Intrinsics& k) {
    k.validate();
    depth.validate();
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("image must be (3, H, W)");
    const auto h = image.size(1);
    const auto w = image.size(2);
    if (depth.depth.size(0) != h || depth.depth.size(1) != w) {
        throw ShapeError("depth map resolution does not match the image");
    }
    auto src = image.to(torch::kFloat32).contiguous();
    auto z_src = depth.depth.to(torch::kFloat64).contiguous();
    const float* px = src.data_ptr<float>();
    const double* zp = z_src.data_ptr<double>();
    const auto n = h * w;

    struct Sample {
        std::int64_t target;
        double z;
        std::int64_t source;
    };
    std::vector<Sample> samples;
    samples.reserve(static_cast<std::size_t>(4 * n));
    std::vector<double> z_min(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (std::int64_t v = 0; v < h; ++v) {
        for (std::int64_t u = 0; u < w; ++u) {
            const double z = zp[v * w + u];
            for (double dv : kSubsample) {
                for (double du : kSubsample) {
                    const Vec3 x{(static_cast<double>(u) + du - k.cx) / k.fx * z,
                                 (static_cast<double>(v) + dv - k.cy) / k.fy * z, z};
                    const auto c = pose.to_camera(x);
                    if (c[2] <= 1e-6) continue;
                    const double tu = std::floor(k.fx * c[0] / c[2] + k.cx + 0.5);
                    const double tv = std::floor(k.fy * c[1] / c[2] + k.cy + 0.5);
                    if (tu < 0 || tv < 0 || tu >= static_cast<double>(w) || tv >= static_cast<double>(h)) continue;
                    const auto target = static_cast<std::int64_t>(tv) * w + static_cast<std::int64_t>(tu);
                    samples.push_back({target, c[2], v * w + u});
                    z_min[static_cast<std::size_t>(target)] = std::min(z_min[static_cast<std::size_t>(target)], c[2]);
                }
            }
        }
    }

    std::vector<double> acc(static_cast<std::size_t>(3 * n), 0.0);
    std::vector<int> count(static_cast<std::size_t>(n), 0);
    for (const auto& s : samples) {
        const auto t = static_cast<std::size_t>(s.target);
        if (s.z > z_min[t] * (1 + kDepthBand)) continue;
        for (std::int64_t ch = 0; ch < 3; ++ch) acc[static_cast<std::size_t>(ch * n) + t] += px[ch * n + s.source];
        ++count[t];
    }

    auto frame = torch::zeros({3, h, w}, torch::kFloat32);
    auto holes = torch::zeros({h, w}, torch::kBool);
    float* fp = frame.data_ptr<float>();
    bool* hp = holes.data_ptr<bool>();
    for (std::int64_t i = 0; i < n; ++i) {
        const auto c = count[static_cast<std::size_t>(i)];
        if (c == 0) {
            hp[i] = true;
            continue;
        }
        for (std::int64_t ch = 0; ch < 3; ++ch) {
            fp[ch * n + i] = static_cast<float>(acc[static_cast<std::size_t>(ch * n + i)] / c);
        }
    }
    return {frame, holes};
}

torch::Tensor fill_holes(const torch::Tensor& frame, const torch::Tensor& holes) {
    if (holes.dim() != 2 || frame.dim() != 3 || frame.size(1) != holes.size(0) || frame.size(2) != holes.size(1)) {
        throw ShapeError("hole mask must match the frame resolution");
    }
    auto out = frame.to(torch::kFloat32).clone();
    auto known = holes.logical_not().to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
    if (known.sum().item<double>() == 0) return torch::zeros_like(out);
    auto cross = torch::tensor({0.f, 1.f, 0.f, 1.f, 0.f, 1.f, 0.f, 1.f, 0.f}).view({1, 1, 3, 3});
    auto opts = F::Conv2dFuncOptions().padding(1);
    while (known.min().item<float>() == 0.0f) {
        auto weight = F::conv2d(known, cross, opts);
        auto values = F::conv2d((out * known.squeeze(0)).unsqueeze(1), cross, opts).squeeze(1);
        auto fresh = (known == 0) & (weight > 0);
        auto avg = values / weight.squeeze(0).clamp_min(1.0);
        out = torch::where(fresh.squeeze(0).expand_as(out), avg, out);
        known = known + fresh.to(torch::kFloat32);
    }
    return out;
}

Clip animate(const torch::Tensor& image, const DepthMap& depth, const CameraPath& path, const Intrinsics& k) {
    if (path.poses.empty()) throw InvalidRequestError("camera path has no frames");
    Clip clip;
    clip.preset = to_string(path.preset);
    auto base = image.to(torch::kFloat32).contiguous();
    for (const auto& pose : path.poses) {
        if (pose.is_identity()) {
            clip.frames.push_back(base.clone());
            clip.hole_fraction.push_back(0.0);
            continue;
        }
        auto r = warp(base, depth, pose, k);
        clip.hole_fraction.push_back(r.holes.to(torch::kFloat64).mean().item<double>());
        clip.frames.push_back(fill_holes(r.frame, r.holes));
    }
    return clip;
}

nlohmann::json write_clip(const Clip& clip, const std::filesystem::path& dir, int fps) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["preset"] = clip.preset;
    manifest["fps"] = fps;
    manifest["width"] = clip.frames.empty() ? 0 : clip.frames.front().size(2);
    manifest["height"] = clip.frames.empty() ? 0 : clip.frames.front().size(1);
    manifest["frames"] = nlohmann::json::array();
    for (std::size_t i = 0; i < clip.frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        save_png(dir / name, clip.frames[i]);
        manifest["frames"].push_back(name);
    }
    manifest["mux"] = mux_command(".", fps);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    return manifest;
}

std::string mux_command(const std::filesystem::path& dir, int fps) {
    const auto d = dir.string();
    return "ffmpeg -y -loglevel error -framerate " + std::to_string(fps) + " -i '" + d + "/frame_%04d.png' " +
           "-pix_fmt yuv420p '" + d + "/clip.mp4'";
}

}  // namespace talecraft::i2v
