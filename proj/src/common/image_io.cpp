#include "talecraft/common/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

#include "talecraft/common/error.hpp"

namespace talecraft {

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& input, bool gray) {
    cv::Mat m = input;
    double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    if (m.depth() != CV_8U && m.depth() != CV_16U) {
        throw Error("unsupported image depth");
    }
    cv::Mat f;
    m.convertTo(f, CV_32F, scale);
    const int channels = f.channels();
    auto hwc = torch::from_blob(f.data, {f.rows, f.cols, channels}, torch::kFloat32).clone();
    auto chw = hwc.permute({2, 0, 1}).contiguous();
    if (channels == 4) {
        chw = chw.slice(0, 0, 3);
    }
    if (chw.size(0) == 3) {
        chw = chw.flip(0);  // BGR -> RGB
    }
    if (gray) {
        if (chw.size(0) == 3) {
            auto w = torch::tensor({0.299f, 0.587f, 0.114f}).view({3, 1, 1});
            chw = (chw * w).sum(0, true);
        }
        return chw.contiguous();
    }
    if (chw.size(0) == 1) {
        chw = chw.expand({3, chw.size(1), chw.size(2)});
    }
    return chw.contiguous();
}

cv::Mat tensor_to_mat8(const torch::Tensor& image) {
    auto t = image.detach().to(torch::kFloat32).cpu();
    if (t.dim() == 2) {
        t = t.unsqueeze(0);
    }
    if (t.dim() != 3 || (t.size(0) != 1 && t.size(0) != 3)) {
        throw ShapeError("save_png expects (1|3, H, W)");
    }
    if (t.size(0) == 3) {
        t = t.flip(0);  // RGB -> BGR
    }
    auto bytes = (t.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    const int h = static_cast<int>(bytes.size(0));
    const int w = static_cast<int>(bytes.size(1));
    const int c = static_cast<int>(bytes.size(2));
    cv::Mat m(h, w, CV_8UC(c), bytes.data_ptr<std::uint8_t>());
    return m.clone();
}

cv::Mat read_or_throw(const std::filesystem::path& path, int flags) {
    cv::Mat m = cv::imread(path.string(), flags);
    if (m.empty()) {
        throw Error("cannot read image " + path.string());
    }
    return m;
}

}  // namespace

torch::Tensor load_rgb(const std::filesystem::path& path) {
    return mat_to_tensor(read_or_throw(path, cv::IMREAD_UNCHANGED), false);
}

torch::Tensor load_gray(const std::filesystem::path& path) {
    return mat_to_tensor(read_or_throw(path, cv::IMREAD_UNCHANGED), true);
}

void save_png(const std::filesystem::path& path, const torch::Tensor& image) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), tensor_to_mat8(image))) {
        throw Error("cannot write image " + path.string());
    }
}

torch::Tensor load_depth_mm(const std::filesystem::path& path) {
    cv::Mat m = read_or_throw(path, cv::IMREAD_UNCHANGED);
    if (m.channels() != 1 || m.depth() != CV_16U) {
        throw Error("depth file must be single-channel 16-bit: " + path.string());
    }
    cv::Mat f;
    m.convertTo(f, CV_32F, 1.0 / 1000.0);
    return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

void save_depth_mm(const std::filesystem::path& path, const torch::Tensor& depth_m) {
    auto t = depth_m.detach().to(torch::kFloat32).cpu().contiguous();
    if (t.dim() != 2) {
        throw ShapeError("depth must be (H, W)");
    }
    auto mm = (t * 1000.0).round().clamp(1, 65535).to(torch::kInt32).contiguous();
    cv::Mat m32(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32S, mm.data_ptr<std::int32_t>());
    cv::Mat m16;
    m32.convertTo(m16, CV_16U);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), m16)) {
        throw Error("cannot write depth " + path.string());
    }
}

std::vector<unsigned char> encode_png(const torch::Tensor& image) {
    std::vector<unsigned char> out;
    if (!cv::imencode(".png", tensor_to_mat8(image), out)) {
        throw Error("png encoding failed");
    }
    return out;
}

torch::Tensor decode_rgb(const std::vector<unsigned char>& bytes) {
    cv::Mat m = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
    if (m.empty()) {
        throw Error("cannot decode image bytes");
    }
    return mat_to_tensor(m, false);
}

}  // namespace talecraft
