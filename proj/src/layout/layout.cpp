#include "talecraft/layout/layout.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <nlohmann/json.hpp>

#include "talecraft/common/error.hpp"

namespace talecraft::layout {

std::int64_t LayoutVocab::geometry_token(int bin) const {
    if (bin < 1 || bin > m_bins) {
        throw InvalidRequestError("geometry bin out of range: " + std::to_string(bin));
    }
    return bin - 1;
}

std::int64_t LayoutVocab::category_token(int category) const {
    if (category < 1 || category > n_categories) {
        throw InvalidRequestError("category out of range: " + std::to_string(category));
    }
    return m_bins + category - 1;
}

int quantize(double v, int m_bins) {
    if (!(v >= 0.0 && v <= 1.0)) {
        std::cerr << "warning: coordinate " << v << " outside [0,1], clamped\n";
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    }
    auto bin = static_cast<int>(std::floor(v * m_bins));
    return std::min(bin, m_bins - 1) + 1;
}

double dequantize(int bin, int m_bins) { return (static_cast<double>(bin) - 0.5) / m_bins; }

QuantizedBox quantize_box(const Box& box, int m_bins) {
    return {quantize(box.x, m_bins), quantize(box.y, m_bins), quantize(box.w, m_bins), quantize(box.h, m_bins)};
}

Box dequantize_box(const QuantizedBox& box, int m_bins) {
    return {dequantize(box.x, m_bins), dequantize(box.y, m_bins), dequantize(box.w, m_bins),
            dequantize(box.h, m_bins)};
}

TokenSequence flatten(const Layout& layout, const LayoutVocab& vocab, int n_max) {
    if (static_cast<int>(layout.objects.size()) > n_max) {
        throw CapacityError("layout has " + std::to_string(layout.objects.size()) + " objects, capacity is " +
                            std::to_string(n_max));
    }
    TokenSequence seq;
    seq.tokens.assign(static_cast<std::size_t>(kFieldsPerObject * n_max), vocab.pad());
    std::size_t pos = 0;
    for (const auto& obj : layout.objects) {
        seq.tokens[pos++] = vocab.geometry_token(obj.box.x);
        seq.tokens[pos++] = vocab.geometry_token(obj.box.y);
        seq.tokens[pos++] = vocab.geometry_token(obj.box.w);
        seq.tokens[pos++] = vocab.geometry_token(obj.box.h);
        seq.tokens[pos++] = vocab.category_token(obj.category);
    }
    return seq;
}

Layout unflatten(const TokenSequence& seq, const LayoutVocab& vocab) {
    if (seq.tokens.size() % kFieldsPerObject != 0) {
        throw DecodeError("sequence length is not a multiple of 5", seq.tokens.size());
    }
    Layout layout;
    bool in_padding = false;
    for (std::size_t group = 0; group * kFieldsPerObject < seq.tokens.size(); ++group) {
        const std::size_t base = group * kFieldsPerObject;
        const bool group_is_pad = seq.tokens[base] == vocab.pad();
        for (std::size_t f = 0; f < kFieldsPerObject; ++f) {
            const auto tok = seq.tokens[base + f];
            const bool is_pad = tok == vocab.pad();
            if (is_pad != group_is_pad) {
                throw DecodeError("partially padded object at position " + std::to_string(base + f), base + f);
            }
            if (is_pad) continue;
            if (in_padding) {
                throw DecodeError("object after padding at position " + std::to_string(base + f), base + f);
            }
            const bool ok = f < 4 ? vocab.is_geometry(tok) : vocab.is_category(tok);
            if (!ok) {
                throw DecodeError("token " + std::to_string(tok) + " not legal for field " + std::to_string(f) +
                                      " at position " + std::to_string(base + f),
                                  base + f);
            }
        }
        if (group_is_pad) {
            in_padding = true;
            continue;
        }
        LayoutObject obj;
        obj.box = {vocab.bin_of(seq.tokens[base]), vocab.bin_of(seq.tokens[base + 1]),
                   vocab.bin_of(seq.tokens[base + 2]), vocab.bin_of(seq.tokens[base + 3])};
        obj.category = vocab.category_of(seq.tokens[base + 4]);
        layout.objects.push_back(obj);
    }
    return layout;
}

std::vector<std::string> validate(const SceneLayout& layout) {
    std::vector<std::string> issues;
    constexpr double eps = 1e-9;
    for (std::size_t i = 0; i < layout.objects.size(); ++i) {
        const auto& b = layout.objects[i].bbox;
        const std::string tag = "object " + std::to_string(i);
        if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
            issues.push_back(tag + ": non-finite coordinates");
            continue;
        }
        if (b.w <= 0 || b.h <= 0) {
            issues.push_back(tag + ": empty box");
        }
        if (b.x - b.w / 2 < -eps || b.x + b.w / 2 > 1 + eps || b.y - b.h / 2 < -eps || b.y + b.h / 2 > 1 + eps) {
            issues.push_back(tag + ": box leaves the canvas");
        }
        if (layout.objects[i].category.empty()) {
            issues.push_back(tag + ": missing category");
        }
    }
    if (layout.canvas_w <= 0 || layout.canvas_h <= 0) {
        issues.push_back("canvas size must be positive");
    }
    return issues;
}

SceneLayout to_scene_layout(const Layout& layout, int m_bins, const std::vector<std::string>& category_names) {
    SceneLayout out;
    for (const auto& obj : layout.objects) {
        auto b = dequantize_box(obj.box, m_bins);
        double x0 = std::clamp(b.x - b.w / 2, 0.0, 1.0);
        double x1 = std::clamp(b.x + b.w / 2, 0.0, 1.0);
        double y0 = std::clamp(b.y - b.h / 2, 0.0, 1.0);
        double y1 = std::clamp(b.y + b.h / 2, 0.0, 1.0);
        SceneObject so;
        so.bbox = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
        const auto idx = static_cast<std::size_t>(obj.category - 1);
        so.category = idx < category_names.size() ? category_names[idx] : std::to_string(obj.category);
        if (obj.phrase) {
            so.phrase = *obj.phrase;
        } else {
            so.phrase = so.category;
            std::transform(so.phrase.begin(), so.phrase.end(), so.phrase.begin(),
                           [](unsigned char c) { return std::tolower(c); });
        }
        out.objects.push_back(std::move(so));
    }
    return out;
}

Layout from_scene_layout(const SceneLayout& scene, int m_bins, const std::vector<std::string>& category_names) {
    Layout out;
    for (const auto& so : scene.objects) {
        LayoutObject obj;
        obj.box = quantize_box(so.bbox, m_bins);
        auto it = std::find(category_names.begin(), category_names.end(), so.category);
        if (it == category_names.end()) {
            throw ValidationError("unknown category", {so.category});
        }
        obj.category = static_cast<int>(it - category_names.begin()) + 1;
        obj.phrase = so.phrase;
        out.objects.push_back(std::move(obj));
    }
    return out;
}

nlohmann::json to_json(const SceneLayout& layout) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : layout.objects) {
        objects.push_back({{"bbox", {o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h}},
                           {"category", o.category},
                           {"phrase", o.phrase}});
    }
    return {{"objects", objects}, {"canvas", {layout.canvas_w, layout.canvas_h}}};
}

SceneLayout scene_layout_from_json(const nlohmann::json& j) {
    try {
        SceneLayout out;
        if (j.contains("canvas")) {
            out.canvas_w = j.at("canvas").at(0).get<int>();
            out.canvas_h = j.at("canvas").at(1).get<int>();
        }
        for (const auto& o : j.at("objects")) {
            SceneObject so;
            const auto& b = o.at("bbox");
            if (b.size() != 4) {
                throw ParseError("bbox must have 4 numbers", o.dump());
            }
            so.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            so.category = o.at("category").get<std::string>();
            so.phrase = o.value("phrase", std::string());
            out.objects.push_back(std::move(so));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed layout json: ") + e.what(), j.dump());
    }
}

}  // namespace talecraft::layout
