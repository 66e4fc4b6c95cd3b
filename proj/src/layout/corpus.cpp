#include "talecraft/layout/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "talecraft/common/error.hpp"
#include "talecraft/layout/lexicon.hpp"

namespace talecraft::layout {

namespace {

struct SizePrior {
    const char* name;
    double w_lo, w_hi, h_lo, h_hi, y_lo, y_hi;
};

const std::vector<SizePrior>& priors() {
    static const std::vector<SizePrior> p = {
        {"Person", 0.12, 0.25, 0.40, 0.75, 0.45, 0.70},   {"Dog", 0.20, 0.35, 0.15, 0.30, 0.60, 0.85},
        {"Cat", 0.15, 0.28, 0.12, 0.25, 0.60, 0.85},      {"Horse", 0.30, 0.50, 0.30, 0.45, 0.50, 0.75},
        {"Car", 0.35, 0.60, 0.15, 0.30, 0.60, 0.80},      {"Bicycle", 0.20, 0.35, 0.15, 0.28, 0.60, 0.80},
        {"Wild Bird", 0.06, 0.15, 0.05, 0.12, 0.10, 0.35}, {"Airplane", 0.30, 0.50, 0.10, 0.20, 0.10, 0.30},
        {"Kite", 0.08, 0.16, 0.10, 0.20, 0.10, 0.30},     {"Bench", 0.30, 0.50, 0.12, 0.20, 0.65, 0.85},
        {"Potted Plant", 0.10, 0.20, 0.20, 0.35, 0.55, 0.80}, {"Umbrella", 0.20, 0.35, 0.15, 0.25, 0.30, 0.50},
        {"Other Balls", 0.05, 0.10, 0.05, 0.10, 0.75, 0.90},
    };
    return p;
}

}  // namespace

const std::vector<int>& synthetic_categories() {
    static const std::vector<int> ids = [] {
        std::vector<int> out;
        for (const auto& p : priors()) out.push_back(category_id(p.name));
        return out;
    }();
    return ids;
}

std::vector<Layout> synthetic_corpus(std::size_t count, int m_bins, int max_objects, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> n_dist(1, std::max(1, max_objects));
    std::uniform_int_distribution<std::size_t> cls_dist(0, priors().size() - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    std::vector<Layout> corpus;
    corpus.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Layout layout;
        const int n = n_dist(rng);
        for (int k = 0; k < n; ++k) {
            const auto& p = priors()[cls_dist(rng)];
            Box b;
            b.w = lerp(p.w_lo, p.w_hi);
            b.h = lerp(p.h_lo, p.h_hi);
            b.x = lerp(b.w / 2, 1.0 - b.w / 2);
            b.y = lerp(std::max(p.y_lo, b.h / 2), std::min(p.y_hi, 1.0 - b.h / 2));
            LayoutObject obj;
            obj.box = quantize_box(b, m_bins);
            obj.category = category_id(p.name);
            layout.objects.push_back(obj);
        }
        corpus.push_back(std::move(layout));
    }
    return corpus;
}

std::vector<Layout> load_object365_subset(const std::filesystem::path& dir, int m_bins, int n_max) {
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("object365 annotation directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    const int n_classes = static_cast<int>(object365_classes().size());
    std::vector<Layout> out;
    for (const auto& file : files) {
        std::ifstream in(file);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("bad annotation file " + file.string() + ": " + e.what(), file.string());
        }
        const double width = j.at("width").get<double>();
        const double height = j.at("height").get<double>();
        struct Item {
            double area;
            LayoutObject obj;
        };
        std::vector<Item> items;
        for (const auto& a : j.at("annotations")) {
            const int cat = a.at("category_id").get<int>();
            const auto& bb = a.at("bbox");
            const double left = bb[0].get<double>(), top = bb[1].get<double>();
            const double w = bb[2].get<double>(), h = bb[3].get<double>();
            if (cat < 1 || cat > n_classes || w <= 0 || h <= 0) continue;
            Box b{std::clamp((left + w / 2) / width, 0.0, 1.0), std::clamp((top + h / 2) / height, 0.0, 1.0),
                  std::clamp(w / width, 0.0, 1.0), std::clamp(h / height, 0.0, 1.0)};
            items.push_back({w * h, {quantize_box(b, m_bins), cat, std::nullopt}});
        }
        std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.area > b.area; });
        if (static_cast<int>(items.size()) > n_max) items.resize(static_cast<std::size_t>(n_max));
        if (items.empty()) continue;
        Layout layout;
        for (auto& it : items) layout.objects.push_back(std::move(it.obj));
        out.push_back(std::move(layout));
    }
    return out;
}

}  // namespace talecraft::layout
