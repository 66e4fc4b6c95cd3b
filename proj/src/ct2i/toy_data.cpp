#include "talecraft/ct2i/toy_data.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <random>

#include "talecraft/common/error.hpp"
#include "talecraft/ct2i/sketch.hpp"

namespace talecraft::ct2i {

namespace {

struct Background {
    std::string name;
    Rgb top;
    Rgb bottom;
};

const std::vector<Background>& backgrounds() {
    static const std::vector<Background> list = {
        {"forest", {40, 110, 60}, {25, 70, 30}},    {"beach", {135, 206, 235}, {238, 214, 175}},
        {"city", {170, 170, 180}, {90, 90, 95}},    {"park", {150, 200, 240}, {110, 190, 90}},
        {"snow", {200, 215, 230}, {245, 245, 250}}, {"desert", {250, 200, 120}, {220, 170, 90}},
    };
    return list;
}

cv::Scalar scalar(const Rgb& c) { return {double(c[0]), double(c[1]), double(c[2])}; }

/// Paints one object on `image` and its silhouette on `mask`.
void draw_object(cv::Mat& image, cv::Mat& mask, const std::string& noun, const PixelRect& r, const Rgb& body) {
    const double w = static_cast<double>(r.x1 - r.x0);
    const double h = static_cast<double>(r.y1 - r.y0);
    const double m = std::min(w, h);
    auto pt = [&](double fx, double fy) { return cv::Point(int(std::lround(r.x0 + fx * w)), int(std::lround(r.y0 + fy * h))); };
    auto ellipse = [&](cv::Point c, double ax, double ay, const cv::Scalar& col) {
        cv::Size axes(std::max(1, int(std::lround(ax))), std::max(1, int(std::lround(ay))));
        cv::ellipse(image, c, axes, 0, 0, 360, col, cv::FILLED);
        cv::ellipse(mask, c, axes, 0, 0, 360, 255, cv::FILLED);
    };
    auto rect = [&](cv::Point a, cv::Point b, const cv::Scalar& col) {
        cv::rectangle(image, a, b, col, cv::FILLED);
        cv::rectangle(mask, a, b, 255, cv::FILLED);
    };
    auto poly = [&](std::vector<cv::Point> pts, const cv::Scalar& col) {
        cv::fillConvexPoly(image, pts, col);
        cv::fillConvexPoly(mask, pts, 255);
    };
    const auto c = scalar(body);
    const cv::Scalar dark(20, 20, 20);

    if (noun == "dog") {
        ellipse(pt(0.55, 0.6), 0.4 * w, 0.25 * h, c);
        ellipse(pt(0.2, 0.35), 0.2 * m, 0.2 * m, c);
        ellipse(pt(0.14, 0.3), 0.04 * m + 1, 0.04 * m + 1, dark);
    } else if (noun == "cat") {
        ellipse(pt(0.5, 0.65), 0.35 * w, 0.25 * h, c);
        ellipse(pt(0.5, 0.3), 0.22 * m, 0.2 * m, c);
        poly({pt(0.3, 0.25), pt(0.36, 0.02), pt(0.45, 0.2)}, c);
        poly({pt(0.55, 0.2), pt(0.64, 0.02), pt(0.7, 0.25)}, c);
    } else if (noun == "bird") {
        ellipse(pt(0.45, 0.55), 0.35 * w, 0.25 * h, c);
        ellipse(pt(0.75, 0.35), 0.15 * m, 0.15 * m, c);
        poly({pt(0.85, 0.3), pt(1.0, 0.38), pt(0.85, 0.45)}, cv::Scalar(250, 200, 40));
    } else if (noun == "car") {
        rect(pt(0.0, 0.4), pt(1.0, 0.75), c);
        rect(pt(0.2, 0.15), pt(0.75, 0.42), c);
        ellipse(pt(0.25, 0.8), 0.12 * m + 1, 0.12 * m + 1, dark);
        ellipse(pt(0.75, 0.8), 0.12 * m + 1, 0.12 * m + 1, dark);
    } else if (noun == "person") {
        ellipse(pt(0.5, 0.15), 0.15 * m + 1, 0.15 * m + 1, cv::Scalar(240, 200, 170));
        rect(pt(0.3, 0.3), pt(0.7, 0.7), c);
        rect(pt(0.32, 0.7), pt(0.46, 1.0), dark);
        rect(pt(0.54, 0.7), pt(0.68, 1.0), dark);
    } else if (noun == "boat") {
        poly({pt(0.0, 0.6), pt(1.0, 0.6), pt(0.8, 0.95), pt(0.2, 0.95)}, c);
        poly({pt(0.5, 0.05), pt(0.5, 0.55), pt(0.85, 0.55)}, cv::Scalar(250, 250, 250));
    } else if (noun == "flower") {
        rect(pt(0.46, 0.45), pt(0.54, 1.0), cv::Scalar(40, 160, 40));
        ellipse(pt(0.5, 0.3), 0.3 * m, 0.28 * m, c);
        ellipse(pt(0.5, 0.3), 0.1 * m + 1, 0.1 * m + 1, cv::Scalar(250, 220, 40));
    } else if (noun == "tent") {
        poly({pt(0.5, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)}, c);
        poly({pt(0.5, 0.45), pt(0.62, 1.0), pt(0.38, 1.0)}, dark);
    } else {
        throw InvalidRequestError("no toy renderer for '" + noun + "'");
    }
}

torch::Tensor to_tensor(const cv::Mat& rgb) {
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, rgb.channels()}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

layout::Box random_box(std::mt19937_64& rng, double w_lo, double w_hi, double x_lo, double x_hi) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double w = w_lo + (w_hi - w_lo) * u(rng);
    const double h = w_lo + (w_hi - w_lo) * u(rng);
    const double x = std::clamp(x_lo + w / 2 + (x_hi - x_lo - w) * u(rng), w / 2, 1 - w / 2);
    const double y = h / 2 + (1 - h) * u(rng);
    return {x, y, w, h};
}

}  // namespace

const std::vector<ToyCategory>& toy_categories() {
    static const std::vector<ToyCategory> list = {
        {"dog", "Dog", {139, 90, 43}},         {"cat", "Cat", {255, 140, 0}},
        {"bird", "Wild Bird", {30, 90, 220}},  {"car", "Car", {210, 30, 30}},
        {"person", "Person", {40, 60, 160}},   {"boat", "Boat", {120, 120, 130}},
        {"flower", "Flower", {220, 40, 200}},  {"tent", "Tent", {240, 220, 40}},
    };
    return list;
}

const ToyCategory& toy_category(const std::string& noun) {
    for (const auto& c : toy_categories()) {
        if (c.noun == noun) return c;
    }
    throw NotFoundError("unknown toy object: " + noun);
}

const std::vector<std::string>& toy_backgrounds() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& b : backgrounds()) out.push_back(b.name);
        return out;
    }();
    return names;
}

std::string toy_prompt(const std::vector<ToyObject>& objects, const std::string& background) {
    std::string out;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (i > 0) out += i + 1 == objects.size() ? " and " : ", ";
        out += "a " + objects[i].noun;
    }
    return out + " in " + (background == "city" || background == "park" ? "the " : "a ") + background;
}

ToyScene render_toy_scene(const std::vector<ToyObject>& objects, const std::string& background, int image_size) {
    auto bg = std::find_if(backgrounds().begin(), backgrounds().end(),
                           [&](const Background& b) { return b.name == background; });
    if (bg == backgrounds().end()) throw NotFoundError("unknown toy background: " + background);

    cv::Mat image(image_size, image_size, CV_8UC3, scalar(bg->bottom));
    image.rowRange(0, image_size / 2).setTo(scalar(bg->top));

    ToyScene scene;
    scene.background = background;
    scene.prompt = toy_prompt(objects, background);
    scene.layout.canvas_w = image_size;
    scene.layout.canvas_h = image_size;
    for (const auto& obj : objects) {
        const auto& cat = toy_category(obj.noun);
        const auto r = box_to_pixels(obj.box, image_size, image_size);
        cv::Mat mask = cv::Mat::zeros(image_size, image_size, CV_8UC1);
        cv::Mat clip = image(cv::Rect(int(r.x0), int(r.y0), int(r.x1 - r.x0), int(r.y1 - r.y0)));
        cv::Mat clip_mask = mask(cv::Rect(int(r.x0), int(r.y0), int(r.x1 - r.x0), int(r.y1 - r.y0)));
        draw_object(clip, clip_mask, obj.noun, {0, 0, r.x1 - r.x0, r.y1 - r.y0}, obj.color.value_or(cat.color));

        cv::Mat eroded, outline;
        cv::erode(clip_mask, eroded, cv::Mat::ones(3, 3, CV_8UC1));
        cv::subtract(clip_mask, eroded, outline);
        outline.convertTo(outline, CV_32F, 1.0 / 255.0);
        scene.sketches.push_back(
            torch::from_blob(outline.data, {1, outline.rows, outline.cols}, torch::kFloat32).clone());
        scene.layout.objects.push_back({obj.box, cat.category, obj.noun});
    }
    scene.image = to_tensor(image);
    return scene;
}

ToyScene make_toy_scene(std::uint64_t seed, const ToySceneOptions& options) {
    if (options.min_objects < 1 || options.max_objects > 2 || options.min_objects > options.max_objects) {
        throw InvalidRequestError("toy scenes hold one or two objects");
    }
    std::mt19937_64 rng(seed);
    const auto& cats = toy_categories();
    std::uniform_int_distribution<int> count_dist(options.min_objects, options.max_objects);
    std::uniform_int_distribution<std::size_t> cat_dist(0, cats.size() - 1);
    std::uniform_int_distribution<std::size_t> bg_dist(0, backgrounds().size() - 1);
    const int n = count_dist(rng);
    std::vector<ToyObject> objects;
    while (static_cast<int>(objects.size()) < n) {
        const auto& noun = cats[cat_dist(rng)].noun;
        if (std::any_of(objects.begin(), objects.end(), [&](const ToyObject& o) { return o.noun == noun; })) continue;
        const auto slot = static_cast<double>(objects.size());
        objects.push_back(n == 1 ? ToyObject{noun, random_box(rng, 0.4, 0.7, 0.0, 1.0), {}}
                                 : ToyObject{noun, random_box(rng, 0.3, 0.45, 0.5 * slot, 0.5 * slot + 0.5), {}});
    }
    return render_toy_scene(objects, backgrounds()[bg_dist(rng)].name, options.image_size);
}

std::vector<ToyScene> make_toy_dataset(int count, std::uint64_t seed, const ToySceneOptions& options) {
    std::vector<ToyScene> out;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) out.push_back(make_toy_scene(rng(), options));
    return out;
}

std::vector<torch::Tensor> make_character_images(const std::string& noun, const Rgb& color, int count,
                                                 std::uint64_t seed, int image_size) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> bg_dist(0, backgrounds().size() - 1);
    std::vector<torch::Tensor> out;
    for (int i = 0; i < count; ++i) {
        ToyObject obj{noun, random_box(rng, 0.45, 0.7, 0.0, 1.0), color};
        out.push_back(render_toy_scene({obj}, backgrounds()[bg_dist(rng)].name, image_size).image);
    }
    return out;
}

}  // namespace talecraft::ct2i
