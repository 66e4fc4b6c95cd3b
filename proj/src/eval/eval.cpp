#include "talecraft/eval/eval.hpp"

#include <httplib.h>

#include <cctype>
#include <regex>
#include <algorithm>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"
#include "talecraft/common/image_io.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft::eval {

namespace {

constexpr int kPool = 16;

std::vector<std::string> words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '<' || c == '>') {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

torch::Tensor check_vector(const torch::Tensor& v, int dimension, const std::string& who) {
    if (v.dim() != 1 || v.size(0) != dimension) {
        throw BackendError(who + " returned an embedding of shape " + torch::str(v.sizes()) + ", expected (" +
                           std::to_string(dimension) + ")");
    }
    return v.to(torch::kFloat64);
}

torch::Tensor normalized(const torch::Tensor& v) {
    const double n = v.norm().item<double>();
    if (!(n > 0.0) || !std::isfinite(n)) throw BackendError("cannot normalize a zero or non-finite embedding");
    return v / n;
}

}  // namespace

torch::Tensor EmbeddingBackend::embed_texts(const std::vector<std::string>& texts) {
    std::vector<torch::Tensor> rows;
    for (const auto& t : texts) rows.push_back(embed_text(t));
    return rows.empty() ? torch::zeros({0, dimension()}, torch::kFloat64) : torch::stack(rows);
}

torch::Tensor EmbeddingBackend::embed_images(const std::vector<torch::Tensor>& images) {
    std::vector<torch::Tensor> rows;
    for (const auto& im : images) rows.push_back(embed_image(im));
    return rows.empty() ? torch::zeros({0, dimension()}, torch::kFloat64) : torch::stack(rows);
}

MockBackend::MockBackend(int dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
    if (dimension < 1) throw ConfigError("embedding dimension must be >= 1");
    auto rng = layout::make_generator(mix_seed(seed, fnv1a("image-projection")));
    projection_ = torch::randn({dimension, 3 * kPool * kPool}, rng, torch::kFloat64);
}

torch::Tensor MockBackend::embed_text(const std::string& text) {
    auto out = torch::zeros({dimension_}, torch::kFloat64);
    for (const auto& w : words(text)) {
        auto rng = layout::make_generator(mix_seed(seed_, fnv1a(w)));
        out += torch::randn({dimension_}, rng, torch::kFloat64);
    }
    return out;
}

torch::Tensor MockBackend::embed_image(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("embed_image expects a (3,H,W) image");
    auto pooled = torch::adaptive_avg_pool2d(image.to(torch::kFloat64).unsqueeze(0), {kPool, kPool});
    return torch::mv(projection_, pooled.flatten());
}

HttpBackend::HttpBackend(std::string endpoint, int dimension, std::chrono::seconds timeout)
    : endpoint_(std::move(endpoint)), dimension_(dimension), timeout_(timeout) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
    std::smatch m;
    if (!std::regex_match(endpoint_, m, re)) throw ConfigError("invalid eval endpoint: " + endpoint_);
    base_ = m[1].str();
    prefix_ = m[2].matched ? m[2].str() : "";
    if (dimension < 1) throw ConfigError("embedding dimension must be >= 1");
}

torch::Tensor HttpBackend::post(const std::string& path, const nlohmann::json& body) {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Post(prefix_ + path, body.dump(), "application/json");
    if (!res) throw BackendError("no response from " + endpoint_ + path + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw BackendError(endpoint_ + path + " returned HTTP " + std::to_string(res->status));
    std::vector<double> values;
    try {
        values = nlohmann::json::parse(res->body).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed embedding response: ") + e.what(), res->body);
    }
    return check_vector(torch::tensor(values, torch::kFloat64), dimension_, name());
}

torch::Tensor HttpBackend::embed_text(const std::string& text) {
    return post("/embed/text", {{"text", text}});
}

torch::Tensor HttpBackend::embed_image(const torch::Tensor& image) {
    const auto png = encode_png(image);
    const std::string bytes(png.begin(), png.end());
    return post("/embed/image", {{"png_base64", httplib::detail::base64_encode(bytes)}});
}

std::unique_ptr<EmbeddingBackend> make_backend(const Config& config) {
    return make_backend(config.get_string("eval.backend", "mock"), config);
}

std::unique_ptr<EmbeddingBackend> make_backend(const std::string& kind, const Config& config) {
    const int dim = config.get_int("eval.dimension", 128);
    if (kind == "mock") return std::make_unique<MockBackend>(dim);
    if (kind == "plugin") {
        const auto endpoint = config.get_string("eval.endpoint", "");
        if (endpoint.empty()) throw ConfigError("eval.endpoint is required for the plugin backend");
        return std::make_unique<HttpBackend>(endpoint, dim);
    }
    throw ConfigError("unknown eval backend: " + kind);
}

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.dim() != 1 || b.dim() != 1 || a.size(0) != b.size(0)) {
        throw BackendError("embedding dimensions differ: " + torch::str(a.sizes()) + " vs " + torch::str(b.sizes()));
    }
    auto x = normalized(a.to(torch::kFloat64));
    auto y = normalized(b.to(torch::kFloat64));
    return std::clamp(torch::dot(x, y).item<double>(), -1.0, 1.0);
}

double text_image_similarity(const std::string& prompt, const torch::Tensor& image, EmbeddingBackend& backend) {
    auto t = check_vector(backend.embed_text(prompt), backend.dimension(), backend.name());
    auto i = check_vector(backend.embed_image(image), backend.dimension(), backend.name());
    return cosine(t, i);
}

double image_image_similarity(const std::vector<torch::Tensor>& references, const torch::Tensor& image,
                              EmbeddingBackend& backend) {
    if (references.empty()) throw InvalidRequestError("image similarity needs at least one reference");
    auto mean = torch::zeros({backend.dimension()}, torch::kFloat64);
    for (const auto& r : references) {
        mean += normalized(check_vector(backend.embed_image(r), backend.dimension(), backend.name()));
    }
    mean /= static_cast<double>(references.size());
    return cosine(mean, check_vector(backend.embed_image(image), backend.dimension(), backend.name()));
}

nlohmann::json evaluate(const std::vector<SceneSample>& scenes, const std::vector<CharacterSample>& characters,
                        EmbeddingBackend& backend) {
    nlohmann::json report = {{"backend", backend.name()}, {"dimension", backend.dimension()}};
    auto scene_rows = nlohmann::json::array();
    double sum_plain = 0, sum_styled = 0;
    for (const auto& s : scenes) {
        const double plain = text_image_similarity(s.prompt, s.image, backend);
        const double styled = text_image_similarity(s.styled_prompt, s.image, backend);
        sum_plain += plain;
        sum_styled += styled;
        scene_rows.push_back({{"index", s.index}, {"text_sim", plain}, {"text_sim_styled", styled}});
    }
    auto char_rows = nlohmann::json::array();
    double sum_char = 0;
    std::size_t n_char = 0;
    for (const auto& c : characters) {
        auto values = nlohmann::json::array();
        double sum = 0;
        for (const auto& [scene, crop] : c.crops) {
            const double v = image_image_similarity(c.references, crop, backend);
            values.push_back({{"scene", scene}, {"value", v}});
            sum += v;
        }
        nlohmann::json row = {{"name", c.name}, {"image_sim", values}};
        if (!c.crops.empty()) {
            row["mean"] = sum / static_cast<double>(c.crops.size());
            sum_char += sum;
            n_char += c.crops.size();
        } else {
            row["mean"] = nullptr;
        }
        char_rows.push_back(row);
    }
    report["scenes"] = scene_rows;
    report["characters"] = char_rows;
    nlohmann::json means;
    means["text_sim"] = scenes.empty() ? nlohmann::json() : nlohmann::json(sum_plain / scenes.size());
    means["text_sim_styled"] = scenes.empty() ? nlohmann::json() : nlohmann::json(sum_styled / scenes.size());
    means["image_sim"] = n_char == 0 ? nlohmann::json() : nlohmann::json(sum_char / static_cast<double>(n_char));
    report["means"] = means;
    return report;
}

}  // namespace talecraft::eval
