#pragma once

#include <torch/types.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace talecraft {
class Config;
}

namespace talecraft::eval {

/// Maps text and images into one embedding space of fixed dimension.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string name() const = 0;
    virtual int dimension() const = 0;
    /// Returns a 1-D double tensor of length dimension().
    virtual torch::Tensor embed_text(const std::string& text) = 0;
    /// `image` is (3,H,W) in [0,1].
    virtual torch::Tensor embed_image(const torch::Tensor& image) = 0;

    /// Default implementations call the single-item methods.
    virtual torch::Tensor embed_texts(const std::vector<std::string>& texts);
    virtual torch::Tensor embed_images(const std::vector<torch::Tensor>& images);
};

/// Deterministic stand-in built from hash-seeded random projections.
/// Text: sum of one gaussian vector per lower-cased word.
/// Image: 16x16 area-pooled RGB projected by a fixed gaussian matrix.
/// The two spaces are unrelated, so text/image scores are only meaningful
/// as relative comparisons within one backend.
class MockBackend final : public EmbeddingBackend {
public:
    explicit MockBackend(int dimension = 128, std::uint64_t seed = 0);
    std::string name() const override { return "mock"; }
    int dimension() const override { return dimension_; }
    torch::Tensor embed_text(const std::string& text) override;
    torch::Tensor embed_image(const torch::Tensor& image) override;

private:
    int dimension_;
    std::uint64_t seed_;
    torch::Tensor projection_;
};

/// Remote embedder. `endpoint` is scheme://host[:port][/prefix]. POST {endpoint}/embed/text {"text": ...} and
/// POST {endpoint}/embed/image {"png_base64": ...}; both answer {"embedding": [...]}.
class HttpBackend final : public EmbeddingBackend {
public:
    HttpBackend(std::string endpoint, int dimension, std::chrono::seconds timeout = std::chrono::seconds(60));
    std::string name() const override { return "plugin"; }
    int dimension() const override { return dimension_; }
    torch::Tensor embed_text(const std::string& text) override;
    torch::Tensor embed_image(const torch::Tensor& image) override;

private:
    torch::Tensor post(const std::string& path, const nlohmann::json& body);
    std::string endpoint_;
    std::string base_;
    std::string prefix_;
    int dimension_;
    std::chrono::seconds timeout_;
};

/// `eval.backend` selects "mock" or "plugin"; `eval.dimension` and `eval.endpoint` configure it.
std::unique_ptr<EmbeddingBackend> make_backend(const Config& config);
std::unique_ptr<EmbeddingBackend> make_backend(const std::string& kind, const Config& config);

/// Cosine of two 1-D vectors. Throws BackendError on a length mismatch or a zero vector.
double cosine(const torch::Tensor& a, const torch::Tensor& b);

double text_image_similarity(const std::string& prompt, const torch::Tensor& image, EmbeddingBackend& backend);

/// Cosine between the mean of the normalized reference embeddings and the image embedding.
double image_image_similarity(const std::vector<torch::Tensor>& references, const torch::Tensor& image,
                              EmbeddingBackend& backend);

struct SceneSample {
    int index = 0;
    std::string prompt;         // without the style suffix
    std::string styled_prompt;  // as sent to the generator
    torch::Tensor image;
};

struct CharacterSample {
    std::string name;
    std::vector<torch::Tensor> references;
    /// Crops of the character's boxes in rendered scenes, with the scene index.
    std::vector<std::pair<int, torch::Tensor>> crops;
};

/// {"backend", "dimension", "scenes": [{index, text_sim, text_sim_styled}],
///  "characters": [{name, image_sim: [{scene, value}], mean}], "means": {...}}
nlohmann::json evaluate(const std::vector<SceneSample>& scenes, const std::vector<CharacterSample>& characters,
                        EmbeddingBackend& backend);

}  // namespace talecraft::eval
