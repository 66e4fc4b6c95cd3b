#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "talecraft/layout/denoiser.hpp"
#include "talecraft/layout/lexicon.hpp"
#include "talecraft/layout/sampler.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft {
class Config;
}

namespace talecraft::layout {

struct TextToLayoutOptions {
    LayoutDenoiserOptions denoiser;
    CorruptionMode mode = CorruptionMode::absorbing;
    double lambda = 0.1;
    bool keep_multiplicity = false;

    static TextToLayoutOptions from_config(const Config& config);
};

struct LayoutResult {
    SceneLayout layout;
    CategoryExtraction extraction;
};

/// Prompt -> nouns -> categories -> sampled layout. Owns the denoiser weights.
class TextToLayout {
public:
    /// Weights are initialized from `init_seed` until `load` or `train` runs.
    explicit TextToLayout(TextToLayoutOptions options, std::uint64_t init_seed = 0);

    /// Phrases in the result are the source nouns as written in the prompt.
    LayoutResult generate(const std::string& prompt, std::uint64_t seed);

    std::vector<double> train(const std::vector<Layout>& corpus, const LayoutTrainOptions& options,
                              const std::function<void(int, double)>& on_epoch = {});

    void save(const std::filesystem::path& path);
    void load(const std::filesystem::path& path);

    LayoutDenoiser& denoiser() noexcept { return denoiser_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    const TextToLayoutOptions& options() const noexcept { return options_; }
    const Lexicon& lexicon() const noexcept { return lexicon_; }

private:
    TextToLayoutOptions options_;
    NoiseSchedule schedule_;
    LayoutDenoiser denoiser_{nullptr};
    Lexicon lexicon_;
};

}  // namespace talecraft::layout
