#include "talecraft/layout/text_to_layout.hpp"

#include <mutex>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"

namespace talecraft::layout {

namespace {

// torch's default generator is process-global; serialize seeded construction.
std::mutex& init_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

TextToLayoutOptions TextToLayoutOptions::from_config(const Config& config) {
    TextToLayoutOptions o;
    o.denoiser.vocab.m_bins = config.get_int("t2l.m_bins", 64);
    o.denoiser.vocab.n_categories = static_cast<int>(object365_classes().size());
    o.denoiser.n_max = config.get_int("t2l.n_max", 16);
    o.denoiser.timesteps = config.get_int("t2l.timesteps", 50);
    o.denoiser.width = config.get_int("t2l.width", 256);
    o.denoiser.layers = config.get_int("t2l.layers", 4);
    o.denoiser.heads = config.get_int("t2l.heads", 4);
    o.mode = parse_corruption_mode(config.get_string("t2l.mode", "absorbing"));
    o.lambda = config.get_double("t2l.lambda", 0.1);
    o.keep_multiplicity = config.get_bool("t2l.keep_multiplicity", false);
    return o;
}

TextToLayout::TextToLayout(TextToLayoutOptions options, std::uint64_t init_seed)
    : options_(options),
      schedule_(build_schedule(options.denoiser.timesteps, options.mode, options.denoiser.vocab)),
      lexicon_(Lexicon::builtin()) {
    std::lock_guard lock(init_mutex());
    torch::manual_seed(init_seed);
    denoiser_ = LayoutDenoiser(options_.denoiser);
    denoiser_->eval();
}

LayoutResult TextToLayout::generate(const std::string& prompt, std::uint64_t seed) {
    LayoutResult result;
    result.extraction = extract_categories(prompt, lexicon_, options_.keep_multiplicity);
    auto& mentions = result.extraction.categories;
    if (static_cast<int>(mentions.size()) > options_.denoiser.n_max) {
        result.extraction.warnings.push_back("prompt names " + std::to_string(mentions.size()) +
                                             " objects; keeping the first " +
                                             std::to_string(options_.denoiser.n_max));
        mentions.resize(static_cast<std::size_t>(options_.denoiser.n_max));
    }
    if (mentions.empty()) {
        return result;
    }
    auto rng = make_generator(seed);
    auto sampled = sample_layout(result.extraction.ids(), denoiser_, schedule_, rng);
    for (std::size_t i = 0; i < sampled.objects.size(); ++i) {
        sampled.objects[i].phrase = mentions[i].span.text;
    }
    result.layout = to_scene_layout(sampled, options_.denoiser.vocab.m_bins, object365_classes());
    return result;
}

std::vector<double> TextToLayout::train(const std::vector<Layout>& corpus, const LayoutTrainOptions& options,
                                        const std::function<void(int, double)>& on_epoch) {
    return train_layout_denoiser(denoiser_, corpus, schedule_, options, on_epoch);
}

void TextToLayout::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    torch::save(denoiser_, path.string());
}

void TextToLayout::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("layout weights not found: " + path.string());
    }
    torch::load(denoiser_, path.string());
    denoiser_->eval();
}

}  // namespace talecraft::layout
