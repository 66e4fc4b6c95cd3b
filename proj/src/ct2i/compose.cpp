#include "talecraft/ct2i/compose.hpp"

#include <cctype>
#include <sstream>

#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"
#include "talecraft/ct2i/sketch.hpp"

namespace talecraft::ct2i {

namespace {

std::vector<std::string> split_spaces(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

std::string lower_alnum(const std::string& word) {
    std::string out;
    for (char c : word) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    return out;
}

/// Remove the tokens in `text`, then put `token` in front of the head noun.
std::string phrase_with_token(const std::string& phrase, const std::string& token) {
    return inject_token(strip_special_tokens(phrase), head_noun(phrase), token);
}

torch::Tensor sketch_canvas_for(const ComposeRequest& request, const std::vector<std::size_t>& objects,
                                std::int64_t size) {
    std::vector<torch::Tensor> canvases;
    for (auto i : objects) {
        if (i < request.sketches.size() && request.sketches[i].defined()) {
            canvases.push_back(compose_sketch_canvas(request.sketches[i], request.layout.objects[i].bbox, size));
        }
    }
    if (canvases.empty()) return {};
    return merge_sketch_canvases(canvases, size);
}

}  // namespace

std::string strip_special_tokens(const std::string& text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '<') {
            const auto close = text.find('>', i);
            if (close != std::string::npos && is_special_token(text.substr(i, close - i + 1))) {
                i = close;
                continue;
            }
        }
        out += text[i];
    }
    return join(split_spaces(out));
}

std::string head_noun(const std::string& phrase) {
    auto words = split_spaces(strip_special_tokens(phrase));
    for (auto it = words.rbegin(); it != words.rend(); ++it) {
        auto w = lower_alnum(*it);
        if (!w.empty()) return w;
    }
    return {};
}

std::string inject_token(const std::string& prompt, const std::string& noun, const std::string& token) {
    auto words = split_spaces(prompt);
    const auto target = lower_alnum(noun);
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (!target.empty() && lower_alnum(words[i]) == target) {
            if (i > 0 && words[i - 1] == token) return join(words);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(i), token);
            return join(words);
        }
    }
    auto out = join(words);
    return (out.empty() ? "" : out + ", ") + token + (noun.empty() ? "" : " " + noun);
}

ComposeResult iterative_compose(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                const ComposeRequest& request,
                                const std::map<std::string, CharacterBundle>& bundles,
                                const std::function<void(const PassRecord&)>& on_pass) {
    const auto& objects = request.layout.objects;
    std::vector<std::pair<std::size_t, const CharacterBundle*>> order;
    for (const auto& [index, name] : request.characters) {
        if (index >= objects.size()) {
            throw InvalidRequestError("character '" + name + "' is assigned to missing box " + std::to_string(index));
        }
        auto it = bundles.find(name);
        if (it == bundles.end()) throw NotFoundError("character not registered: " + name);
        if (it->second.config_hash != model.options().fingerprint()) {
            throw ConfigError("character '" + name + "' was trained for a different model configuration");
        }
        order.emplace_back(index, &it->second);
    }
    if (!request.sketches.empty() && request.sketches.size() != objects.size()) {
        throw InvalidRequestError("expected one sketch slot per layout object");
    }
    if (!(request.sketch_beta >= 0.0 && request.sketch_beta <= 2.0)) {
        throw InvalidRequestError("sketch strength must lie in [0, 2]");
    }

    const auto image_size = model.options().image_size;
    const auto latent_size = model.options().latent_size();
    ComposeResult result;

    // Pass 1: whole image, first character active, every other token stripped.
    {
        const CharacterBundle* first = order.empty() ? nullptr : order.front().second;
        ConditionSet cond;
        cond.prompt = strip_special_tokens(request.prompt);
        std::vector<std::size_t> all;
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const auto& obj = objects[i];
            std::string phrase = obj.phrase.empty() ? obj.category : obj.phrase;
            if (first && i == order.front().first) {
                phrase = phrase_with_token(phrase, first->token);
                cond.prompt = inject_token(cond.prompt, head_noun(phrase), first->token);
            } else {
                phrase = strip_special_tokens(phrase);
            }
            if (!phrase.empty()) cond.grounding.push_back({phrase, obj.bbox});
            all.push_back(i);
        }
        cond.sketch = sketch_canvas_for(request, all, image_size);
        cond.sketch_beta = request.sketch_beta;

        SampleOptions opts = request.sample;
        opts.seed = mix_seed(request.sample.seed, 0);
        PassRecord record{first ? first->name : "", cond.prompt, first ? static_cast<int>(order.front().first) : -1,
                          opts.seed, 4};
        std::optional<AdapterScope> scope;
        if (first) scope.emplace(model, *first);
        result.latent = ddim_sample_latent(model, schedule, cond, opts);
        torch::NoGradGuard no_grad;
        result.image = model.codec->decode(result.latent.unsqueeze(0)).squeeze(0).to(torch::kFloat32);
        result.passes.push_back(record);
        result.pass_images.push_back(result.image.clone());
        if (on_pass) on_pass(record);
    }

    // Remaining passes: inpaint one character box at a time.
    for (std::size_t p = 1; p < order.size(); ++p) {
        const auto [index, bundle] = order[p];
        const auto& obj = objects[index];
        const std::string phrase = phrase_with_token(obj.phrase.empty() ? obj.category : obj.phrase, bundle->token);

        ConditionSet cond;
        cond.prompt = phrase;
        cond.grounding.push_back({phrase, obj.bbox});
        cond.sketch = sketch_canvas_for(request, {index}, image_size);
        cond.sketch_beta = request.sketch_beta;

        InpaintSpec inpaint{result.latent, box_mask(obj.bbox, latent_size)};
        SampleOptions opts = request.sample;
        opts.seed = mix_seed(request.sample.seed, p);
        PassRecord record{bundle->name, phrase, static_cast<int>(index), opts.seed, 9};

        torch::Tensor latent;
        {
            AdapterScope scope(model, *bundle);
            latent = ddim_sample_latent(model, schedule, cond, opts, &inpaint);
        }
        torch::NoGradGuard no_grad;
        auto decoded = model.codec->decode(latent.unsqueeze(0)).squeeze(0).to(torch::kFloat32);
        const auto rect = box_to_pixels(obj.bbox, image_size, image_size);
        auto image = result.image.clone();
        image.narrow(1, rect.y0, rect.y1 - rect.y0)
            .narrow(2, rect.x0, rect.x1 - rect.x0)
            .copy_(decoded.narrow(1, rect.y0, rect.y1 - rect.y0).narrow(2, rect.x0, rect.x1 - rect.x0));
        result.image = image;
        result.latent = latent;
        result.passes.push_back(record);
        result.pass_images.push_back(image.clone());
        if (on_pass) on_pass(record);
    }
    return result;
}

}  // namespace talecraft::ct2i
