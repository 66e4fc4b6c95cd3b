#include "talecraft/ct2i/model.hpp"

#include <sstream>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"
#include "talecraft/ct2i/checksum.hpp"

namespace talecraft::ct2i {

CT2IOptions CT2IOptions::from_config(const Config& config) {
    CT2IOptions o;
    o.latent = parse_latent_mode(config.get_string("ct2i.latent", "autoencoder"));
    o.image_size = config.get_int("ct2i.image_size", o.latent == LatentMode::identity ? 32 : 64);
    o.lora_rank = config.get_int("ct2i.lora_rank", 4);
    o.train_timesteps = config.get_int("ct2i.train_timesteps", 1000);
    return o;
}

std::string CT2IOptions::fingerprint() const {
    std::ostringstream s;
    s << image_size << '/' << (latent == LatentMode::identity ? "identity" : "autoencoder") << '/' << latent_channels
      << '/' << channels0 << '/' << channels1 << '/' << attn_width << '/' << heads << '/' << lora_rank << '/'
      << n_freq << '/' << train_timesteps << '/' << text.width << '/' << text.hash_buckets << '/'
      << text.custom_slots << '/' << text.max_tokens;
    std::ostringstream hex;
    hex << std::hex << fnv1a(s.str());
    return hex.str();
}

void ConditionSet::validate() const {
    if (!(sketch_beta >= 0.0 && sketch_beta <= 2.0)) {
        throw InvalidRequestError("sketch strength must lie in [0, 2], got " + std::to_string(sketch_beta));
    }
    for (const auto& g : grounding) {
        if (g.phrase.empty()) throw InvalidRequestError("grounding phrase must not be empty");
    }
    if (sketch.defined() && (sketch.dim() != 3 || sketch.size(0) != 1)) {
        throw ShapeError("sketch canvas must be (1, S, S)");
    }
}

std::string to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::grounding: return "grounding";
        case ParamGroup::sketch: return "sketch";
        case ParamGroup::lora: return "lora";
        case ParamGroup::inpaint: return "inpaint";
        case ParamGroup::codec: return "codec";
    }
    return "unknown";
}

TrainPhase parse_train_phase(const std::string& name) {
    if (name == "backbone") return TrainPhase::backbone;
    if (name == "sketch") return TrainPhase::sketch;
    if (name == "grounding") return TrainPhase::grounding;
    if (name == "lora") return TrainPhase::lora;
    if (name == "all") return TrainPhase::all;
    throw ConfigError("unknown training phase: " + name);
}

ParamGroup classify_parameter(const std::string& name) {
    if (name.starts_with("codec.")) return ParamGroup::codec;
    if (name.find("lora_") != std::string::npos || name.find("custom_tokens") != std::string::npos) {
        return ParamGroup::lora;
    }
    if (name.starts_with("grounding.") || name.find(".gate_") != std::string::npos) return ParamGroup::grounding;
    if (name.starts_with("sketch_encoder.")) return ParamGroup::sketch;
    if (name.find("inpaint_conv_in") != std::string::npos) return ParamGroup::inpaint;
    return ParamGroup::backbone;
}

bool phase_trains(TrainPhase phase, ParamGroup group) {
    switch (phase) {
        case TrainPhase::backbone: return group == ParamGroup::backbone || group == ParamGroup::inpaint;
        case TrainPhase::sketch: return group == ParamGroup::sketch;
        case TrainPhase::grounding: return group == ParamGroup::grounding;
        case TrainPhase::lora: return group == ParamGroup::lora;
        case TrainPhase::all:
            return group == ParamGroup::backbone || group == ParamGroup::inpaint || group == ParamGroup::grounding ||
                   group == ParamGroup::sketch;
    }
    return false;
}

ControllableT2IImpl::ControllableT2IImpl(CT2IOptions o) : options_(o) {
    text_encoder = register_module("text_encoder", TextEncoder(o.text));
    grounding = register_module("grounding", GroundingNet(o.text.width, o.n_freq, o.attn_width));
    sketch_encoder = register_module("sketch_encoder",
                                     SketchEncoder(o.image_size, o.latent_size(), o.channels0, o.channels1));
    UNetOptions u;
    u.latent_channels = o.latent_channels;
    u.channels0 = o.channels0;
    u.channels1 = o.channels1;
    u.attn_width = o.attn_width;
    u.heads = o.heads;
    u.context_dim = o.text.width;
    u.lora_rank = o.lora_rank;
    unet = register_module("unet", ControllableUNet(u));
    codec = register_module("codec", LatentCodec(o.latent, o.image_size, o.latent_channels));
}

torch::Tensor ControllableT2IImpl::grounding_tokens(const std::vector<GroundedPhrase>& phrases) {
    const auto dtype = unet->conv_in->weight.scalar_type();
    if (phrases.empty()) return torch::zeros({0, options_.attn_width}, torch::TensorOptions(dtype));
    std::vector<std::string> texts;
    auto boxes = torch::empty({static_cast<std::int64_t>(phrases.size()), 4}, torch::kFloat64);
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        texts.push_back(phrases[i].phrase);
        const auto& b = phrases[i].box;
        boxes[static_cast<std::int64_t>(i)] = torch::tensor({b.x, b.y, b.w, b.h}, torch::kFloat64);
    }
    return grounding(text_encoder->phrase_embedding(texts), boxes.to(dtype));
}

Conditions ControllableT2IImpl::embed(const std::vector<ConditionSet>& conds) {
    for (const auto& c : conds) c.validate();
    const auto b = static_cast<std::int64_t>(conds.size());
    const auto dtype = unet->conv_in->weight.scalar_type();
    Conditions out;
    std::vector<std::string> prompts;
    for (const auto& c : conds) prompts.push_back(c.prompt);
    auto encoded = text_encoder->tokenize(prompts);
    out.context = text_encoder->forward(encoded);
    out.context_mask = encoded.mask;

    std::size_t max_g = 0;
    for (const auto& c : conds) max_g = std::max(max_g, c.grounding.size());
    if (max_g > 0) {
        const auto g = static_cast<std::int64_t>(max_g);
        std::vector<torch::Tensor> rows;
        out.grounding_mask = torch::zeros({b, g}, torch::kBool);
        for (std::int64_t i = 0; i < b; ++i) {
            const auto& phrases = conds[static_cast<std::size_t>(i)].grounding;
            auto tokens = grounding_tokens(phrases);
            const auto n = tokens.size(0);
            if (n < g) {
                tokens = torch::cat({tokens, torch::zeros({g - n, options_.attn_width}, tokens.options())});
            }
            out.grounding_mask[i].narrow(0, 0, n).fill_(true);
            rows.push_back(tokens);
        }
        out.grounding = torch::stack(rows);
    }

    bool any_sketch = false;
    for (const auto& c : conds) any_sketch = any_sketch || c.sketch.defined();
    if (any_sketch) {
        const auto s = options_.image_size;
        std::vector<torch::Tensor> canvases;
        out.sketch_beta = torch::zeros({b}, torch::TensorOptions(dtype));
        for (std::int64_t i = 0; i < b; ++i) {
            const auto& c = conds[static_cast<std::size_t>(i)];
            if (c.sketch.defined()) {
                if (c.sketch.size(1) != s || c.sketch.size(2) != s) {
                    throw ShapeError("sketch canvas must be " + std::to_string(s) + "x" + std::to_string(s));
                }
                canvases.push_back(c.sketch.to(dtype));
                out.sketch_beta[i] = c.sketch_beta;
            } else {
                canvases.push_back(torch::zeros({1, s, s}, torch::TensorOptions(dtype)));
            }
        }
        out.sketch = sketch_encoder(torch::stack(canvases));
    }
    return out;
}

std::vector<torch::Tensor> ControllableT2IImpl::set_trainable(TrainPhase phase) {
    std::vector<torch::Tensor> trainable;
    for (auto& item : named_parameters()) {
        const bool on = phase_trains(phase, classify_parameter(item.key()));
        item.value().set_requires_grad(on);
        if (on) trainable.push_back(item.value());
    }
    return trainable;
}

std::map<ParamGroup, std::uint64_t> ControllableT2IImpl::group_checksums() const {
    std::map<ParamGroup, std::uint64_t> sums;
    for (const auto& item : named_parameters()) {
        const auto group = classify_parameter(item.key());
        auto it = sums.try_emplace(group, 0xcbf29ce484222325ULL).first;
        it->second = tensor_checksum(item.value(), it->second);
    }
    return sums;
}

void ControllableT2IImpl::save(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    archive.write("fingerprint", torch::tensor(static_cast<std::int64_t>(std::stoull(options_.fingerprint(), nullptr, 16))));
    torch::serialize::OutputArchive weights;
    torch::nn::Module::save(weights);
    archive.write("model", weights);
    archive.save_to(path.string());
}

void ControllableT2IImpl::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("model weights not found: " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor fp;
    archive.read("fingerprint", fp);
    if (fp.item<std::int64_t>() != static_cast<std::int64_t>(std::stoull(options_.fingerprint(), nullptr, 16))) {
        throw ConfigError("weights in " + path.string() + " were trained for a different model configuration");
    }
    torch::serialize::InputArchive weights;
    archive.read("model", weights);
    torch::nn::Module::load(weights);
}

std::map<std::string, LoRALinear> lora_layers(ControllableT2IImpl& model) {
    std::map<std::string, LoRALinear> out;
    for (auto& item : model.named_modules("", false)) {
        if (auto lin = std::dynamic_pointer_cast<LoRALinearImpl>(item.value())) {
            if (lin->rank() > 0) out.emplace(item.key(), LoRALinear(lin));
        }
    }
    return out;
}

}  // namespace talecraft::ct2i
