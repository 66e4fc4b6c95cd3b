#include "talecraft/ct2i/character.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft::ct2i {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'A', 'D'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "adapter files assume a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ParseError("truncated adapter file", "");
    return v;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        auto t = tensor.detach().to(torch::kFloat32).contiguous();
        put_u32(out, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put_u32(out, static_cast<std::uint32_t>(d));
        out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!out) throw Error("failed writing " + path.string());
}

std::vector<std::pair<std::string, torch::Tensor>> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("adapter file not found: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not an adapter file: " + path.string(), "");
    if (const auto v = get_u32(in); v != kVersion) {
        throw MigrationError("adapter file version " + std::to_string(v) + " is not supported");
    }
    const auto count = get_u32(in);
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(get_u32(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rank = get_u32(in);
        if (rank > 8) throw ParseError("implausible tensor rank in " + path.string(), name);
        std::vector<std::int64_t> dims;
        for (std::uint32_t d = 0; d < rank; ++d) dims.push_back(get_u32(in));
        auto t = torch::empty(dims, torch::kFloat32);
        in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        if (!in) throw ParseError("truncated adapter file: " + path.string(), name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void save_bundle(const CharacterBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "refs");
    nlohmann::ordered_json meta;
    meta["name"] = bundle.name;
    meta["token"] = bundle.token;
    meta["class_noun"] = bundle.class_noun;
    meta["rank"] = bundle.rank;
    meta["config_hash"] = bundle.config_hash;
    meta["reference_images"] = bundle.reference_images;
    meta["training"] = bundle.training;
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

    std::vector<std::pair<std::string, torch::Tensor>> tensors;
    tensors.emplace_back("token_embedding", bundle.token_embedding);
    for (const auto& [layer, w] : bundle.adapters) {
        tensors.emplace_back(layer + ".lora_a", w.a);
        tensors.emplace_back(layer + ".lora_b", w.b);
    }
    write_tensor_file(dir / "adapters.bin", tensors);
}

CharacterBundle load_bundle(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw NotFoundError("character bundle not found: " + dir.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed meta.json: ") + e.what(), "");
    }
    CharacterBundle b;
    b.name = meta.at("name").get<std::string>();
    b.token = meta.at("token").get<std::string>();
    b.class_noun = meta.at("class_noun").get<std::string>();
    b.rank = meta.at("rank").get<int>();
    b.config_hash = meta.at("config_hash").get<std::string>();
    b.reference_images = meta.value("reference_images", std::vector<std::string>{});
    b.training = meta.value("training", nlohmann::json::object());
    for (auto& [name, t] : read_tensor_file(dir / "adapters.bin")) {
        if (name == "token_embedding") {
            b.token_embedding = t;
        } else if (name.ends_with(".lora_a")) {
            b.adapters[name.substr(0, name.size() - 7)].a = t;
        } else if (name.ends_with(".lora_b")) {
            b.adapters[name.substr(0, name.size() - 7)].b = t;
        } else {
            throw ParseError("unexpected tensor in adapter file", name);
        }
    }
    return b;
}

AdapterScope::AdapterScope(ControllableT2IImpl& model, const CharacterBundle& bundle)
    : model_(model), token_(bundle.token) {
    if (bundle.config_hash != model.options().fingerprint()) {
        throw ConfigError("character '" + bundle.name + "' was trained for a different model configuration");
    }
    auto layers = lora_layers(model);
    if (layers.size() != bundle.adapters.size()) {
        throw ConfigError("character '" + bundle.name + "' does not cover the model's adapted layers");
    }
    torch::NoGradGuard no_grad;
    for (auto& [path, layer] : layers) {
        auto it = bundle.adapters.find(path);
        if (it == bundle.adapters.end()) throw ConfigError("character bundle lacks adapter " + path);
        layer->lora_a.copy_(it->second.a);
        layer->lora_b.copy_(it->second.b);
    }
    if (!model.text_encoder->has_token(token_)) model.text_encoder->register_token(token_);
    model.text_encoder->set_token_embedding(token_, bundle.token_embedding);
}

AdapterScope::~AdapterScope() {
    clear_adapters(model_);
    model_.text_encoder->unregister_token(token_);
}

void clear_adapters(ControllableT2IImpl& model) {
    torch::NoGradGuard no_grad;
    for (auto& [_, layer] : lora_layers(model)) layer->lora_b.zero_();
}

std::vector<torch::Tensor> render_regularization_set(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                                     const std::string& class_noun, int count, std::uint64_t seed,
                                                     int ddim_steps, double guidance) {
    std::vector<torch::Tensor> out;
    ConditionSet cond;
    cond.prompt = "a " + class_noun;
    for (int i = 0; i < count; ++i) {
        SampleOptions o{ddim_steps, guidance, mix_seed(seed, static_cast<std::uint64_t>(i))};
        out.push_back(ddim_sample_latent(model, schedule, cond, o));
    }
    return out;
}

CharacterBundle train_personalization(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                      const std::string& name, const std::string& token,
                                      const std::string& class_noun, const std::vector<torch::Tensor>& images,
                                      const std::vector<torch::Tensor>& regularization_latents,
                                      const PersonalizationOptions& options,
                                      const std::vector<std::string>& taken_tokens) {
    if (images.size() < 5 || images.size() > 9) {
        throw ValidationError("personalization needs 5 to 9 images, got " + std::to_string(images.size()),
                              {"image count"});
    }
    if (!is_special_token(token)) {
        throw RegistrationError("character token must look like <name>: " + token);
    }
    if (model.text_encoder->has_token(token) ||
        std::find(taken_tokens.begin(), taken_tokens.end(), token) != taken_tokens.end()) {
        throw RegistrationError("token already in use: " + token);
    }
    const auto before = model.group_checksums();
    auto rng = layout::make_generator(options.seed);

    for (auto& [_, layer] : lora_layers(model)) layer->reset_adapter(&rng);
    model.text_encoder->register_token(token);
    {
        // Start the token where the class noun sits.
        torch::NoGradGuard no_grad;
        model.text_encoder->set_token_embedding(
            token, model.text_encoder->word_embed->weight[model.text_encoder->tokenize({class_noun}).tokens[0][1].item<std::int64_t>()]);
    }

    CharacterBundle bundle;
    try {
        const auto dtype = model.unet->conv_in->weight.scalar_type();
        std::vector<torch::Tensor> char_latents;
        {
            torch::NoGradGuard no_grad;
            for (const auto& img : images) {
                char_latents.push_back(model.codec->encode(img.unsqueeze(0).to(dtype)).squeeze(0));
            }
        }
        auto params = model.set_trainable(TrainPhase::lora);
        torch::optim::Adam optimizer(params, torch::optim::AdamOptions(options.lr));
        const std::string char_prompt = "a " + token + " " + class_noun;
        const std::string reg_prompt = "a " + class_noun;
        const auto n_char = static_cast<std::int64_t>(char_latents.size());
        const auto n_reg = static_cast<std::int64_t>(regularization_latents.size());
        TrainStepOptions step_options;
        step_options.cond_dropout = options.cond_dropout;
        for (int step = 0; step < options.steps; ++step) {
            std::vector<TrainingExample> batch;
            auto pick = torch::randint(0, n_char, {options.batch_size}, rng, torch::kLong);
            for (int i = 0; i < options.batch_size; ++i) {
                batch.push_back({char_latents[static_cast<std::size_t>(pick[i].item<std::int64_t>())], {char_prompt}});
            }
            if (n_reg > 0) {
                auto reg = torch::randint(0, n_reg, {options.batch_size}, rng, torch::kLong);
                for (int i = 0; i < options.batch_size; ++i) {
                    batch.push_back(
                        {regularization_latents[static_cast<std::size_t>(reg[i].item<std::int64_t>())], {reg_prompt}});
                }
            }
            train_step(model, schedule, batch, optimizer, rng, step_options);
        }
        model.set_trainable(TrainPhase::all);

        bundle.name = name;
        bundle.token = token;
        bundle.class_noun = class_noun;
        bundle.rank = model.options().lora_rank;
        bundle.config_hash = model.options().fingerprint();
        for (auto& [path, layer] : lora_layers(model)) {
            bundle.adapters[path] = {layer->lora_a.detach().clone(), layer->lora_b.detach().clone()};
        }
        bundle.token_embedding = model.text_encoder->token_embedding(token);
        bundle.training = {{"steps", options.steps},
                           {"lr", options.lr},
                           {"batch_size", options.batch_size},
                           {"seed", options.seed},
                           {"images", images.size()},
                           {"regularization_images", regularization_latents.size()}};
    } catch (...) {
        clear_adapters(model);
        model.text_encoder->unregister_token(token);
        throw;
    }
    clear_adapters(model);
    model.text_encoder->unregister_token(token);

    const auto after = model.group_checksums();
    for (const auto& [group, sum] : before) {
        if (group != ParamGroup::lora && after.at(group) != sum) {
            throw Error("personalization modified frozen parameter group " + to_string(group));
        }
    }
    return bundle;
}

}  // namespace talecraft::ct2i
