#include "talecraft/pipeline/orchestrator.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "talecraft/common/error.hpp"
#include "talecraft/common/hash.hpp"
#include "talecraft/common/image_io.hpp"
#include "talecraft/ct2i/compose.hpp"
#include "talecraft/ct2i/sketch.hpp"
#include "talecraft/ct2i/text_encoder.hpp"
#include "talecraft/eval/eval.hpp"
#include "talecraft/i2v/animate.hpp"

namespace talecraft::pipeline {

namespace fs = std::filesystem;

namespace {

/// Answers with a stored response.
class ReplayClient final : public s2p::LanguageModelClient {
public:
    explicit ReplayClient(std::string response) : response_(std::move(response)) {}
    std::string complete(const std::string&) override { return response_; }
    std::string name() const override { return "replay"; }

private:
    std::string response_;
};

std::mutex& global_seed_mutex() {
    static std::mutex m;
    return m;
}

Config with_defaults(const Config& overrides) {
    auto c = Config::defaults();
    c.merge(overrides);
    return c;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string scene_dir(int scene) { return "scenes/" + std::to_string(scene); }

void check(const CancelToken* cancel) {
    if (cancel) cancel->check();
}

torch::Tensor resize_to(const torch::Tensor& image, std::int64_t size) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw ShapeError("character images must be (3,H,W), got " + torch::str(image.sizes()));
    }
    if (image.size(1) == size && image.size(2) == size) return image.to(torch::kFloat32);
    namespace F = torch::nn::functional;
    return F::interpolate(image.to(torch::kFloat32).unsqueeze(0),
                          F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{size, size})
                              .mode(torch::kBilinear)
                              .align_corners(false)
                              .antialias(true))
        .squeeze(0)
        .clamp(0.0, 1.0);
}

void write_png(const fs::path& path, const torch::Tensor& image) {
    const auto bytes = encode_png(image);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

bool valid_name(const std::string& name) {
    if (name.empty() || name.size() > 64) return false;
    return std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

void refresh_dirty(Scene& scene) {
    scene.dirty = scene.image.empty() || fingerprint(scene.setup) != scene.rendered_setup;
}

}  // namespace

void CancelToken::check() const {
    if (cancelled()) throw CancelledError("cancelled");
}

Engine::Engine(Config config) : Engine(config, s2p::make_client(with_defaults(config))) {}

Engine::Engine(Config config, std::unique_ptr<s2p::LanguageModelClient> client)
    : config_(with_defaults(config)),
      client_(std::move(client)),
      schedule_(config_.get_int("ct2i.train_timesteps")) {
    t2l_ = std::make_unique<layout::TextToLayout>(layout::TextToLayoutOptions::from_config(config_),
                                                  static_cast<std::uint64_t>(config_.get_int("t2l.init_seed")));
    if (const auto w = config_.get_string("t2l.weights"); !w.empty()) t2l_->load(w);
    {
        std::lock_guard lock(global_seed_mutex());
        torch::manual_seed(static_cast<std::uint64_t>(config_.get_int("ct2i.init_seed")));
        image_model_ = ct2i::ControllableT2I(ct2i::CT2IOptions::from_config(config_));
    }
    if (const auto w = config_.get_string("ct2i.weights"); !w.empty()) image_model_->load(w);
    image_model_->eval();
}

Orchestrator::Orchestrator(std::shared_ptr<Engine> engine) : engine_(std::move(engine)) {
    if (!engine_) throw InvalidRequestError("orchestrator needs an engine");
}

std::string strip_style(const std::string& prompt, const std::string& style) {
    const auto suffix = s2p::style_suffix(style);
    if (suffix.empty()) return prompt;
    const auto lp = lower(prompt);
    const auto ls = lower(suffix);
    if (lp == ls) return {};
    if (lp.size() > ls.size() && lp.ends_with(" " + ls)) return prompt.substr(0, prompt.size() - ls.size() - 1);
    return prompt;
}

std::string derive_project_id(const ProjectRequest& request) {
    const auto key = request.story + '\x1f' + request.style + '\x1f' + std::to_string(request.k) + '\x1f' +
                     std::to_string(request.seed);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%012llx", static_cast<unsigned long long>(fnv1a(key) >> 16));
    return buf;
}

StoryProject Orchestrator::create_project(const ProjectRequest& request) const {
    if (request.k < 1) throw InvalidRequestError("k must be at least 1");
    StoryProject p;
    p.id = request.id.empty() ? derive_project_id(request) : request.id;
    if (!valid_name(p.id)) throw InvalidRequestError("project id may use letters, digits, '-' and '_': " + p.id);
    p.story = request.story;
    p.style = request.style;
    p.k = request.k;
    p.seed = request.seed;
    p.config = engine_->config();
    return p;
}

Workspace Orchestrator::create_workspace(const fs::path& dir, const ProjectRequest& request) const {
    if (fs::exists(dir / kProjectFile)) throw ConflictError("a project already exists at " + dir.string());
    Workspace ws{dir, create_project(request)};
    fs::create_directories(dir);
    ws.save();
    return ws;
}

// ---- story ----

StoryPlan Orchestrator::prepare_story(const Workspace& ws) const {
    StoryPlan plan;
    plan.request = {ws.project.story, "", ws.project.style, ws.project.k};
    plan.request.validate();
    plan.seed = ws.project.seed;
    for (const auto& c : ws.project.characters) plan.character_names.push_back(c.name);
    plan.response_key = response_key(engine_->language_model().name(), s2p::build_instruction(plan.request));
    if (auto it = ws.project.llm_responses.find(plan.response_key); it != ws.project.llm_responses.end()) {
        plan.cached_response = it->second;
    }
    return plan;
}

StoryOutput Orchestrator::execute_story(const StoryPlan& plan, const CancelToken* cancel) {
    check(cancel);
    StoryOutput out;
    s2p::GenerationResult generated;
    try {
        if (plan.cached_response) {
            ReplayClient replay(*plan.cached_response);
            generated = s2p::generate_prompts(plan.request, replay);
        } else {
            std::lock_guard lock(engine_->model_mutex());
            generated = s2p::generate_prompts(plan.request, engine_->language_model());
        }
    } catch (const std::exception& e) {
        throw StageError("s2p", -1, e.what());
    }
    out.warnings = s2p::character_name_warnings(generated.prompts, plan.character_names);
    out.response_key = plan.response_key;
    out.raw_response = generated.raw_response;
    for (const auto& p : generated.prompts.prompts) {
        check(cancel);
        Scene scene;
        scene.index = p.scene_index;
        scene.prompt = p.text;
        scene.plain_prompt = strip_style(p.text, plan.request.style);
        scene.layout_seed = derive_seed(plan.seed, "layout", static_cast<std::uint64_t>(p.scene_index));
        try {
            std::lock_guard lock(engine_->model_mutex());
            auto result = engine_->layout_model().generate(scene.plain_prompt, scene.layout_seed);
            scene.setup.layout = std::move(result.layout);
        } catch (const std::exception& e) {
            throw StageError("t2l", p.scene_index, e.what());
        }
        if (scene.setup.layout.objects.empty()) {
            scene.warnings.push_back("no noun in the prompt maps to a layout category; the layout is empty");
        }
        out.scenes.push_back(std::move(scene));
    }
    return out;
}

void Orchestrator::commit_story(Workspace& ws, StoryOutput output) {
    fs::remove_all(ws.dir / "scenes");
    ws.project.scenes = std::move(output.scenes);
    ws.project.warnings = std::move(output.warnings);
    if (!output.response_key.empty()) ws.project.llm_responses[output.response_key] = std::move(output.raw_response);
    ws.save();
}

void Orchestrator::run_story(Workspace& ws, const CancelToken* cancel) {
    commit_story(ws, execute_story(prepare_story(ws), cancel));
}

// ---- layout editing ----

void Orchestrator::validate_setup(const Workspace& ws, const SceneSetup& setup) const {
    auto issues = layout::validate(setup.layout);
    const auto n = setup.layout.objects.size();
    for (const auto& [index, name] : setup.characters) {
        if (index >= n) {
            issues.push_back("character " + name + " assigned to missing object " + std::to_string(index));
        } else if (!ws.project.find_character(name)) {
            issues.push_back("object " + std::to_string(index) + ": unknown character " + name);
        }
    }
    for (const auto& [index, ref] : setup.sketches) {
        if (index >= n) {
            issues.push_back("sketch attached to missing object " + std::to_string(index));
            continue;
        }
        try {
            resolve_asset(ws.dir, ref);
        } catch (const Error& e) {
            issues.push_back("object " + std::to_string(index) + ": " + e.what());
        }
    }
    if (!(setup.sketch_beta >= 0.0 && setup.sketch_beta <= 2.0)) {
        issues.push_back("sketch_beta must lie in [0, 2]");
    }
    if (!issues.empty()) throw ValidationError("invalid scene layout", issues);
}

void Orchestrator::edit_layout(Workspace& ws, int scene_index, SceneSetup setup) {
    auto& scene = ws.project.scene(scene_index);
    validate_setup(ws, setup);
    if (setup == scene.setup) return;
    scene.undo.push_back(scene.setup);
    const auto depth = static_cast<std::size_t>(std::max(1, ws.project.config.get_int("pipeline.undo_depth", 16)));
    while (scene.undo.size() > depth) scene.undo.erase(scene.undo.begin());
    scene.setup = std::move(setup);
    refresh_dirty(scene);
    ws.save();
}

bool Orchestrator::undo_layout(Workspace& ws, int scene_index) {
    auto& scene = ws.project.scene(scene_index);
    if (scene.undo.empty()) return false;
    scene.setup = std::move(scene.undo.back());
    scene.undo.pop_back();
    refresh_dirty(scene);
    ws.save();
    return true;
}

std::string Orchestrator::store_sketch(Workspace& ws, int scene_index, std::size_t object, const torch::Tensor& sketch) {
    ws.project.scene(scene_index);
    auto gray = sketch;
    if (gray.dim() == 2) gray = gray.unsqueeze(0);
    if (gray.dim() != 3 || (gray.size(0) != 1 && gray.size(0) != 3)) {
        throw ShapeError("sketch must be (1,H,W) or (3,H,W), got " + torch::str(sketch.sizes()));
    }
    if (gray.size(0) == 3) gray = gray.mean(0, true);
    const auto bytes = encode_png(gray);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()))));
    const auto ref = scene_dir(scene_index) + "/sketches/object" + std::to_string(object) + "-" + hash + ".png";
    write_file_atomic(ws.dir / ref, std::string(bytes.begin(), bytes.end()));
    return ref;
}

// ---- rendering ----

RenderPlan Orchestrator::prepare_render(const Workspace& ws, int scene_index, std::optional<std::uint64_t> seed) const {
    const auto& scene = ws.project.scene(scene_index);
    RenderPlan plan;
    plan.scene = scene_index;
    plan.prompt = scene.prompt;
    plan.setup = scene.setup;
    for (const auto& [index, name] : scene.setup.characters) {
        const auto* entry = ws.project.find_character(name);
        if (!entry) throw NotFoundError("character " + name + " is not registered");
        plan.bundles[name] = ws.dir / entry->dir;
    }
    if (!scene.setup.sketches.empty()) {
        plan.sketches.resize(scene.setup.layout.objects.size());
        for (const auto& [index, ref] : scene.setup.sketches) {
            plan.sketches.at(index) = load_gray(resolve_asset(ws.dir, ref));
        }
    }
    if (seed) {
        plan.seed = *seed;
    } else if (!scene.image.empty()) {
        plan.seed = scene.seed;
    } else {
        plan.seed = derive_seed(ws.project.seed, "render", static_cast<std::uint64_t>(scene_index));
    }
    plan.steps = ws.project.config.get_int("ct2i.ddim_steps", 50);
    plan.guidance = ws.project.config.get_double("ct2i.guidance", 6.0);
    return plan;
}

RenderOutput Orchestrator::execute_render(const RenderPlan& plan, const CancelToken* cancel) {
    check(cancel);
    std::map<std::string, ct2i::CharacterBundle> bundles;
    for (const auto& [name, dir] : plan.bundles) bundles.emplace(name, ct2i::load_bundle(dir));

    ct2i::ComposeRequest request;
    request.prompt = plan.prompt;
    request.layout = plan.setup.layout;
    request.sketches = plan.sketches;
    request.sketch_beta = plan.setup.sketch_beta;
    request.characters = plan.setup.characters;
    request.sample = {plan.steps, plan.guidance, plan.seed};

    RenderOutput out;
    std::lock_guard lock(engine_->model_mutex());
    auto result = ct2i::iterative_compose(engine_->image_model(), engine_->schedule(), request, bundles,
                                          [&](const ct2i::PassRecord&) { check(cancel); });
    out.image = result.image;
    for (const auto& p : result.passes) out.passes.push_back({p.character, p.object_index, p.seed});
    return out;
}

void Orchestrator::commit_render(Workspace& ws, const RenderPlan& plan, const RenderOutput& output) {
    auto& scene = ws.project.scene(plan.scene);
    if (scene.prompt != plan.prompt) throw ConflictError("scene " + std::to_string(plan.scene) + " changed while rendering");
    const auto ref = scene_dir(plan.scene) + "/image.png";
    write_png(ws.dir / ref, output.image);
    scene.image = ref;
    scene.seed = plan.seed;
    scene.passes = output.passes;
    scene.rendered_setup = fingerprint(plan.setup);
    refresh_dirty(scene);
    ws.save();
}

void Orchestrator::render_scene(Workspace& ws, int scene, std::optional<std::uint64_t> seed, const CancelToken* cancel) {
    const auto plan = prepare_render(ws, scene, seed);
    commit_render(ws, plan, execute_render(plan, cancel));
}

// ---- characters ----

CharacterPlan Orchestrator::prepare_character(const Workspace& ws, CharacterRequest request) const {
    if (!valid_name(request.name)) {
        throw ValidationError("invalid character", {"name may use letters, digits, '-' and '_': " + request.name});
    }
    if (request.class_noun.empty()) throw ValidationError("invalid character", {"class noun is required"});
    if (request.images.size() < 5 || request.images.size() > 9) {
        throw ValidationError("invalid character",
                              {"5 to 9 images are required, got " + std::to_string(request.images.size())});
    }
    if (ws.project.find_character(request.name)) throw ConflictError("character already registered: " + request.name);
    if (request.token.empty()) request.token = "<" + lower(request.name) + ">";
    if (!ct2i::is_special_token(request.token)) {
        throw RegistrationError("character token must look like <name>: " + request.token);
    }
    CharacterPlan plan;
    for (const auto& c : ws.project.characters) {
        if (c.token == request.token) throw ConflictError("token already used by " + c.name + ": " + request.token);
        plan.taken_tokens.push_back(c.token);
    }
    plan.dir = "characters/" + request.name;
    plan.seed = derive_seed(ws.project.seed, "character:" + request.name);
    plan.request = std::move(request);
    return plan;
}

CharacterOutput Orchestrator::execute_character(const CharacterPlan& plan, const CancelToken* cancel) {
    check(cancel);
    const auto& cfg = engine_->config();
    std::lock_guard lock(engine_->model_mutex());
    auto& model = engine_->image_model();
    CharacterOutput out;
    for (const auto& im : plan.request.images) out.references.push_back(resize_to(im, model.options().image_size));

    const auto regularization = ct2i::render_regularization_set(
        model, engine_->schedule(), plan.request.class_noun, cfg.get_int("ct2i.reg_images"),
        derive_seed(plan.seed, "regularization"), cfg.get_int("ct2i.ddim_steps"), cfg.get_double("ct2i.guidance"));
    check(cancel);

    ct2i::PersonalizationOptions options;
    options.steps = cfg.get_int("ct2i.personalize_steps");
    options.lr = cfg.get_double("ct2i.personalize_lr");
    options.seed = plan.seed;
    out.bundle = ct2i::train_personalization(model, engine_->schedule(), plan.request.name, plan.request.token,
                                             plan.request.class_noun, out.references, regularization, options,
                                             plan.taken_tokens);
    out.bundle.reference_images.clear();
    for (std::size_t i = 0; i < out.references.size(); ++i) {
        out.bundle.reference_images.push_back("ref_" + std::to_string(i) + ".png");
    }
    out.bundle.training["regularization_images"] = cfg.get_int("ct2i.reg_images");
    return out;
}

CharacterEntry Orchestrator::commit_character(Workspace& ws, const CharacterPlan& plan, const CharacterOutput& output) {
    if (ws.project.find_character(plan.request.name)) {
        throw ConflictError("character already registered: " + plan.request.name);
    }
    for (const auto& c : ws.project.characters) {
        if (c.token == plan.request.token) throw ConflictError("token already used by " + c.name);
    }
    const auto dir = ws.dir / plan.dir;
    fs::remove_all(dir);
    ct2i::save_bundle(output.bundle, dir);
    for (std::size_t i = 0; i < output.references.size(); ++i) {
        write_png(dir / "refs" / output.bundle.reference_images[i], output.references[i]);
    }
    CharacterEntry entry{plan.request.name, plan.request.token, plan.request.class_noun, plan.dir};
    ws.project.characters.push_back(entry);
    ws.save();
    return entry;
}

CharacterEntry Orchestrator::register_character(Workspace& ws, CharacterRequest request, const CancelToken* cancel) {
    const auto plan = prepare_character(ws, std::move(request));
    return commit_character(ws, plan, execute_character(plan, cancel));
}

// ---- video ----

VideoPlan Orchestrator::prepare_video(const Workspace& ws, int scene_index, const std::string& preset,
                                      const std::optional<fs::path>& depth) const {
    const auto& scene = ws.project.scene(scene_index);
    if (scene.image.empty()) {
        throw OrderingError("scene " + std::to_string(scene_index) + " has no image yet; render it first");
    }
    const auto parsed = i2v::parse_preset(preset);
    const auto& cfg = ws.project.config;
    VideoPlan plan;
    plan.scene = scene_index;
    plan.preset = i2v::to_string(parsed);
    plan.project_dir = ws.dir;
    plan.ref = scene_dir(scene_index) + "/video_" + plan.preset;
    plan.image = resolve_asset(ws.dir, scene.image);
    plan.depth = depth;
    plan.frames = cfg.get_int("i2v.frames", 48);
    plan.fps = cfg.get_int("i2v.fps", 12);
    const auto amp = cfg.get_string("i2v.amplitude", "");
    plan.amplitude = amp.empty() ? i2v::default_amplitude(parsed) : cfg.get_double("i2v.amplitude");
    plan.fov_deg = cfg.get_double("i2v.fov_deg", 60.0);
    return plan;
}

void Orchestrator::execute_video(const VideoPlan& plan, const CancelToken* cancel) {
    check(cancel);
    const auto image = load_rgb(plan.image);
    const int h = static_cast<int>(image.size(1));
    const int w = static_cast<int>(image.size(2));
    const auto depth = plan.depth ? i2v::load_depth(*plan.depth) : i2v::heuristic_depth(w, h);
    const auto path = i2v::path_preset(plan.preset, plan.frames, plan.amplitude, depth.median());
    const auto clip = i2v::animate(image, depth, path, i2v::Intrinsics::from_fov(w, h, plan.fov_deg));
    check(cancel);
    const auto staging = plan.project_dir / (plan.ref + ".partial");
    fs::remove_all(staging);
    i2v::write_clip(clip, staging, plan.fps);
}

void Orchestrator::commit_video(Workspace& ws, const VideoPlan& plan) {
    auto& scene = ws.project.scene(plan.scene);
    const auto final_dir = ws.dir / plan.ref;
    fs::remove_all(final_dir);
    fs::rename(ws.dir / (plan.ref + ".partial"), final_dir);
    scene.videos[plan.preset] = plan.ref;
    ws.save();
}

std::string Orchestrator::render_video(Workspace& ws, int scene, const std::string& preset,
                                       const std::optional<fs::path>& depth) {
    const auto plan = prepare_video(ws, scene, preset, depth);
    execute_video(plan);
    commit_video(ws, plan);
    return plan.ref;
}

// ---- evaluation ----

nlohmann::json Orchestrator::evaluate(const Workspace& ws, eval::EmbeddingBackend& backend) const {
    std::vector<eval::SceneSample> scenes;
    std::map<std::string, eval::CharacterSample> characters;
    for (const auto& c : ws.project.characters) {
        auto bundle = ct2i::load_bundle(ws.dir / c.dir);
        eval::CharacterSample sample{c.name, {}, {}};
        for (const auto& ref : bundle.reference_images) {
            sample.references.push_back(load_rgb(ws.dir / c.dir / "refs" / ref));
        }
        characters.emplace(c.name, std::move(sample));
    }
    for (const auto& s : ws.project.scenes) {
        if (s.image.empty()) continue;
        auto image = load_rgb(resolve_asset(ws.dir, s.image));
        scenes.push_back({s.index, s.plain_prompt, s.prompt, image});
        for (const auto& [index, name] : s.setup.characters) {
            auto it = characters.find(name);
            if (it == characters.end() || index >= s.setup.layout.objects.size()) continue;
            const auto r = ct2i::box_to_pixels(s.setup.layout.objects[index].bbox, image.size(2), image.size(1));
            it->second.crops.emplace_back(s.index,
                                          image.narrow(1, r.y0, r.y1 - r.y0).narrow(2, r.x0, r.x1 - r.x0).clone());
        }
    }
    std::vector<eval::CharacterSample> list;
    for (const auto& c : ws.project.characters) list.push_back(std::move(characters.at(c.name)));
    auto report = eval::evaluate(scenes, list, backend);
    report["project"] = ws.project.id;
    return report;
}

}  // namespace talecraft::pipeline
