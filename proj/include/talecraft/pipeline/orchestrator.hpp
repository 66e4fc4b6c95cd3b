#pragma once

#include <torch/types.h>

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "talecraft/common/config.hpp"
#include "talecraft/ct2i/character.hpp"
#include "talecraft/ct2i/diffusion.hpp"
#include "talecraft/ct2i/model.hpp"
#include "talecraft/layout/text_to_layout.hpp"
#include "talecraft/pipeline/project.hpp"
#include "talecraft/s2p/story_to_prompt.hpp"

namespace talecraft::eval {
class EmbeddingBackend;
}

namespace talecraft::pipeline {

/// Cooperative cancellation flag shared between a job and its owner.
class CancelToken {
public:
    void cancel() noexcept { flag_.store(true); }
    bool cancelled() const noexcept { return flag_.load(); }
    /// Throws CancelledError once cancelled.
    void check() const;

private:
    std::atomic<bool> flag_{false};
};

/// The models behind the pipeline. Weights come from `t2l.weights` and
/// `ct2i.weights` when set, otherwise from the configured init seeds.
class Engine {
public:
    explicit Engine(Config config);
    /// Uses the given language-model client instead of `s2p.backend`.
    Engine(Config config, std::unique_ptr<s2p::LanguageModelClient> client);

    const Config& config() const noexcept { return config_; }
    s2p::LanguageModelClient& language_model() { return *client_; }
    layout::TextToLayout& layout_model() { return *t2l_; }
    ct2i::ControllableT2IImpl& image_model() { return *image_model_; }
    const ct2i::DiffusionSchedule& schedule() const noexcept { return schedule_; }
    /// Held for every use of the models; adapters are installed in place.
    std::mutex& model_mutex() noexcept { return model_mutex_; }

private:
    Config config_;
    std::unique_ptr<s2p::LanguageModelClient> client_;
    std::unique_ptr<layout::TextToLayout> t2l_;
    ct2i::ControllableT2I image_model_{nullptr};
    ct2i::DiffusionSchedule schedule_;
    std::mutex model_mutex_;
};

/// A project and the directory it lives in.
struct Workspace {
    std::filesystem::path dir;
    StoryProject project;

    void save() const { save_project(project, dir); }
    static Workspace open(const std::filesystem::path& dir) { return {dir, load_project(dir)}; }
};

struct ProjectRequest {
    std::string story;
    std::string style;
    int k = 1;
    std::uint64_t seed = 0;
    std::string id;  // empty: derived from the other fields
};

struct CharacterRequest {
    std::string name;
    std::string class_noun;
    std::vector<torch::Tensor> images;  // (3,H,W) in [0,1]
    std::string token;                  // empty: "<name>" lower-cased
};

// Long operations come in three steps so a server can run the expensive middle
// step without holding the project lock: prepare (reads the project), execute
// (uses only the engine) and commit (writes the project and its files).

struct StoryPlan {
    s2p::StoryRequest request;
    std::uint64_t seed = 0;
    std::vector<std::string> character_names;
    std::string response_key;
    /// Response stored in the project for this instruction; the client is not called.
    std::optional<std::string> cached_response;
};

struct StoryOutput {
    std::vector<Scene> scenes;
    std::vector<std::string> warnings;
    std::string response_key;
    std::string raw_response;
};

struct RenderPlan {
    int scene = 0;
    std::string prompt;
    SceneSetup setup;
    std::vector<torch::Tensor> sketches;
    std::map<std::string, std::filesystem::path> bundles;  // name -> bundle directory
    std::uint64_t seed = 0;
    int steps = 50;
    double guidance = 6.0;
};

struct RenderOutput {
    torch::Tensor image;
    std::vector<PassSeed> passes;
};

struct CharacterPlan {
    CharacterRequest request;
    std::string dir;  // relative bundle directory
    std::vector<std::string> taken_tokens;
    std::uint64_t seed = 0;
};

struct CharacterOutput {
    ct2i::CharacterBundle bundle;
    std::vector<torch::Tensor> references;  // resized training images
};

struct VideoPlan {
    int scene = 0;
    std::string preset;
    std::filesystem::path project_dir;
    std::string ref;  // relative clip directory
    std::filesystem::path image;
    std::optional<std::filesystem::path> depth;
    int frames = 48;
    int fps = 12;
    double amplitude = 0;
    double fov_deg = 60;
};

/// The one code path behind both the CLI and the HTTP API.
class Orchestrator {
public:
    explicit Orchestrator(std::shared_ptr<Engine> engine);

    Engine& engine() noexcept { return *engine_; }

    /// A new, empty project with a snapshot of the engine configuration.
    StoryProject create_project(const ProjectRequest& request) const;
    /// Creates the directory and writes the project file. Throws ConflictError
    /// if a project already exists there.
    Workspace create_workspace(const std::filesystem::path& dir, const ProjectRequest& request) const;

    /// Story -> K prompts -> one sampled layout per prompt. Replaces any
    /// existing scenes. Stage failures surface as StageError.
    void run_story(Workspace& ws, const CancelToken* cancel = nullptr);
    StoryPlan prepare_story(const Workspace& ws) const;
    StoryOutput execute_story(const StoryPlan& plan, const CancelToken* cancel = nullptr);
    void commit_story(Workspace& ws, StoryOutput output);

    /// Replaces a scene's setup after validation, pushing the old one on the
    /// undo stack. Marks only that scene dirty; its image is kept.
    void edit_layout(Workspace& ws, int scene, SceneSetup setup);
    /// Restores the previous setup. Returns false if there is nothing to undo.
    bool undo_layout(Workspace& ws, int scene);
    /// Stores an uploaded sketch under the scene directory and returns its reference.
    std::string store_sketch(Workspace& ws, int scene, std::size_t object, const torch::Tensor& sketch);
    /// Throws ValidationError listing every problem with the setup.
    void validate_setup(const Workspace& ws, const SceneSetup& setup) const;

    /// Renders with `seed`, the scene's stored seed, or a derived one, in that order.
    void render_scene(Workspace& ws, int scene, std::optional<std::uint64_t> seed = std::nullopt,
                      const CancelToken* cancel = nullptr);
    RenderPlan prepare_render(const Workspace& ws, int scene, std::optional<std::uint64_t> seed) const;
    RenderOutput execute_render(const RenderPlan& plan, const CancelToken* cancel = nullptr);
    void commit_render(Workspace& ws, const RenderPlan& plan, const RenderOutput& output);

    CharacterEntry register_character(Workspace& ws, CharacterRequest request, const CancelToken* cancel = nullptr);
    CharacterPlan prepare_character(const Workspace& ws, CharacterRequest request) const;
    CharacterOutput execute_character(const CharacterPlan& plan, const CancelToken* cancel = nullptr);
    CharacterEntry commit_character(Workspace& ws, const CharacterPlan& plan, const CharacterOutput& output);

    /// Returns the relative clip directory. Throws OrderingError if the scene
    /// has no image yet.
    std::string render_video(Workspace& ws, int scene, const std::string& preset,
                             const std::optional<std::filesystem::path>& depth = std::nullopt);
    VideoPlan prepare_video(const Workspace& ws, int scene, const std::string& preset,
                            const std::optional<std::filesystem::path>& depth) const;
    /// Writes the clip into a staging directory next to its final place.
    void execute_video(const VideoPlan& plan, const CancelToken* cancel = nullptr);
    void commit_video(Workspace& ws, const VideoPlan& plan);

    /// Per-scene text similarity (with and without style) and per-character
    /// similarity of each assigned box crop to the character's references.
    nlohmann::json evaluate(const Workspace& ws, eval::EmbeddingBackend& backend) const;

private:
    std::shared_ptr<Engine> engine_;
};

/// Removes the trailing style suffix added by the prompt generator.
std::string strip_style(const std::string& prompt, const std::string& style);

/// Project id derived from the request contents: 12 hex digits.
std::string derive_project_id(const ProjectRequest& request);

}  // namespace talecraft::pipeline
