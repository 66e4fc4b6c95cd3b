#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "talecraft/common/config.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/common/image_io.hpp"
#include "talecraft/ct2i/toy_data.hpp"
#include "talecraft/ct2i/trainer.hpp"
#include "talecraft/eval/eval.hpp"
#include "talecraft/i2v/animate.hpp"
#include "talecraft/layout/corpus.hpp"
#include "talecraft/pipeline/orchestrator.hpp"
#include "talecraft/pipeline/server.hpp"

namespace fs = std::filesystem;
using namespace talecraft;

namespace {

struct GlobalOptions {
    std::string config_file;
    std::vector<std::string> overrides;
};

Config cli_overrides(const GlobalOptions& g) {
    Config c;
    if (!g.config_file.empty()) c = Config::load(g.config_file);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return c;
}

/// Defaults, then the config file, then --set values.
Config effective_config(const GlobalOptions& g) {
    auto c = Config::defaults();
    c.merge(cli_overrides(g));
    return c;
}

/// A project's own configuration snapshot with command-line overrides on top.
pipeline::Orchestrator orchestrator_for(const pipeline::Workspace& ws, const GlobalOptions& g) {
    auto c = ws.project.config;
    c.merge(cli_overrides(g));
    return pipeline::Orchestrator(std::make_shared<pipeline::Engine>(c));
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

nlohmann::json scene_summary(const pipeline::Scene& s) {
    return {{"scene", s.index},     {"prompt", s.prompt}, {"objects", s.setup.layout.objects.size()},
            {"image", s.image},     {"seed", s.seed},     {"passes", s.passes.size()},
            {"dirty", s.dirty},     {"warnings", s.warnings}};
}

std::vector<int> scene_list(const pipeline::Workspace& ws, int scene) {
    if (scene >= 0) return {scene};
    std::vector<int> all;
    for (const auto& s : ws.project.scenes) all.push_back(s.index);
    return all;
}

pipeline::ApiServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Story visualization: prompts, layouts, images and clips from a story."};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_file, "key=value configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "override one configuration key (key=value)");

    // run
    auto* run = app.add_subcommand("run", "create a project from a story and lay out its scenes");
    std::string story_file, style, out_dir, project_id;
    int k = 4;
    std::uint64_t seed = 0;
    run->add_option("--story", story_file, "story text file")->required()->check(CLI::ExistingFile);
    run->add_option("--style", style, "style keyword, e.g. \"oil painting\"");
    run->add_option("-k", k, "number of scenes")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "project seed");
    run->add_option("--out", out_dir, "project directory (default: ./<project id>)");
    run->add_option("--id", project_id, "project id");
    bool render_all = false;
    run->add_flag("--render", render_all, "render every scene after layout");

    // layout
    auto* lay = app.add_subcommand("layout", "show, replace or undo a scene layout");
    std::string project_dir, layout_file;
    int scene = 0;
    bool undo = false;
    lay->add_option("--project", project_dir)->required()->check(CLI::ExistingDirectory);
    lay->add_option("--scene", scene)->required();
    lay->add_option("--set-file", layout_file, "JSON scene setup to store")->check(CLI::ExistingFile);
    lay->add_flag("--undo", undo, "restore the previous layout");

    // render
    auto* render = app.add_subcommand("render", "render scene images");
    std::optional<std::uint64_t> render_seed;
    int render_scene = -1;
    render->add_option("--project", project_dir)->required()->check(CLI::ExistingDirectory);
    render->add_option("--scene", render_scene, "scene index (default: all)");
    render->add_option("--seed", render_seed, "explicit seed (default: stored or derived)");

    // video
    auto* video = app.add_subcommand("video", "animate a rendered scene");
    std::string preset = "zoom-in", depth_file;
    bool mux = false;
    video->add_option("--project", project_dir)->required()->check(CLI::ExistingDirectory);
    video->add_option("--scene", scene)->required();
    video->add_option("--preset", preset)->check(CLI::IsMember(i2v::preset_names()));
    video->add_option("--depth", depth_file, "16-bit depth image in millimetres")->check(CLI::ExistingFile);
    video->add_flag("--mux", mux, "assemble clip.mp4 with the external muxer");

    // character add
    auto* character = app.add_subcommand("character", "manage personalized characters");
    character->require_subcommand(1);
    auto* add = character->add_subcommand("add", "personalize a character from 5-9 images");
    std::string name, class_noun, token;
    std::vector<std::string> image_files;
    add->add_option("--project", project_dir)->required()->check(CLI::ExistingDirectory);
    add->add_option("--name", name)->required();
    add->add_option("--class", class_noun, "class noun, e.g. dog")->required();
    add->add_option("--token", token, "special token (default: <name>)");
    add->add_option("--images", image_files)->required()->check(CLI::ExistingFile);

    // eval
    auto* ev = app.add_subcommand("eval", "embedding-space evaluation report");
    std::string backend = "mock", report_file;
    ev->add_option("--project", project_dir)->required()->check(CLI::ExistingDirectory);
    ev->add_option("--backend", backend)->check(CLI::IsMember({"mock", "plugin"}));
    ev->add_option("--out", report_file, "write the report here as well");

    // serve
    auto* serve = app.add_subcommand("serve", "serve the HTTP API");
    std::string root = "projects", host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--root", root, "directory holding projects");
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    // train
    auto* train = app.add_subcommand("train", "train model weights on synthetic data");
    train->require_subcommand(1);
    auto* train_layout = train->add_subcommand("layout", "layout denoiser on the synthetic corpus");
    auto* train_image = train->add_subcommand("image", "image denoiser on rendered toy scenes");
    std::string weights_out;
    int epochs = 0, scenes = 64;
    for (auto* t : {train_layout, train_image}) {
        t->add_option("--out", weights_out, "weights file")->required();
        t->add_option("--epochs", epochs, "epochs (default from config)");
        t->add_option("--seed", seed);
    }
    std::string corpus_kind, corpus_dir;
    train_layout->add_option("--corpus", corpus_kind, "synthetic or object365-subset (default: t2l.corpus)")
        ->check(CLI::IsMember({"synthetic", "object365-subset"}));
    train_layout->add_option("--corpus-dir", corpus_dir, "annotation directory (default: t2l.corpus_dir)")
        ->check(CLI::ExistingDirectory);
    train_image->add_option("--scenes", scenes, "number of toy scenes");

    // config
    auto* cfg = app.add_subcommand("config", "print the effective configuration");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            auto config = effective_config(g);
            pipeline::Orchestrator orch(std::make_shared<pipeline::Engine>(config));
            pipeline::ProjectRequest req{read_text(story_file), style, k, seed, project_id};
            const auto project = orch.create_project(req);
            const fs::path dir = out_dir.empty() ? fs::path(project.id) : fs::path(out_dir);
            auto ws = orch.create_workspace(dir, req);
            orch.run_story(ws);
            if (render_all) {
                for (const auto& s : ws.project.scenes) orch.render_scene(ws, s.index);
            }
            nlohmann::json out = {{"project", ws.project.id}, {"dir", dir.string()}, {"warnings", ws.project.warnings}};
            for (const auto& s : ws.project.scenes) out["scenes"].push_back(scene_summary(s));
            print(out);
        } else if (lay->parsed()) {
            auto ws = pipeline::Workspace::open(project_dir);
            auto orch = orchestrator_for(ws, g);
            if (undo && !orch.undo_layout(ws, scene)) throw OrderingError("nothing to undo");
            if (!layout_file.empty()) {
                orch.edit_layout(ws, scene, pipeline::scene_setup_from_json(nlohmann::json::parse(read_text(layout_file))));
            }
            print(pipeline::to_json(ws.project.scene(scene)));
        } else if (render->parsed()) {
            auto ws = pipeline::Workspace::open(project_dir);
            auto orch = orchestrator_for(ws, g);
            nlohmann::json out = nlohmann::json::array();
            for (int i : scene_list(ws, render_scene)) {
                orch.render_scene(ws, i, render_seed);
                out.push_back(scene_summary(ws.project.scene(i)));
            }
            print(out);
        } else if (video->parsed()) {
            auto ws = pipeline::Workspace::open(project_dir);
            auto orch = orchestrator_for(ws, g);
            std::optional<fs::path> depth;
            if (!depth_file.empty()) depth = depth_file;
            const auto ref = orch.render_video(ws, scene, preset, depth);
            const auto dir = ws.dir / ref;
            const int fps = ws.project.config.get_int("i2v.fps", 12);
            auto command = ws.project.config.get_string("i2v.mux_command", "");
            if (command.empty()) command = i2v::mux_command(dir, fps);
            nlohmann::json out = {{"video", ref}, {"mux", command}};
            if (mux) {
                const int rc = std::system(command.c_str());
                out["mux_exit"] = rc;
                if (rc != 0) throw Error("muxer failed with status " + std::to_string(rc));
            }
            print(out);
        } else if (add->parsed()) {
            auto ws = pipeline::Workspace::open(project_dir);
            auto orch = orchestrator_for(ws, g);
            std::vector<torch::Tensor> images;
            for (const auto& f : image_files) images.push_back(load_rgb(f));
            const auto entry = orch.register_character(ws, {name, class_noun, images, token});
            print({{"name", entry.name}, {"token", entry.token}, {"dir", entry.dir}});
        } else if (ev->parsed()) {
            auto ws = pipeline::Workspace::open(project_dir);
            auto orch = orchestrator_for(ws, g);
            auto config = ws.project.config;
            config.merge(cli_overrides(g));
            auto embedder = eval::make_backend(backend, config);
            const auto report = orch.evaluate(ws, *embedder);
            if (!report_file.empty()) std::ofstream(report_file) << report.dump(2) << '\n';
            print(report);
        } else if (serve->parsed()) {
            auto orch = std::make_shared<pipeline::Orchestrator>(
                std::make_shared<pipeline::Engine>(effective_config(g)));
            pipeline::ApiServer server(orch, root);
            const int bound = server.bind(host, port);
            g_server = &server;
            std::signal(SIGINT, [](int) {
                if (g_server) g_server->stop();
            });
            std::cerr << "listening on http://" << host << ":" << bound << '\n';
            server.listen();
            g_server = nullptr;
        } else if (train_layout->parsed()) {
            auto config = effective_config(g);
            auto options = layout::TextToLayoutOptions::from_config(config);
            layout::TextToLayout t2l(options, seed);
            const int m = options.denoiser.vocab.m_bins;
            if (corpus_kind.empty()) corpus_kind = config.get_string("t2l.corpus");
            if (corpus_dir.empty()) corpus_dir = config.get_string("t2l.corpus_dir");
            std::vector<layout::Layout> corpus;
            if (corpus_kind == "synthetic") {
                corpus = layout::synthetic_corpus(static_cast<std::size_t>(config.get_int("t2l.corpus_size")), m,
                                                  options.denoiser.n_max, seed);
            } else if (corpus_kind == "object365-subset") {
                if (corpus_dir.empty()) throw ConfigError("object365-subset needs --corpus-dir or t2l.corpus_dir");
                corpus = layout::load_object365_subset(corpus_dir, m, options.denoiser.n_max);
            } else {
                throw ConfigError("unknown corpus kind: " + corpus_kind);
            }
            layout::LayoutTrainOptions to;
            to.epochs = epochs > 0 ? epochs : config.get_int("t2l.epochs");
            to.batch_size = config.get_int("t2l.batch_size");
            to.lr = config.get_double("t2l.lr");
            to.lambda = options.lambda;
            to.seed = seed;
            t2l.train(corpus, to, [](int epoch, double loss) {
                std::cerr << "epoch " << epoch << " loss " << loss << '\n';
            });
            t2l.save(weights_out);
            print({{"weights", weights_out}, {"corpus", corpus.size()}});
        } else if (train_image->parsed()) {
            auto config = effective_config(g);
            torch::manual_seed(static_cast<std::uint64_t>(config.get_int("ct2i.init_seed")));
            ct2i::ControllableT2I model(ct2i::CT2IOptions::from_config(config));
            ct2i::DiffusionSchedule schedule(config.get_int("ct2i.train_timesteps"));
            ct2i::ToySceneOptions toy;
            toy.image_size = static_cast<int>(model->options().image_size);
            const auto data = ct2i::make_toy_dataset(scenes, seed, toy);
            std::vector<torch::Tensor> images;
            for (const auto& s : data) images.push_back(s.image);
            const double codec_mse = ct2i::train_codec(*model->codec, images, {.seed = seed});
            std::vector<ct2i::TrainingExample> examples;
            for (const auto& s : data) examples.push_back(ct2i::make_training_example(*model, s, true, true));
            ct2i::DenoiserTrainOptions dto;
            if (epochs > 0) dto.epochs = epochs;
            dto.cond_dropout = config.get_double("ct2i.cond_dropout");
            dto.inpaint_probability = 0.3;
            dto.seed = seed;
            const auto losses = ct2i::train_denoiser(*model, schedule, examples, dto, [](int epoch, double loss) {
                std::cerr << "epoch " << epoch << " loss " << loss << '\n';
            });
            model->save(weights_out);
            print({{"weights", weights_out}, {"codec_mse", codec_mse}, {"final_loss", losses.back()}});
        } else if (cfg->parsed()) {
            std::cout << effective_config(g).to_string();
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
