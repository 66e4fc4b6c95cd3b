#include "talecraft/pipeline/server.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>

#include "talecraft/common/error.hpp"
#include "talecraft/common/image_io.hpp"

namespace talecraft::pipeline {

namespace fs = std::filesystem;

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("request body is not valid JSON: ") + e.what(), req.body);
    }
}

int scene_index(const httplib::Request& req) {
    return std::stoi(req.matches[2].str());
}

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string content_type(const fs::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".png") return "image/png";
    if (ext == ".json") return "application/json";
    if (ext == ".mp4") return "video/mp4";
    return "application/octet-stream";
}

nlohmann::json scene_view(const Scene& s) {
    auto setup = to_json(s.setup);
    nlohmann::json j = {{"scene", s.index},
                        {"prompt", s.prompt},
                        {"layout", setup["layout"]},
                        {"characters", setup["characters"]},
                        {"sketches", setup["sketches"]},
                        {"sketch_beta", s.setup.sketch_beta},
                        {"dirty", s.dirty},
                        {"image", s.image},
                        {"seed", s.seed},
                        {"videos", s.videos},
                        {"warnings", s.warnings},
                        {"undo_depth", s.undo.size()}};
    return j;
}

nlohmann::json parse_json_text(const std::string& text) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("field is not valid JSON: ") + e.what(), text);
    }
}

SceneSetup parse_setup(const nlohmann::json& j) {
    try {
        return scene_setup_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed layout body: ") + e.what(), j.dump());
    }
}

}  // namespace

ApiServer::ApiServer(std::shared_ptr<Orchestrator> orchestrator, fs::path root)
    : orchestrator_(std::move(orchestrator)), root_(std::move(root)), server_(std::make_unique<httplib::Server>()) {
    fs::create_directories(root_);
    routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void ApiServer::listen() { server_->listen_after_bind(); }
void ApiServer::stop() { server_->stop(); }
void ApiServer::wait_until_ready() { server_->wait_until_ready(); }

std::shared_ptr<ApiServer::Slot> ApiServer::slot(const std::string& id) {
    std::lock_guard lock(slots_mutex_);
    if (auto it = slots_.find(id); it != slots_.end()) return it->second;
    const auto dir = root_ / id;
    auto s = std::make_shared<Slot>();
    s->ws = Workspace::open(dir);
    slots_.emplace(id, s);
    return s;
}

void ApiServer::routes() {
    auto& srv = *server_;
    auto orch = orchestrator_;

    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            send_json(res, http_status(e), {{"error", describe_error(e)}});
        } catch (...) {
            send_json(res, 500, {{"error", {{"type", "internal"}, {"message", "unknown error"}}}});
        }
    });

    srv.Post("/projects", [this, orch](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        ProjectRequest r;
        try {
            r.story = body.at("story").get<std::string>();
            r.style = body.value("style", "");
            r.k = body.value("k", 1);
            r.seed = body.value("seed", std::uint64_t{0});
            r.id = body.value("id", "");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed project request: ") + e.what(), req.body);
        }
        auto project = orch->create_project(r);
        std::lock_guard lock(slots_mutex_);
        if (slots_.count(project.id)) throw ConflictError("project already exists: " + project.id);
        auto s = std::make_shared<Slot>();
        s->ws = orch->create_workspace(root_ / project.id, r);
        slots_.emplace(project.id, s);
        send_json(res, 201, {{"id", project.id}, {"project", to_json(s->ws.project)}});
    });

    srv.Post(R"(/projects/([^/]+)/run)", [this, orch](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto s = slot(id);
        StoryPlan plan;
        {
            std::shared_lock lock(s->mutex);
            plan = orch->prepare_story(s->ws);
        }
        const auto job = jobs_.submit("run", id, -1, "s2p", [s, orch, plan](const CancelToken& cancel) {
            auto output = orch->execute_story(plan, &cancel);
            std::unique_lock lock(s->mutex);
            orch->commit_story(s->ws, std::move(output));
            return nlohmann::json{{"scenes", s->ws.project.scenes.size()}, {"warnings", s->ws.project.warnings}};
        });
        send_json(res, 202, {{"job", job}});
    });

    srv.Get(R"(/projects/([^/]+)/scenes/(\d+)/layout)", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = slot(req.matches[1].str());
        std::shared_lock lock(s->mutex);
        send_json(res, 200, scene_view(s->ws.project.scene(scene_index(req))));
    });

    srv.Put(R"(/projects/([^/]+)/scenes/(\d+)/layout)", [this, orch](const httplib::Request& req,
                                                                     httplib::Response& res) {
        auto s = slot(req.matches[1].str());
        const int i = scene_index(req);
        std::unique_lock lock(s->mutex);
        if (req.is_multipart_form_data()) {
            if (!req.has_file("layout")) throw InvalidRequestError("multipart layout needs a 'layout' field");
            auto setup = parse_setup(parse_json_text(req.get_file_value("layout").content));
            for (const auto& [field, part] : req.files) {
                if (!field.starts_with("sketch_")) continue;
                std::size_t used = 0;
                const auto object = std::stoul(field.substr(7), &used);
                if (used != field.size() - 7) throw InvalidRequestError("bad sketch field name: " + field);
                setup.sketches[object] = orch->store_sketch(s->ws, i, object, decode_rgb(bytes_of(part.content)));
            }
            orch->edit_layout(s->ws, i, std::move(setup));
        } else {
            const auto body = parse_body(req);
            if (body.value("undo", false)) {
                if (!orch->undo_layout(s->ws, i)) throw OrderingError("nothing to undo");
            } else {
                orch->edit_layout(s->ws, i, parse_setup(body));
            }
        }
        send_json(res, 200, scene_view(s->ws.project.scene(i)));
    });

    srv.Post(R"(/projects/([^/]+)/scenes/(\d+)/render)", [this, orch](const httplib::Request& req,
                                                                      httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto s = slot(id);
        const int i = scene_index(req);
        const auto body = parse_body(req);
        std::optional<std::uint64_t> seed;
        if (body.contains("seed") && !body["seed"].is_null()) seed = body["seed"].get<std::uint64_t>();
        RenderPlan plan;
        {
            std::shared_lock lock(s->mutex);
            plan = orch->prepare_render(s->ws, i, seed);
        }
        const auto job = jobs_.submit("render", id, i, "ct2i", [s, orch, plan](const CancelToken& cancel) {
            auto output = orch->execute_render(plan, &cancel);
            std::unique_lock lock(s->mutex);
            orch->commit_render(s->ws, plan, output);
            const auto& scene = s->ws.project.scene(plan.scene);
            return nlohmann::json{{"image", scene.image}, {"seed", scene.seed}, {"passes", scene.passes.size()}};
        });
        send_json(res, 202, {{"job", job}});
    });

    srv.Post(R"(/projects/([^/]+)/characters)", [this, orch](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto s = slot(id);
        if (!req.is_multipart_form_data()) throw InvalidRequestError("character upload must be multipart/form-data");
        CharacterRequest r;
        if (req.has_file("name")) r.name = req.get_file_value("name").content;
        if (req.has_file("class_noun")) r.class_noun = req.get_file_value("class_noun").content;
        if (req.has_file("token")) r.token = req.get_file_value("token").content;
        for (const auto& part : req.get_file_values("images")) r.images.push_back(decode_rgb(bytes_of(part.content)));
        CharacterPlan plan;
        {
            std::shared_lock lock(s->mutex);
            plan = orch->prepare_character(s->ws, std::move(r));
        }
        const auto job = jobs_.submit("character", id, -1, "ct2i", [s, orch, plan](const CancelToken& cancel) {
            auto output = orch->execute_character(plan, &cancel);
            std::unique_lock lock(s->mutex);
            const auto entry = orch->commit_character(s->ws, plan, output);
            return nlohmann::json{{"name", entry.name}, {"token", entry.token}, {"dir", entry.dir}};
        });
        send_json(res, 202, {{"job", job}});
    });

    srv.Post(R"(/projects/([^/]+)/scenes/(\d+)/video)", [this, orch](const httplib::Request& req,
                                                                     httplib::Response& res) {
        const auto id = req.matches[1].str();
        auto s = slot(id);
        const int i = scene_index(req);
        const auto body = parse_body(req);
        VideoPlan plan;
        {
            std::shared_lock lock(s->mutex);
            std::optional<fs::path> depth;
            if (body.contains("depth")) depth = resolve_asset(s->ws.dir, body["depth"].get<std::string>());
            plan = orch->prepare_video(s->ws, i, body.value("preset", "zoom-in"), depth);
        }
        const auto job = jobs_.submit("video", id, i, "i2v", [s, orch, plan](const CancelToken& cancel) {
            orch->execute_video(plan, &cancel);
            std::unique_lock lock(s->mutex);
            orch->commit_video(s->ws, plan);
            return nlohmann::json{{"video", plan.ref}, {"frames", plan.frames}};
        });
        send_json(res, 202, {{"job", job}});
    });

    srv.Get(R"(/projects/([^/]+)/assets/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
        auto s = slot(req.matches[1].str());
        std::shared_lock lock(s->mutex);
        const auto path = resolve_asset(s->ws.dir, req.matches[2].str());
        std::ifstream in(path, std::ios::binary);
        std::ostringstream data;
        data << in.rdbuf();
        res.status = 200;
        res.set_content(data.str(), content_type(path));
    });

    srv.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, jobs_.status(req.matches[1].str()).to_json());
    });

    srv.Delete(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.matches[1].str();
        const bool cancelled = jobs_.cancel(id);
        send_json(res, 200, {{"cancelled", cancelled}, {"job", jobs_.status(id).to_json()}});
    });
}

}  // namespace talecraft::pipeline
