#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>

#include "talecraft/pipeline/jobs.hpp"
#include "talecraft/pipeline/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace talecraft::pipeline {

/// JSON-over-HTTP front end. Projects live in `root/<id>/`. Layout reads and
/// edits are synchronous; run, render, character and video requests are
/// validated up front and then queued as jobs.
///
///   POST /projects                          {story, style, k, seed, id?}
///   POST /projects/{id}/run
///   GET  /projects/{id}/scenes/{i}/layout
///   PUT  /projects/{id}/scenes/{i}/layout   setup JSON, {"undo": true}, or multipart
///                                           with a "layout" field and "sketch_<object>" files
///   POST /projects/{id}/scenes/{i}/render   {seed?}
///   POST /projects/{id}/characters          multipart: name, class_noun, token?, images
///   POST /projects/{id}/scenes/{i}/video    {preset, depth?}
///   GET  /projects/{id}/assets/{ref}
///   GET  /jobs/{id}
///   DELETE /jobs/{id}                       cancel
class ApiServer {
public:
    ApiServer(std::shared_ptr<Orchestrator> orchestrator, std::filesystem::path root);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds to `port`, or any free port when it is 0. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); blocks.
    void listen();
    void stop();
    void wait_until_ready();

    JobManager& jobs() noexcept { return jobs_; }

private:
    struct Slot {
        std::shared_mutex mutex;
        Workspace ws;
    };
    std::shared_ptr<Slot> slot(const std::string& id);
    void routes();

    std::shared_ptr<Orchestrator> orchestrator_;
    std::filesystem::path root_;
    std::mutex slots_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> slots_;
    JobManager jobs_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace talecraft::pipeline
