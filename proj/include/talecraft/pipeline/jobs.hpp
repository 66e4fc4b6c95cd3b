#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "talecraft/pipeline/orchestrator.hpp"

namespace talecraft::pipeline {

enum class JobState { queued, running, succeeded, failed, cancelled };

std::string to_string(JobState state);

struct JobStatus {
    std::string id;
    std::string kind;  // "run", "render", "character", "video"
    std::string project;
    int scene = -1;
    JobState state = JobState::queued;
    nlohmann::json result;  // set on success
    nlohmann::json error;   // set on failure

    bool finished() const noexcept {
        return state == JobState::succeeded || state == JobState::failed || state == JobState::cancelled;
    }
    nlohmann::json to_json() const;
};

/// {"type", "message"} plus "issues" for validation errors and "stage" and
/// "scene" when known.
nlohmann::json describe_error(const std::exception& e);
/// HTTP status for an error type; 500 for anything unexpected.
int http_status(const std::exception& e);

/// Runs submitted work in order on one background thread. Jobs are polled by
/// id and may be cancelled while queued or, cooperatively, while running.
class JobManager {
public:
    using Work = std::function<nlohmann::json(const CancelToken&)>;

    JobManager();
    ~JobManager();
    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    /// `stage` is reported with failures that do not carry their own.
    std::string submit(std::string kind, std::string project, int scene, std::string stage, Work work);
    /// Throws NotFoundError for an unknown id.
    JobStatus status(const std::string& id) const;
    /// Returns false if the job had already finished.
    bool cancel(const std::string& id);
    /// Blocks until the job finishes or the timeout passes; returns its status.
    JobStatus wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(60)) const;

private:
    struct Job {
        JobStatus status;
        std::string stage;
        Work work;
        std::shared_ptr<CancelToken> cancel;
    };
    void run();

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::map<std::string, Job> jobs_;
    std::deque<std::string> queue_;
    std::uint64_t next_id_ = 1;
    bool stopping_ = false;
    std::thread worker_;
};

}  // namespace talecraft::pipeline
