#include "talecraft/pipeline/jobs.hpp"

#include <nlohmann/json.hpp>

#include "talecraft/common/error.hpp"

namespace talecraft::pipeline {

std::string to_string(JobState state) {
    switch (state) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::succeeded: return "succeeded";
        case JobState::failed: return "failed";
        case JobState::cancelled: return "cancelled";
    }
    return "unknown";
}

nlohmann::json JobStatus::to_json() const {
    nlohmann::json j = {{"id", id}, {"kind", kind}, {"project", project}, {"scene", scene}, {"state", to_string(state)}};
    if (!result.is_null()) j["result"] = result;
    if (!error.is_null()) j["error"] = error;
    return j;
}

namespace {

template <typename T>
bool is(const std::exception& e) {
    return dynamic_cast<const T*>(&e) != nullptr;
}

std::string error_type(const std::exception& e) {
    if (is<StageError>(e)) return "stage";
    if (is<ValidationError>(e)) return "validation";
    if (is<InvalidBoxError>(e)) return "invalid_box";
    if (is<InvalidRequestError>(e)) return "invalid_request";
    if (is<ShapeError>(e)) return "shape";
    if (is<ConfigError>(e)) return "config";
    if (is<ParseError>(e)) return "parse";
    if (is<NotFoundError>(e)) return "not_found";
    if (is<ConflictError>(e)) return "conflict";
    if (is<RegistrationError>(e)) return "registration";
    if (is<OrderingError>(e)) return "ordering";
    if (is<MigrationError>(e)) return "migration";
    if (is<CancelledError>(e)) return "cancelled";
    if (is<TransportError>(e)) return "transport";
    if (is<BackendError>(e)) return "backend";
    if (is<NumericalError>(e)) return "numerical";
    if (is<CapacityError>(e)) return "capacity";
    return "internal";
}

}  // namespace

nlohmann::json describe_error(const std::exception& e) {
    nlohmann::json j = {{"type", error_type(e)}, {"message", e.what()}};
    if (const auto* v = dynamic_cast<const ValidationError*>(&e)) j["issues"] = v->issues();
    if (const auto* s = dynamic_cast<const StageError*>(&e)) {
        j["stage"] = s->stage();
        j["scene"] = s->scene_index();
    }
    if (const auto* n = dynamic_cast<const NumericalError*>(&e)) j["where"] = n->where();
    return j;
}

int http_status(const std::exception& e) {
    if (is<ValidationError>(e) || is<InvalidBoxError>(e) || is<InvalidRequestError>(e) || is<ShapeError>(e) ||
        is<ConfigError>(e)) {
        return 422;
    }
    if (is<ParseError>(e)) return 400;
    if (is<NotFoundError>(e)) return 404;
    if (is<ConflictError>(e) || is<RegistrationError>(e) || is<OrderingError>(e) || is<MigrationError>(e)) return 409;
    if (is<TransportError>(e) || is<BackendError>(e) || is<StageError>(e)) return 502;
    return 500;
}

JobManager::JobManager() : worker_([this] { run(); }) {}

JobManager::~JobManager() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
        for (auto& [_, job] : jobs_) job.cancel->cancel();
    }
    changed_.notify_all();
    worker_.join();
}

std::string JobManager::submit(std::string kind, std::string project, int scene, std::string stage, Work work) {
    std::lock_guard lock(mutex_);
    const auto id = "job-" + std::to_string(next_id_++);
    Job job;
    job.status = {id, std::move(kind), std::move(project), scene, JobState::queued, nullptr, nullptr};
    job.stage = std::move(stage);
    job.work = std::move(work);
    job.cancel = std::make_shared<CancelToken>();
    jobs_.emplace(id, std::move(job));
    queue_.push_back(id);
    changed_.notify_all();
    return id;
}

JobStatus JobManager::status(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("no job " + id);
    return it->second.status;
}

bool JobManager::cancel(const std::string& id) {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("no job " + id);
    auto& job = it->second;
    if (job.status.finished()) return false;
    job.cancel->cancel();
    if (job.status.state == JobState::queued) {
        job.status.state = JobState::cancelled;
        job.status.error = {{"type", "cancelled"}, {"message", "cancelled before start"}};
        std::erase(queue_, id);
        changed_.notify_all();
    }
    return true;
}

JobStatus JobManager::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("no job " + id);
    changed_.wait_for(lock, timeout, [&] { return it->second.status.finished(); });
    return it->second.status;
}

void JobManager::run() {
    for (;;) {
        std::string id;
        Work work;
        std::shared_ptr<CancelToken> cancel;
        std::string stage;
        {
            std::unique_lock lock(mutex_);
            changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            auto& job = jobs_.at(id);
            job.status.state = JobState::running;
            work = std::move(job.work);
            cancel = job.cancel;
            stage = job.stage;
        }
        changed_.notify_all();

        JobState state = JobState::succeeded;
        nlohmann::json result, error;
        try {
            result = work(*cancel);
        } catch (const CancelledError& e) {
            state = JobState::cancelled;
            error = describe_error(e);
        } catch (const std::exception& e) {
            state = JobState::failed;
            error = describe_error(e);
            if (!error.contains("stage")) error["stage"] = stage;
        }
        {
            std::lock_guard lock(mutex_);
            auto& job = jobs_.at(id);
            job.status.state = state;
            job.status.result = std::move(result);
            job.status.error = std::move(error);
            if (state == JobState::failed && !job.status.error.contains("scene")) job.status.error["scene"] = job.status.scene;
        }
        changed_.notify_all();
    }
}

}  // namespace talecraft::pipeline
