#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "feel/annotation.hpp"
#include "feel/error.hpp"
#include "feel/pipeline.hpp"

namespace httplib {
class Server;
}

namespace feel {

/// HTTP status for a module error kind.
int http_status(ErrorKind kind);
/// `{"error": {"kind", "message", "details"?}}`
json error_body(const std::exception& e);

enum class JobKind { evaluate, train_weights, rank, baselines };
enum class JobStatus { queued, running, done, failed };

std::string_view job_kind_name(JobKind k);
std::string_view job_status_name(JobStatus s);

struct JobRecord {
    std::string job_id;
    JobKind kind = JobKind::evaluate;
    JobStatus status = JobStatus::queued;
    std::size_t done = 0;
    std::size_t total = 0;
    json request = json::object();
    json result;  // null until done
    json error;   // null unless failed
    std::string created_at;
    std::string started_at;
    std::string finished_at;

    json to_json() const;
    static JobRecord from_json(const json& j);
};

/// Runs jobs on a fixed pool of workers. Status only moves forward
/// (queued -> running -> done | failed). With a directory, each record is
/// persisted as `<dir>/jobs/<id>.json`; jobs found unfinished on start-up are
/// marked failed.
class JobManager {
public:
    struct Context {
        std::string job_id;
        std::function<void(std::size_t, std::size_t)> progress;
    };
    using Task = std::function<json(Context&)>;

    JobManager(std::optional<std::filesystem::path> dir, std::size_t workers);
    ~JobManager();

    JobManager(const JobManager&) = delete;
    JobManager& operator=(const JobManager&) = delete;

    std::string submit(JobKind kind, json request, Task task);
    std::optional<JobRecord> get(const std::string& id) const;
    std::vector<JobRecord> list() const;
    /// Blocks until the job is done or failed, or the timeout passes.
    std::optional<JobRecord> wait(const std::string& id, std::chrono::milliseconds timeout) const;

private:
    void run_worker();
    void persist(const JobRecord& r) const;
    void update(const std::string& id, const std::function<void(JobRecord&)>& fn);

    std::optional<std::filesystem::path> dir_;
    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    std::condition_variable work_ready_;
    std::map<std::string, JobRecord> jobs_;
    std::deque<std::pair<std::string, Task>> queue_;
    std::size_t next_id_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

struct ServiceOptions {
    std::filesystem::path data_dir = "feel-data";
    /// Bearer token required on API routes when set.
    std::optional<std::string> auth_token;
    std::optional<std::filesystem::path> static_dir;
    std::size_t workers = 2;
    RunConfig config;
    /// Corpus behind GET /dialogues/{id}; defaults to `<data_dir>/corpus.jsonl`.
    std::optional<std::filesystem::path> corpus;

    /// FEEL_DATA_DIR and FEEL_AUTH_TOKEN override the defaults.
    static ServiceOptions from_env();
};

/// "host:port", "host" or ":port"; defaults 127.0.0.1:8080.
std::pair<std::string, int> parse_bind_addr(std::string_view addr);

/// HTTP facade over SessionStore, JobManager and the pipeline runners.
/// Request paths inside job bodies are relative to the data directory.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds to an ephemeral port and returns it (or -1).
    int bind_any_port(const std::string& host);
    bool bind(const std::string& host, int port);
    /// Serves until stop(); returns false on failure.
    bool listen();
    void stop();

    json openapi() const;
    SessionStore& sessions() { return *sessions_; }
    JobManager& jobs() { return *jobs_; }
    const ServiceOptions& options() const { return options_; }

private:
    struct Route;

    void register_routes();
    std::filesystem::path data_path(const json& body, const char* field, bool must_exist = true) const;

    ServiceOptions options_;
    std::unique_ptr<SessionStore> sessions_;
    std::unique_ptr<JobManager> jobs_;
    std::unique_ptr<httplib::Server> server_;
    std::vector<Route> routes_;
};

}  // namespace feel
