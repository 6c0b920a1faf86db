#include "feel/service.hpp"

#include <algorithm>
#include <cstdlib>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "feel/clock.hpp"

namespace feel {

namespace fs = std::filesystem;

namespace {

std::string now_timestamp() { return format_timestamp(SystemClock().now()); }

}  // namespace

int http_status(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument:
        case ErrorKind::parse:
        case ErrorKind::missing_score:
            return 400;
        case ErrorKind::not_found:
            return 404;
        case ErrorKind::conflict:
            return 409;
        case ErrorKind::unauthorized:
        case ErrorKind::auth:
            return 401;
        case ErrorKind::judge:
            return 502;
        case ErrorKind::io:
            return 500;
    }
    return 500;
}

json error_body(const std::exception& e) {
    json err = {{"message", e.what()}};
    if (const auto* fe = dynamic_cast<const Error*>(&e)) {
        err["kind"] = std::string(to_string(fe->kind()));
    } else {
        err["kind"] = "internal";
    }
    if (const auto* de = dynamic_cast<const DiagnosticError*>(&e)) err["details"] = de->details();
    return {{"error", err}};
}

// --- jobs ------------------------------------------------------------------

std::string_view job_kind_name(JobKind k) {
    switch (k) {
        case JobKind::evaluate: return "evaluate";
        case JobKind::train_weights: return "train_weights";
        case JobKind::rank: return "rank";
        case JobKind::baselines: return "baselines";
    }
    return "?";
}

std::string_view job_status_name(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "?";
}

namespace {

JobKind parse_job_kind(const std::string& s) {
    for (auto k : {JobKind::evaluate, JobKind::train_weights, JobKind::rank, JobKind::baselines}) {
        if (job_kind_name(k) == s) return k;
    }
    fail(ErrorKind::parse, fmt::format("unknown job kind '{}'", s));
}

JobStatus parse_job_status(const std::string& s) {
    for (auto st : {JobStatus::queued, JobStatus::running, JobStatus::done, JobStatus::failed}) {
        if (job_status_name(st) == s) return st;
    }
    fail(ErrorKind::parse, fmt::format("unknown job status '{}'", s));
}

bool finished(JobStatus s) { return s == JobStatus::done || s == JobStatus::failed; }

}  // namespace

json JobRecord::to_json() const {
    return {{"job_id", job_id},
            {"kind", job_kind_name(kind)},
            {"status", job_status_name(status)},
            {"progress", {{"done", done}, {"total", total}}},
            {"request", request},
            {"result", result},
            {"error", error},
            {"created_at", created_at},
            {"started_at", started_at},
            {"finished_at", finished_at}};
}

JobRecord JobRecord::from_json(const json& j) {
    JobRecord r;
    r.job_id = j.at("job_id").get<std::string>();
    r.kind = parse_job_kind(j.at("kind").get<std::string>());
    r.status = parse_job_status(j.at("status").get<std::string>());
    r.done = j.at("progress").at("done").get<std::size_t>();
    r.total = j.at("progress").at("total").get<std::size_t>();
    r.request = j.value("request", json::object());
    r.result = j.value("result", json());
    r.error = j.value("error", json());
    r.created_at = j.value("created_at", "");
    r.started_at = j.value("started_at", "");
    r.finished_at = j.value("finished_at", "");
    return r;
}

JobManager::JobManager(std::optional<fs::path> dir, std::size_t workers) : dir_(std::move(dir)) {
    if (dir_) {
        const auto jobs_dir = *dir_ / "jobs";
        fs::create_directories(jobs_dir);
        for (const auto& entry : fs::directory_iterator(jobs_dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
            auto r = JobRecord::from_json(json::parse(read_file(entry.path())));
            if (!finished(r.status)) {
                r.status = JobStatus::failed;
                r.error = {{"error", {{"kind", "io"}, {"message", "service restarted before the job finished"}}}};
                r.finished_at = now_timestamp();
                persist(r);
            }
            const auto dash = r.job_id.rfind('-');
            if (dash != std::string::npos) {
                try {
                    next_id_ = std::max<std::size_t>(next_id_, std::stoull(r.job_id.substr(dash + 1)) + 1);
                } catch (const std::exception&) {
                }
            }
            jobs_.emplace(r.job_id, std::move(r));
        }
    }
    for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i) {
        workers_.emplace_back([this] { run_worker(); });
    }
}

JobManager::~JobManager() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    work_ready_.notify_all();
    for (auto& w : workers_) w.join();
}

std::string JobManager::submit(JobKind kind, json request, Task task) {
    std::string id;
    {
        std::lock_guard lock(mutex_);
        id = fmt::format("job-{}", next_id_++);
        JobRecord r;
        r.job_id = id;
        r.kind = kind;
        r.request = std::move(request);
        r.created_at = now_timestamp();
        persist(r);
        jobs_.emplace(id, std::move(r));
        queue_.emplace_back(id, std::move(task));
    }
    work_ready_.notify_one();
    changed_.notify_all();
    return id;
}

std::optional<JobRecord> JobManager::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::vector<JobRecord> JobManager::list() const {
    std::lock_guard lock(mutex_);
    std::vector<JobRecord> out;
    for (const auto& [_, r] : jobs_) out.push_back(r);
    return out;
}

std::optional<JobRecord> JobManager::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, timeout, [&] {
        auto it = jobs_.find(id);
        return it == jobs_.end() || finished(it->second.status);
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void JobManager::persist(const JobRecord& r) const {
    if (dir_) write_file(*dir_ / "jobs" / (r.job_id + ".json"), r.to_json().dump(2) + "\n");
}

void JobManager::update(const std::string& id, const std::function<void(JobRecord&)>& fn) {
    {
        std::lock_guard lock(mutex_);
        auto& r = jobs_.at(id);
        fn(r);
        persist(r);
    }
    changed_.notify_all();
}

void JobManager::run_worker() {
    for (;;) {
        std::pair<std::string, Task> item;
        {
            std::unique_lock lock(mutex_);
            work_ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_ && queue_.empty()) return;
            item = std::move(queue_.front());
            queue_.pop_front();
        }
        const auto& id = item.first;
        update(id, [](JobRecord& r) {
            r.status = JobStatus::running;
            r.started_at = now_timestamp();
        });
        Context ctx{id, [this, id](std::size_t done, std::size_t total) {
                        update(id, [&](JobRecord& r) {
                            r.done = done;
                            r.total = total;
                        });
                    }};
        try {
            auto result = item.second(ctx);
            update(id, [&](JobRecord& r) {
                r.status = JobStatus::done;
                r.result = std::move(result);
                r.finished_at = now_timestamp();
            });
        } catch (const std::exception& e) {
            spdlog::warn("job {} failed: {}", id, e.what());
            update(id, [&](JobRecord& r) {
                r.status = JobStatus::failed;
                r.error = error_body(e);
                r.finished_at = now_timestamp();
            });
        }
    }
}

// --- service ---------------------------------------------------------------

ServiceOptions ServiceOptions::from_env() {
    ServiceOptions o;
    if (const char* d = std::getenv("FEEL_DATA_DIR"); d != nullptr && *d != '\0') o.data_dir = d;
    if (const char* t = std::getenv("FEEL_AUTH_TOKEN"); t != nullptr && *t != '\0') o.auth_token = t;
    return o;
}

std::pair<std::string, int> parse_bind_addr(std::string_view addr) {
    std::string host = "127.0.0.1";
    int port = 8080;
    const auto text = std::string(trim(addr));
    if (text.empty()) return {host, port};
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) return {text, port};
    if (colon > 0) host = text.substr(0, colon);
    const auto port_text = text.substr(colon + 1);
    try {
        std::size_t used = 0;
        port = std::stoi(port_text, &used);
        if (used != port_text.size() || port < 0 || port > 65535) throw std::out_of_range(port_text);
    } catch (const std::exception&) {
        fail(ErrorKind::invalid_argument, fmt::format("invalid bind address '{}'", text));
    }
    return {host, port};
}

struct Service::Route {
    std::string method;
    std::string path;  // OpenAPI form, e.g. /sessions/{id}
    std::string summary;
    std::vector<std::string> params;
    bool has_body = false;
    std::function<json(const httplib::Request&, int&)> handler;
};

namespace {

json parse_body(const httplib::Request& req) {
    if (trim(req.body).empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) fail(ErrorKind::invalid_argument, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, fmt::format("request body is not JSON: {}", e.what()));
    }
}

template <class T>
T required(const json& body, const char* field) {
    if (!body.contains(field)) fail(ErrorKind::invalid_argument, fmt::format("field '{}' is required", field));
    try {
        return body[field].get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::invalid_argument, fmt::format("field '{}' has the wrong type", field));
    }
}

template <class T>
T optional_field(const json& body, const char* field, T fallback) {
    if (!body.contains(field) || body[field].is_null()) return fallback;
    try {
        return body[field].get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::invalid_argument, fmt::format("field '{}' has the wrong type", field));
    }
}

std::string to_regex(const std::string& path) {
    static const std::regex param(R"(\{[a-z_]+\})");
    return std::regex_replace(path, param, "([^/]+)");
}

std::vector<std::string> path_params(const std::string& path) {
    static const std::regex param(R"(\{([a-z_]+)\})");
    std::vector<std::string> out;
    for (std::sregex_iterator it(path.begin(), path.end(), param), end; it != end; ++it) out.push_back((*it)[1]);
    return out;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
    return fs::relative(p, base).generic_string();
}

}  // namespace

Service::Service(ServiceOptions options)
    : options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
    fs::create_directories(options_.data_dir);
    options_.data_dir = fs::canonical(options_.data_dir);
    sessions_ = std::make_unique<SessionStore>(options_.data_dir);
    jobs_ = std::make_unique<JobManager>(options_.data_dir, options_.workers);
    register_routes();
}

Service::~Service() {
    stop();
    jobs_.reset();
}

fs::path Service::data_path(const json& body, const char* field, bool must_exist) const {
    const auto rel = required<std::string>(body, field);
    const fs::path p(rel);
    if (rel.empty() || p.is_absolute()) {
        fail(ErrorKind::invalid_argument, fmt::format("'{}' must be a path relative to the data directory", field));
    }
    for (const auto& part : p) {
        if (part == "..") fail(ErrorKind::invalid_argument, fmt::format("'{}' must not contain '..'", field));
    }
    const auto full = options_.data_dir / p;
    if (must_exist && !fs::exists(full)) {
        fail(ErrorKind::not_found, fmt::format("{} '{}' does not exist in the data directory", field, rel));
    }
    return full;
}

void Service::register_routes() {
    auto add = [&](std::string method, std::string path, std::string summary, bool has_body,
                   std::function<json(const httplib::Request&, int&)> handler) {
        routes_.push_back(Route{std::move(method), path, std::move(summary), path_params(path), has_body,
                                std::move(handler)});
    };

    // sessions
    add("GET", "/sessions", "List annotation session ids", false, [this](const httplib::Request&, int&) {
        return json(sessions_->ids());
    });
    add("POST", "/sessions", "Create an annotation session", true, [this](const httplib::Request& req, int& status) {
        const auto body = parse_body(req);
        status = 201;
        return sessions_->create(optional_field<std::string>(body, "session_id", ""),
                                 required<std::vector<std::string>>(body, "dialogues"),
                                 required<std::vector<std::string>>(body, "annotators"), now_timestamp());
    });
    add("GET", "/sessions/{id}", "Session state, scores, flags, progress and consensus", false,
        [this](const httplib::Request& req, int&) {
            return sessions_->read(req.matches[1], [](const AnnotationSession& s) { return s.to_json(); });
        });
    add("POST", "/sessions/{id}/scores", "Record one annotator score", true,
        [this](const httplib::Request& req, int& status) {
            auto body = parse_body(req);
            if (!body.contains("timestamp")) body["timestamp"] = now_timestamp();
            const auto score = AnnotatorScore::from_json(body);
            status = 201;
            return sessions_->mutate(req.matches[1], [&](AnnotationSession& s) {
                s.record_score(score);
                return s.find_score(score.annotator_id, {score.dialogue_id, score.aspect}, score.round)->to_json();
            });
        });
    add("POST", "/sessions/{id}/advance", "Detect discrepancies and open the rescoring round", false,
        [this](const httplib::Request& req, int&) {
            return sessions_->mutate(req.matches[1], [](AnnotationSession& s) {
                json arr = json::array();
                for (const auto& f : s.advance(now_timestamp())) arr.push_back(f.to_json());
                return arr;
            });
        });
    add("POST", "/sessions/{id}/close", "Close the session and return the consensus dataset", false,
        [this](const httplib::Request& req, int&) {
            return sessions_->mutate(req.matches[1], [](AnnotationSession& s) {
                json arr = json::array();
                for (const auto& h : s.close(now_timestamp())) arr.push_back(h.to_json());
                return arr;
            });
        });
    add("GET", "/sessions/{id}/worklist/{annotator}", "Rescoring worklist of one annotator", false,
        [this](const httplib::Request& req, int&) {
            const std::string annotator = req.matches[2];
            return sessions_->read(req.matches[1], [&](const AnnotationSession& s) {
                json arr = json::array();
                for (const auto& w : s.worklist(annotator)) arr.push_back(w.to_json());
                return arr;
            });
        });

    // dialogues
    add("GET", "/dialogues/{id}", "Canonical dialogue record", false, [this](const httplib::Request& req, int&) {
        const auto path = options_.corpus.value_or(options_.data_dir / "corpus.jsonl");
        if (!fs::exists(path)) fail(ErrorKind::not_found, "no corpus is loaded");
        const auto corpus = load_corpus(path, CorpusFormat::jsonl);
        const auto* d = find_dialogue(corpus, std::string(req.matches[1]));
        if (d == nullptr) fail(ErrorKind::not_found, fmt::format("unknown dialogue '{}'", std::string(req.matches[1])));
        return to_json(*d);
    });

    // jobs
    add("GET", "/jobs", "List jobs", false, [this](const httplib::Request&, int&) {
        json arr = json::array();
        for (const auto& r : jobs_->list()) arr.push_back(r.to_json());
        return arr;
    });
    add("GET", "/jobs/{id}", "Job status, progress and result reference", false,
        [this](const httplib::Request& req, int&) {
            auto r = jobs_->get(req.matches[1]);
            if (!r) fail(ErrorKind::not_found, fmt::format("unknown job '{}'", std::string(req.matches[1])));
            return r->to_json();
        });
    add("POST", "/jobs/evaluate", "Score a corpus with the configured judges", true,
        [this](const httplib::Request& req, int& status) {
            const auto body = parse_body(req);
            const auto corpus_path = data_path(body, "corpus");
            auto corpus = load_corpus(corpus_path, CorpusFormat::jsonl);
            RunConfig cfg = options_.config;
            cfg.rounds = optional_field<std::size_t>(body, "rounds", cfg.rounds);
            cfg.min_rounds = optional_field<std::size_t>(body, "min_rounds", std::min(cfg.min_rounds, cfg.rounds));
            cfg.seed = optional_field<std::uint64_t>(body, "seed", cfg.seed);
            cfg.jobs = optional_field<std::size_t>(body, "jobs", cfg.jobs);
            const auto ids = optional_field<std::vector<std::string>>(body, "judges", {});
            cfg.judges = resolve_judges(ids, cfg);
            cfg.validate();
            auto tmpl = cfg.prompt_template();
            const auto data_dir = options_.data_dir;
            status = 202;
            const auto id = jobs_->submit(
                JobKind::evaluate, body,
                [cfg, corpus = std::move(corpus), tmpl, data_dir, corpus_path](JobManager::Context& ctx) {
                    EvaluateOptions eo;
                    eo.judges = cfg.judges;
                    eo.scoring = cfg.scoring();
                    eo.seed = cfg.seed;
                    eo.jobs = cfg.jobs;
                    eo.cot_cache = cfg.cot_cache;
                    eo.progress = ctx.progress;
                    const auto out = data_dir / "jobs" / ctx.job_id;
                    RunManifest m;
                    m.command = "evaluate";
                    m.started_at = manifest_timestamp();
                    const auto res = run_evaluate(corpus, tmpl, eo, out);
                    m.finished_at = manifest_timestamp();
                    m.config_sha256 = sha256_hex(dump_compact(cfg.to_json()));
                    m.template_version = tmpl.version();
                    m.seed = cfg.seed;
                    m.inputs["corpus"] = relative_to(corpus_path, data_dir);
                    json files = json::object();
                    for (const auto& [judge, f] : res.files) {
                        m.judges.push_back(judge);
                        m.outputs[judge] = relative_to(f, data_dir);
                        files[judge] = relative_to(f, data_dir);
                    }
                    m.details = {{"config", cfg.to_json()}};
                    m.write_next_to(out);
                    return json{{"dir", relative_to(out, data_dir)},
                                {"files", files},
                                {"dialogues", res.dialogues},
                                {"missing", res.missing}};
                });
            return jobs_->get(id)->to_json();
        });
    add("POST", "/jobs/train-weights", "Train ensemble weights against human scores", true,
        [this](const httplib::Request& req, int& status) {
            const auto body = parse_body(req);
            const auto judges = required<std::vector<std::string>>(body, "judges");
            const auto scores = data_path(body, "scores");
            const auto human = data_path(body, "human");
            TrainOptions opts;
            opts.clamp_negative = optional_field<bool>(body, "clamp_negative", options_.config.policies.clamp_negative);
            const auto data_dir = options_.data_dir;
            status = 202;
            const auto id = jobs_->submit(JobKind::train_weights, body,
                                          [=](JobManager::Context& ctx) {
                                              const auto out = data_dir / "jobs" / ctx.job_id / "weights.json";
                                              const auto w = run_train_weights(judges, scores, human, opts, out);
                                              return json{{"file", relative_to(out, data_dir)}, {"weights", w.to_json()}};
                                          });
            return jobs_->get(id)->to_json();
        });
    add("POST", "/jobs/rank", "Rank agreement between predictions and human data", true,
        [this](const httplib::Request& req, int& status) {
            const auto body = parse_body(req);
            const auto predictions = data_path(body, "predictions");
            const auto human = data_path(body, "human");
            RankOptions ro;
            ro.reduction = optional_field<std::string>(body, "reduction", options_.config.policies.reduction);
            ro.rmse_form = parse_rmse_form(
                optional_field<std::string>(body, "rmse", rmse_form_name(options_.config.policies.rmse_form)));
            if (body.contains("models")) ro.models = data_path(body, "models");
            const auto data_dir = options_.data_dir;
            status = 202;
            const auto id = jobs_->submit(JobKind::rank, body, [=](JobManager::Context& ctx) {
                const auto out = data_dir / "jobs" / ctx.job_id / "rank.json";
                fs::create_directories(out.parent_path());
                auto report = run_rank(predictions, human, ro, out);
                return json{{"file", relative_to(out, data_dir)}, {"report", report}};
            });
            return jobs_->get(id)->to_json();
        });
    add("POST", "/jobs/baselines", "Reference-based overlap metrics", true,
        [this](const httplib::Request& req, int& status) {
            const auto body = parse_body(req);
            const auto candidates = data_path(body, "candidates");
            const auto references = data_path(body, "references");
            std::vector<Metric> metrics;
            for (const auto& m : optional_field<std::vector<std::string>>(body, "metrics", {})) {
                metrics.push_back(parse_metric(m));
            }
            if (metrics.empty()) metrics = all_metrics();
            const auto data_dir = options_.data_dir;
            status = 202;
            const auto id = jobs_->submit(JobKind::baselines, body, [=](JobManager::Context& ctx) {
                const auto out = data_dir / "jobs" / ctx.job_id / "baselines.json";
                fs::create_directories(out.parent_path());
                auto report = run_baselines(candidates, references, metrics, out);
                return json{{"file", relative_to(out, data_dir)}, {"report", report}};
            });
            return jobs_->get(id)->to_json();
        });

    add("GET", "/openapi.json", "This API description", false,
        [this](const httplib::Request&, int&) { return openapi(); });

    // wiring
    auto dispatch = [this](const Route& route) {
        return [this, &route](const httplib::Request& req, httplib::Response& res) {
            int status = 200;
            json body;
            try {
                body = route.handler(req, status);
            } catch (const std::exception& e) {
                const auto* fe = dynamic_cast<const Error*>(&e);
                status = fe != nullptr ? http_status(fe->kind()) : 500;
                body = error_body(e);
            }
            res.status = status;
            res.set_content(body.dump(), "application/json");
        };
    };
    for (const auto& route : routes_) {
        const auto pattern = to_regex(route.path);
        if (route.method == "GET") {
            server_->Get(pattern, dispatch(route));
        } else {
            server_->Post(pattern, dispatch(route));
        }
    }

    server_->set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
        if (!options_.auth_token || req.path == "/openapi.json" || req.path.rfind("/ui", 0) == 0) {
            return httplib::Server::HandlerResponse::Unhandled;
        }
        const auto header = req.get_header_value("Authorization");
        const auto expected = "Bearer " + *options_.auth_token;
        bool ok = header.size() == expected.size();
        unsigned char diff = 0;
        for (std::size_t i = 0; ok && i < header.size(); ++i) diff |= header[i] ^ expected[i];
        if (ok && diff == 0) return httplib::Server::HandlerResponse::Unhandled;
        res.status = 401;
        res.set_content(error_body(Error(ErrorKind::unauthorized, "missing or invalid bearer token")).dump(),
                        "application/json");
        return httplib::Server::HandlerResponse::Handled;
    });
    if (options_.static_dir && fs::is_directory(*options_.static_dir)) {
        server_->set_mount_point("/ui", options_.static_dir->string());
    }
}

json Service::openapi() const {
    json paths = json::object();
    for (const auto& r : routes_) {
        json op = {{"summary", r.summary}};
        json params = json::array();
        for (const auto& p : r.params) {
            params.push_back({{"name", p}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}});
        }
        if (!params.empty()) op["parameters"] = params;
        if (r.has_body) {
            op["requestBody"] = {{"required", true},
                                 {"content", {{"application/json", {{"schema", {{"type", "object"}}}}}}}};
        }
        op["responses"] = {{"200", {{"description", "OK"}}},
                           {"400", {{"description", "validation error"}}},
                           {"404", {{"description", "unknown resource"}}},
                           {"409", {{"description", "conflict"}}}};
        if (options_.auth_token) op["security"] = json::array({{{"bearer", json::array()}}});
        std::string method = r.method;
        std::transform(method.begin(), method.end(), method.begin(), [](unsigned char c) { return std::tolower(c); });
        paths[r.path][method] = op;
    }
    return {{"openapi", "3.0.3"},
            {"info", {{"title", "feel"}, {"version", "1"}}},
            {"components", {{"securitySchemes", {{"bearer", {{"type", "http"}, {"scheme", "bearer"}}}}}}},
            {"paths", paths}};
}

int Service::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool Service::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }

bool Service::listen() { return server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

}  // namespace feel
