#include "feel/judge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "feel/mock_judge.hpp"

namespace feel {

ScoreDistribution::ScoreDistribution(std::array<double, kBandCount> p) : p_(p) {
    double sum = 0.0;
    for (double v : p_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            fail(ErrorKind::invalid_argument, fmt::format("band probability {} outside [0, 1]", v));
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        fail(ErrorKind::invalid_argument, fmt::format("band probabilities sum to {}, not 1", sum));
    }
}

ScoreDistribution ScoreDistribution::normalized(std::array<double, kBandCount> raw, double tolerance) {
    double sum = 0.0;
    for (double v : raw) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            fail(ErrorKind::parse, fmt::format("band probability {} outside [0, 1]", v));
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) {
        fail(ErrorKind::parse,
             fmt::format("band probabilities sum to {}, outside 1 +/- {}", sum, tolerance));
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        for (double& v : raw) v /= sum;
    }
    return ScoreDistribution(raw);
}

ScoreDistribution ScoreDistribution::point_mass(std::size_t band) {
    std::array<double, kBandCount> p{};
    p.at(band) = 1.0;
    return ScoreDistribution(p);
}

ScoreDistribution ScoreDistribution::uniform() {
    return ScoreDistribution({0.25, 0.25, 0.25, 0.25});
}

ScoreDistribution parse_distribution(std::string_view raw, double tolerance) {
    if (trim(raw).empty()) fail(ErrorKind::parse, "empty judge reply");
    // "<band> point(s): <number>[%]", tolerating markdown emphasis and a
    // full-width colon.
    static const std::regex band_re(
        R"((?:^|[^0-9.])([0-3])\s*points?\**\s*(?::|\xEF\xBC\x9A)\s*\**\s*((?:[0-9]+(?:\.[0-9]+)?|\.[0-9]+)(?:e[-+]?[0-9]+)?)[ \t]*(%?))",
        std::regex::ECMAScript | std::regex::icase);
    std::array<std::optional<double>, kBandCount> found;
    const std::string text(raw);
    for (auto it = std::sregex_iterator(text.begin(), text.end(), band_re);
         it != std::sregex_iterator(); ++it) {
        const auto band = static_cast<std::size_t>((*it)[1].str()[0] - '0');
        if (found[band]) continue;  // first occurrence wins
        double value = std::stod((*it)[2].str());
        if (!(*it)[3].str().empty()) value /= 100.0;
        found[band] = value;
    }
    std::array<double, kBandCount> values{};
    std::vector<std::string> missing;
    for (std::size_t j = 0; j < kBandCount; ++j) {
        if (!found[j]) {
            missing.push_back(std::to_string(j));
        } else {
            values[j] = *found[j];
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        fail(ErrorKind::parse, fmt::format("judge reply is missing score band(s) {}", list));
    }
    return ScoreDistribution::normalized(values, tolerance);
}

std::string render_distribution(const ScoreDistribution& d) {
    return fmt::format("0 points: {}\n1 point: {}\n2 points: {}\n3 points: {}\n", d[0], d[1], d[2], d[3]);
}

json to_json(const ScoreDistribution& d) {
    return json(d.probabilities());
}

ScoreDistribution distribution_from_json(const json& j) {
    if (!j.is_array() || j.size() != kBandCount) {
        fail(ErrorKind::parse, "distribution must be an array of four numbers");
    }
    return ScoreDistribution(j.get<std::array<double, kBandCount>>());
}

// --- configuration ---------------------------------------------------------

JudgeConfig judge_config_from_json(const json& j) {
    if (!j.is_object()) fail(ErrorKind::parse, "judge config must be an object");
    if (j.contains("api_key") || j.contains("credentials") || j.contains("key")) {
        fail(ErrorKind::invalid_argument,
             "judge configs must not contain credentials; use credential_env");
    }
    JudgeConfig cfg;
    cfg.judge_id = j.value("judge_id", "");
    cfg.provider = j.value("provider", "mock");
    cfg.endpoint = j.value("endpoint", "");
    cfg.model = j.value("model", "");
    cfg.credential_env = j.value("credential_env", "");
    cfg.timeout = std::chrono::milliseconds(
        static_cast<std::int64_t>(j.value("timeout_seconds", 60.0) * 1000.0));
    const auto retries = j.value("max_retries", 3);
    if (retries < 0) fail(ErrorKind::invalid_argument, "max_retries must be >= 0");
    cfg.max_retries = static_cast<std::uint32_t>(retries);
    cfg.backoff_base = std::chrono::milliseconds(
        static_cast<std::int64_t>(j.value("backoff_seconds", 0.5) * 1000.0));
    if (j.contains("rate_limit")) {
        const auto& rl = j["rate_limit"];
        cfg.rate_limit.requests = rl.value("requests", 0U);
        cfg.rate_limit.interval = std::chrono::milliseconds(
            static_cast<std::int64_t>(rl.value("interval_seconds", 1.0) * 1000.0));
    }
    if (j.contains("params")) cfg.params = j["params"];
    if (j.contains("scenario")) cfg.scenario = j["scenario"];
    return cfg;
}

json to_json(const JudgeConfig& cfg) {
    return {
        {"judge_id", cfg.judge_id},
        {"provider", cfg.provider},
        {"endpoint", cfg.endpoint},
        {"model", cfg.model},
        {"credential_env", cfg.credential_env},
        {"timeout_seconds", static_cast<double>(cfg.timeout.count()) / 1000.0},
        {"max_retries", cfg.max_retries},
        {"backoff_seconds", static_cast<double>(cfg.backoff_base.count()) / 1000.0},
        {"rate_limit",
         {{"requests", cfg.rate_limit.requests},
          {"interval_seconds", static_cast<double>(cfg.rate_limit.interval.count()) / 1000.0}}},
        {"params", cfg.params},
        {"scenario", cfg.scenario},
    };
}

void validate_judge_configs(const std::vector<JudgeConfig>& configs) {
    std::vector<std::string> problems;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& c = configs[i];
        const auto where = fmt::format("judges[{}]", i);
        if (c.judge_id.empty()) problems.push_back(where + ".judge_id: must not be empty");
        if (!c.judge_id.empty() && !ids.insert(c.judge_id).second) {
            problems.push_back(fmt::format("{}.judge_id: duplicate id '{}'", where, c.judge_id));
        }
        if (c.provider != "mock" && c.provider != "openai" && c.provider != "ernie") {
            problems.push_back(fmt::format("{}.provider: unknown provider '{}'", where, c.provider));
        }
        if (c.provider != "mock" && c.endpoint.empty()) {
            problems.push_back(where + ".endpoint: required for network providers");
        }
        if (c.provider != "mock" && c.credential_env.empty()) {
            problems.push_back(where + ".credential_env: required for network providers");
        }
        if (c.timeout.count() <= 0) problems.push_back(where + ".timeout_seconds: must be positive");
    }
    if (!problems.empty()) {
        throw DiagnosticError(ErrorKind::invalid_argument, "invalid judge configuration",
                              std::move(problems));
    }
}

// --- rate limiting ---------------------------------------------------------

void RateLimiter::acquire() {
    if (limit_.requests == 0) return;
    std::unique_lock lock(mutex_);
    while (true) {
        const auto now = clock_.now();
        while (!recent_.empty() && now - recent_.front() >= limit_.interval) recent_.pop_front();
        if (recent_.size() < limit_.requests) {
            recent_.push_back(now);
            return;
        }
        // Holding the lock while sleeping serializes dispatch for this judge.
        clock_.sleep_for(recent_.front() + limit_.interval - now);
    }
}

// --- client ----------------------------------------------------------------

json CallRecord::to_json() const {
    json j = {
        {"judge", judge_id},   {"prompt_sha256", prompt_sha256}, {"attempt", attempt},
        {"started_at", started_at}, {"latency_ms", latency_ms}, {"ok", ok},
    };
    if (!error.empty()) j["error"] = error;
    return j;
}

JudgeClient::JudgeClient(JudgeConfig config, std::shared_ptr<Backend> backend,
                         std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      clock_(std::move(clock)),
      limiter_(config_.rate_limit, *clock_) {
    if (!backend_) fail(ErrorKind::invalid_argument, "judge client needs a backend");
}

std::string JudgeClient::attempt_once(const std::string& prompt, std::uint32_t attempt,
                                      const std::string& digest) {
    limiter_.acquire();
    CallRecord rec;
    rec.judge_id = config_.judge_id;
    rec.prompt_sha256 = digest;
    rec.attempt = attempt;
    const auto start = clock_->now();
    rec.started_at = format_timestamp(start);
    auto finish = [&](bool ok, std::string error) {
        rec.latency_ms = std::chrono::duration<double, std::milli>(clock_->now() - start).count();
        rec.ok = ok;
        rec.error = std::move(error);
        std::lock_guard lock(log_mutex_);
        log_.push_back(rec);
    };
    try {
        auto text = backend_->complete(prompt);
        finish(true, {});
        return text;
    } catch (const std::exception& e) {
        finish(false, e.what());
        throw;
    }
}

void JudgeClient::backoff(std::uint32_t attempt) {
    // base * 2^(attempt-1), capped at 2^10 * base
    const auto shift = std::min<std::uint32_t>(attempt - 1, 10);
    clock_->sleep_for(config_.backoff_base * (1LL << shift));
}

Completion JudgeClient::complete(const std::string& prompt) {
    const auto digest = sha256_hex(prompt);
    const auto start = clock_->now();
    for (std::uint32_t attempt = 1;; ++attempt) {
        try {
            auto text = attempt_once(prompt, attempt, digest);
            return {std::move(text), attempt,
                    std::chrono::duration<double, std::milli>(clock_->now() - start).count()};
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt > config_.max_retries) throw;
        }
        backoff(attempt);
    }
}

DistributionReply JudgeClient::complete_distribution(const std::string& prompt, double tolerance) {
    const auto digest = sha256_hex(prompt);
    for (std::uint32_t attempt = 1;; ++attempt) {
        std::string failure;
        try {
            const auto text = attempt_once(prompt, attempt, digest);
            return {parse_distribution(text, tolerance), attempt};
        } catch (const BackendError& e) {
            if (!e.retryable()) throw;
            failure = e.what();
            if (attempt > config_.max_retries) throw;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::parse) throw;
            failure = e.what();
            if (attempt > config_.max_retries) {
                fail(ErrorKind::parse, fmt::format("judge '{}' gave no parseable distribution after {} attempt(s): {}",
                                                   config_.judge_id, attempt, failure));
            }
        }
        backoff(attempt);
    }
}

std::vector<CallRecord> JudgeClient::call_log() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

void JudgeClient::export_call_log(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& rec : call_log()) {
        out += dump_compact(rec.to_json());
        out += '\n';
    }
    write_file(path, out);
}

std::unique_ptr<JudgeClient> make_judge_client(const JudgeConfig& cfg, std::uint64_t seed) {
    std::shared_ptr<Clock> clock;
    if (cfg.provider == "mock") {
        clock = std::make_shared<ManualClock>();
    } else {
        clock = std::make_shared<SystemClock>();
    }
    return std::make_unique<JudgeClient>(cfg, make_backend(cfg, seed), std::move(clock));
}

}  // namespace feel
