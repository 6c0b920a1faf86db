#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "feel/clock.hpp"
#include "feel/error.hpp"
#include "feel/io.hpp"

namespace feel {

inline constexpr std::size_t kBandCount = 4;

/// Probabilities over the score bands 0..3. Always normalized: every entry in
/// [0, 1] and the sum within 1e-9 of 1.
class ScoreDistribution {
public:
    static constexpr double kSumTolerance = 1e-9;

    /// Throws Error(invalid_argument) unless the values already satisfy the
    /// invariants.
    explicit ScoreDistribution(std::array<double, kBandCount> p);

    /// Renormalizes values whose sum is within `tolerance` of 1 by dividing
    /// by the sum. Values already within kSumTolerance are kept bit-exact.
    static ScoreDistribution normalized(std::array<double, kBandCount> raw, double tolerance);

    static ScoreDistribution point_mass(std::size_t band);
    static ScoreDistribution uniform();

    double operator[](std::size_t band) const { return p_[band]; }
    const std::array<double, kBandCount>& probabilities() const { return p_; }

    friend bool operator==(const ScoreDistribution&, const ScoreDistribution&) = default;

private:
    std::array<double, kBandCount> p_;
};

inline constexpr double kDefaultNormalizationTolerance = 0.05;

/// Extracts the four band probabilities from a judge reply. Band lines look
/// like "2 points: 0.3" or "1 point: 25%". Throws Error(parse) when a band is
/// missing, a value falls outside [0, 1], or the sum is further than
/// `tolerance` from 1.
ScoreDistribution parse_distribution(std::string_view raw,
                                     double tolerance = kDefaultNormalizationTolerance);

/// Canonical answer block; parse_distribution inverts it exactly.
std::string render_distribution(const ScoreDistribution& d);

json to_json(const ScoreDistribution& d);
ScoreDistribution distribution_from_json(const json& j);

// ---------------------------------------------------------------------------

struct RateLimit {
    std::uint32_t requests = 0;  // 0 disables limiting
    std::chrono::milliseconds interval{1000};
};

struct JudgeConfig {
    std::string judge_id;
    /// Wire adapter: "mock", "openai" (chat-completions compatible) or
    /// "ernie" (Qianfan chat endpoint).
    std::string provider = "mock";
    std::string endpoint;
    std::string model;
    /// Name of the environment variable holding the API key. Keys are never
    /// stored in config files.
    std::string credential_env;
    std::chrono::milliseconds timeout{60000};
    std::uint32_t max_retries = 3;
    std::chrono::milliseconds backoff_base{500};
    RateLimit rate_limit;
    /// Passed through to the backend untouched (temperature etc.).
    json params = json::object();
    /// Mock scenario, used when provider == "mock".
    json scenario = json::object();
};

JudgeConfig judge_config_from_json(const json& j);
json to_json(const JudgeConfig& cfg);

/// Validates a list of judge configs, reporting every problem at once as a
/// DiagnosticError (empty or duplicate ids, unknown providers, missing
/// endpoints for network providers).
void validate_judge_configs(const std::vector<JudgeConfig>& configs);

// ---------------------------------------------------------------------------

enum class FailureClass { transient, rate_limited, timeout, auth, rejected };

/// Thrown by backends. Auth failures and rejected requests (other 4xx) are
/// non-retryable.
class BackendError : public Error {
public:
    BackendError(FailureClass cls, const std::string& message)
        : Error(cls == FailureClass::auth ? ErrorKind::auth : ErrorKind::judge, message),
          cls_(cls) {}

    FailureClass failure_class() const noexcept { return cls_; }
    bool retryable() const noexcept {
        return cls_ == FailureClass::transient || cls_ == FailureClass::rate_limited ||
               cls_ == FailureClass::timeout;
    }

private:
    FailureClass cls_;
};

/// One provider wire adapter. Implementations must be safe for concurrent use.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

/// Sliding-window limiter: at most `requests` dispatches in any window of
/// length `interval`. acquire() sleeps on the supplied clock until a slot frees.
class RateLimiter {
public:
    RateLimiter(RateLimit limit, Clock& clock) : limit_(limit), clock_(clock) {}

    void acquire();

private:
    RateLimit limit_;
    Clock& clock_;
    std::mutex mutex_;
    std::deque<Clock::time_point> recent_;
};

struct CallRecord {
    std::string judge_id;
    std::string prompt_sha256;
    std::uint32_t attempt = 0;
    std::string started_at;
    double latency_ms = 0.0;
    bool ok = false;
    std::string error;

    json to_json() const;
};

struct Completion {
    std::string text;
    std::uint32_t attempts = 0;
    double latency_ms = 0.0;
};

struct DistributionReply {
    ScoreDistribution distribution;
    std::uint32_t attempts = 0;
};

/// A configured judge: backend plus retry, backoff, rate limiting and an
/// audit log. Safe for concurrent callers; dispatch is serialized only by the
/// rate limiter.
class JudgeClient {
public:
    JudgeClient(JudgeConfig config, std::shared_ptr<Backend> backend,
                std::shared_ptr<Clock> clock);

    const std::string& id() const { return config_.judge_id; }
    const JudgeConfig& config() const { return config_; }
    Clock& clock() { return *clock_; }

    /// Up to max_retries + 1 attempts with exponential backoff between them.
    /// Auth failures are raised immediately. After the last attempt the final
    /// BackendError is rethrown.
    Completion complete(const std::string& prompt);

    /// Like complete(), but a reply that fails parse_distribution also counts
    /// as a failed attempt and triggers a re-ask.
    DistributionReply complete_distribution(const std::string& prompt,
                                            double tolerance = kDefaultNormalizationTolerance);

    std::vector<CallRecord> call_log() const;
    void export_call_log(const std::filesystem::path& path) const;

private:
    std::string attempt_once(const std::string& prompt, std::uint32_t attempt,
                             const std::string& digest);
    void backoff(std::uint32_t attempt);

    JudgeConfig config_;
    std::shared_ptr<Backend> backend_;
    std::shared_ptr<Clock> clock_;
    RateLimiter limiter_;
    mutable std::mutex log_mutex_;
    std::vector<CallRecord> log_;
};

/// Builds the wire adapter named by cfg.provider. Network adapters read the
/// API key from the environment variable named by cfg.credential_env.
std::shared_ptr<Backend> make_backend(const JudgeConfig& cfg, std::uint64_t seed);

/// Judge client with the clock appropriate for its provider: a ManualClock for
/// mocks (reproducible timestamps), the system clock otherwise.
std::unique_ptr<JudgeClient> make_judge_client(const JudgeConfig& cfg, std::uint64_t seed);

}  // namespace feel
