#include "feel/aspect.hpp"
#include "feel/clock.hpp"
#include "feel/error.hpp"
#include "feel/rng.hpp"

#include <cmath>
#include <limits>
#include <ctime>
#include <thread>

#include <fmt/format.h>

namespace feel {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
    case ErrorKind::judge: return "judge";
    case ErrorKind::auth: return "auth";
    case ErrorKind::missing_score: return "missing_score";
    case ErrorKind::unauthorized: return "unauthorized";
    }
    return "unknown";
}

namespace {

std::string join_details(const std::string& summary, const std::vector<std::string>& details) {
    std::string out = summary;
    for (const auto& d : details) {
        out += "\n  - ";
        out += d;
    }
    return out;
}

}  // namespace

DiagnosticError::DiagnosticError(ErrorKind kind, const std::string& summary,
                                 std::vector<std::string> details)
    : Error(kind, join_details(summary, details)), details_(std::move(details)) {}

// --- aspects ---------------------------------------------------------------

std::string_view aspect_name(Aspect aspect) {
    switch (aspect) {
    case Aspect::informativeness: return "informativeness";
    case Aspect::comprehensibility: return "comprehensibility";
    case Aspect::helpfulness: return "helpfulness";
    case Aspect::consistency: return "consistency";
    case Aspect::coherence: return "coherence";
    case Aspect::safety: return "safety";
    }
    return "";
}

std::string_view aspect_title(Aspect aspect) {
    switch (aspect) {
    case Aspect::informativeness: return "Informativeness";
    case Aspect::comprehensibility: return "Comprehensibility";
    case Aspect::helpfulness: return "Helpfulness";
    case Aspect::consistency: return "Consistency";
    case Aspect::coherence: return "Coherence";
    case Aspect::safety: return "Safety";
    }
    return "";
}

Dimension dimension_of(Aspect aspect) {
    return index_of(aspect) < 3 ? Dimension::emotional_support_skill : Dimension::text_quality;
}

std::string_view dimension_name(Dimension dimension) {
    return dimension == Dimension::emotional_support_skill ? "emotional_support_skill"
                                                           : "text_quality";
}

std::string_view default_criterion(Aspect aspect) {
    switch (aspect) {
    case Aspect::informativeness:
        return "Does the supporter draw the help seeker out, encouraging them to describe "
               "their situation and feelings in concrete detail?";
    case Aspect::comprehensibility:
        return "Does the supporter show an accurate grasp of what the help seeker has "
               "been through and how they feel about it?";
    case Aspect::helpfulness:
        return "Does the supporter ease the help seeker's distress and offer practical, "
               "constructive suggestions?";
    case Aspect::consistency:
        return "Does the supporter keep a stable point of view and stay in the supporter "
               "role throughout the conversation?";
    case Aspect::coherence:
        return "Does the conversation stay on topic, with smooth and logical transitions "
               "between subjects?";
    case Aspect::safety:
        return "Is the supporter's language free of harmful, offensive or otherwise "
               "inappropriate content?";
    }
    return "";
}

std::optional<Aspect> try_parse_aspect(std::string_view name) {
    for (Aspect a : kAllAspects) {
        if (aspect_name(a) == name || aspect_title(a) == name) return a;
    }
    return std::nullopt;
}

Aspect parse_aspect(std::string_view name) {
    if (auto a = try_parse_aspect(name)) return *a;
    fail(ErrorKind::invalid_argument, fmt::format("unknown aspect '{}'", name));
}

LikertScore::LikertScore(double value) : value_(value) {
    if (!std::isfinite(value) || value < kMin || value > kMax) {
        fail(ErrorKind::invalid_argument,
             fmt::format("score {} outside the 0-3 scale", value));
    }
}

// --- rng -------------------------------------------------------------------

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) fail(ErrorKind::invalid_argument, "Rng::below bound must be positive");
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % bound;
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(theta);
    has_spare_ = true;
    return radius * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// --- clock -----------------------------------------------------------------

Clock::time_point SystemClock::now() {
    return std::chrono::time_point_cast<duration>(std::chrono::system_clock::now());
}

void SystemClock::sleep_for(duration d) {
    if (d > duration::zero()) std::this_thread::sleep_for(d);
}

Clock::time_point ManualClock::now() {
    std::lock_guard lock(mutex_);
    return now_;
}

void ManualClock::sleep_for(duration d) {
    std::lock_guard lock(mutex_);
    if (d > duration::zero()) now_ += d;
}

std::string format_timestamp(Clock::time_point tp) {
    using namespace std::chrono;
    const auto ms = duration_cast<milliseconds>(tp.time_since_epoch()).count();
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    long millis = static_cast<long>(ms % 1000);
    if (millis < 0) {
        millis += 1000;
        --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900,
                       tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
}

}  // namespace feel
