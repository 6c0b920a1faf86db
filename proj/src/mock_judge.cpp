#include "feel/mock_judge.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "feel/rng.hpp"

namespace feel {

std::string MockBackend::complete(const std::string& prompt) {
    std::size_t occurrence = 0;
    {
        std::lock_guard lock(mutex_);
        calls_.push_back(prompt);
        occurrence = occurrences_[prompt]++;
    }
    return respond(prompt, occurrence);
}

std::vector<std::string> MockBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t MockBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_.size();
}

namespace {

std::string play(const MockAction& action) {
    if (action.failure) {
        throw BackendError(*action.failure, "mock judge: scripted failure");
    }
    return action.text;
}

FailureClass parse_failure_class(std::string_view name) {
    if (name == "transient") return FailureClass::transient;
    if (name == "rate_limited") return FailureClass::rate_limited;
    if (name == "timeout") return FailureClass::timeout;
    if (name == "auth") return FailureClass::auth;
    if (name == "rejected") return FailureClass::rejected;
    fail(ErrorKind::invalid_argument, fmt::format("unknown mock failure '{}'", name));
}

MockAction action_from_json(const json& j) {
    if (j.is_string()) return MockAction::reply(j.get<std::string>());
    if (j.is_object() && j.contains("fail")) {
        return MockAction::failing(parse_failure_class(j["fail"].get<std::string>()));
    }
    fail(ErrorKind::invalid_argument, "mock response must be a string or {\"fail\": ...}");
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<MockRule> rules, bool strict,
                                 std::optional<MockAction> fallback)
    : strict_(strict), fallback_(std::move(fallback)) {
    for (auto& rule : rules) {
        if (rule.actions.empty()) fail(ErrorKind::invalid_argument, "mock rule needs at least one response");
        Compiled c{std::move(rule), std::nullopt, 0};
        if (c.rule.is_regex) {
            try {
                c.re.emplace(c.rule.match, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("mock rule pattern '{}' is invalid: {}", c.rule.match, e.what()));
            }
        }
        rules_.push_back(std::move(c));
    }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::fixed(std::string text) {
    return std::make_shared<ScriptedBackend>(std::vector<MockRule>{}, false,
                                             MockAction::reply(std::move(text)));
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::sequence(std::vector<MockAction> actions) {
    MockRule rule{"", false, std::move(actions), false};
    return std::make_shared<ScriptedBackend>(std::vector<MockRule>{std::move(rule)}, true);
}

std::string ScriptedBackend::respond(const std::string& prompt, std::size_t) {
    MockAction action;
    {
        std::lock_guard lock(script_mutex_);
        auto it = std::find_if(rules_.begin(), rules_.end(), [&](const Compiled& c) {
            return c.re ? std::regex_search(prompt, *c.re)
                        : prompt.find(c.rule.match) != std::string::npos;
        });
        if (it != rules_.end()) {
            const auto n = it->rule.actions.size();
            const auto k = it->rule.cycle ? it->hits % n : std::min(it->hits, n - 1);
            ++it->hits;
            action = it->rule.actions[k];
        } else if (!strict_ && fallback_) {
            ++fallback_hits_;
            action = *fallback_;
        } else {
            constexpr std::size_t kQuote = 120;
            fail(ErrorKind::invalid_argument,
                 fmt::format("strict mock judge: no rule matches prompt \"{}{}\"",
                             prompt.substr(0, kQuote), prompt.size() > kQuote ? "..." : ""));
        }
    }
    return play(action);
}

// --- synthetic -------------------------------------------------------------

double synthetic_latent_score(std::string_view transcript, Aspect aspect) {
    const auto h = fnv1a64(fmt::format("{}\x1f{}", transcript, aspect_name(aspect)));
    return 3.0 * static_cast<double>(derive_seed(h, 0) >> 11) * 0x1.0p-53;
}

ScoreDistribution distribution_with_mean(double mean) {
    mean = std::clamp(mean, 0.0, 3.0);
    const auto lo = static_cast<std::size_t>(std::min(std::floor(mean), 2.0));
    const double upper = mean - static_cast<double>(lo);
    std::array<double, kBandCount> p{};
    p[lo] = 1.0 - upper;
    p[lo + 1] = upper;
    return ScoreDistribution(p);
}

namespace {

std::string extract_transcript(const std::string& prompt) {
    std::string out;
    std::size_t pos = 0;
    while (pos < prompt.size()) {
        auto end = prompt.find('\n', pos);
        if (end == std::string::npos) end = prompt.size();
        const std::string_view line(prompt.data() + pos, end - pos);
        if (line.starts_with("Seeker: ") || line.starts_with("Supporter: ")) {
            if (!out.empty()) out += '\n';
            out += line;
        }
        pos = end + 1;
    }
    return out;
}

std::optional<Aspect> extract_aspect(const std::string& prompt) {
    for (Aspect a : kAllAspects) {
        if (prompt.find(fmt::format("{} Score:", aspect_title(a))) != std::string::npos) return a;
    }
    return std::nullopt;
}

}  // namespace

double SyntheticBackend::perceived_mean(std::string_view transcript, Aspect aspect) const {
    if (profile_.center) return std::clamp(*profile_.center, 0.0, 3.0);
    double latent = synthetic_latent_score(transcript, aspect);
    if (profile_.invert) latent = 3.0 - latent;
    double mean = latent + profile_.bias;
    if (profile_.judge_noise > 0.0) {
        Rng rng(derive_seed(profile_.seed,
                            fnv1a64(fmt::format("{}\x1f{}", transcript, aspect_name(aspect)))));
        mean += rng.normal(0.0, profile_.judge_noise);
    }
    return std::clamp(mean, 0.0, 3.0);
}

std::string SyntheticBackend::respond(const std::string& prompt, std::size_t occurrence) {
    if (prompt.find("3 points:") == std::string::npos) return profile_.cot_text;
    const auto aspect = extract_aspect(prompt).value_or(Aspect::informativeness);
    const double mean = perceived_mean(extract_transcript(prompt), aspect);
    Rng rng(derive_seed(derive_seed(profile_.seed, fnv1a64(prompt)), occurrence));
    const double draw = profile_.round_noise > 0.0 ? mean + rng.normal(0.0, profile_.round_noise) : mean;
    return fmt::format("{} Score:\n{}", aspect_title(aspect), render_distribution(distribution_with_mean(draw)));
}

std::shared_ptr<MockBackend> make_mock_backend(const json& scenario, std::uint64_t seed) {
    const auto kind = scenario.value("kind", std::string("synthetic"));
    if (kind == "fixed") {
        return ScriptedBackend::fixed(scenario.value("response", std::string()));
    }
    if (kind == "scripted") {
        std::vector<MockRule> rules;
        for (const auto& r : scenario.value("rules", json::array())) {
            MockRule rule;
            rule.match = r.value("match", std::string());
            rule.is_regex = r.value("regex", false);
            rule.cycle = r.value("cycle", false);
            for (const auto& a : r.value("responses", json::array())) rule.actions.push_back(action_from_json(a));
            rules.push_back(std::move(rule));
        }
        std::optional<MockAction> fallback;
        if (scenario.contains("default")) fallback = action_from_json(scenario["default"]);
        return std::make_shared<ScriptedBackend>(std::move(rules), scenario.value("strict", false),
                                                 std::move(fallback));
    }
    if (kind == "synthetic") {
        SyntheticProfile p;
        p.seed = derive_seed(scenario.value("seed", std::uint64_t{0}), seed);
        if (scenario.contains("center")) p.center = scenario["center"].get<double>();
        p.bias = scenario.value("bias", 0.0);
        p.judge_noise = scenario.value("judge_noise", 0.0);
        p.round_noise = scenario.value("round_noise", 0.25);
        p.invert = scenario.value("invert", false);
        if (scenario.contains("cot")) p.cot_text = scenario["cot"].get<std::string>();
        return std::make_shared<SyntheticBackend>(std::move(p));
    }
    fail(ErrorKind::invalid_argument, fmt::format("unknown mock scenario kind '{}'", kind));
}

}  // namespace feel
