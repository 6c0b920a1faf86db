#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "feel/aspect.hpp"
#include "feel/judge.hpp"

namespace feel {

/// Backend that answers from a scenario instead of the network. Every call is
/// recorded (thread-safe) so tests can assert on call counts and prompts.
class MockBackend : public Backend {
public:
    std::string complete(const std::string& prompt) final;

    std::vector<std::string> calls() const;
    std::size_t call_count() const;

protected:
    virtual std::string respond(const std::string& prompt, std::size_t occurrence) = 0;

private:
    mutable std::mutex mutex_;
    std::vector<std::string> calls_;
    std::map<std::string, std::size_t> occurrences_;
};

/// One scripted step: either a reply or an injected failure.
struct MockAction {
    std::string text;
    std::optional<FailureClass> failure;

    static MockAction reply(std::string t) { return {std::move(t), std::nullopt}; }
    static MockAction failing(FailureClass c) { return {{}, c}; }
};

struct MockRule {
    std::string match;  // substring, or ECMAScript regex when is_regex
    bool is_regex = false;
    std::vector<MockAction> actions;
    /// After the last action: repeat from the start (true) or keep the last.
    bool cycle = false;
};

/// Rules are tried in order; each rule walks its own action list. With
/// `strict`, a prompt matching no rule raises Error(invalid_argument) quoting
/// the prompt; otherwise `fallback` answers it.
class ScriptedBackend final : public MockBackend {
public:
    ScriptedBackend(std::vector<MockRule> rules, bool strict,
                    std::optional<MockAction> fallback = std::nullopt);

    /// Same text for every prompt.
    static std::shared_ptr<ScriptedBackend> fixed(std::string text);
    /// Plays `actions` in order for any prompt, then keeps repeating the last.
    static std::shared_ptr<ScriptedBackend> sequence(std::vector<MockAction> actions);

protected:
    std::string respond(const std::string& prompt, std::size_t occurrence) override;

private:
    struct Compiled {
        MockRule rule;
        std::optional<std::regex> re;
        std::size_t hits = 0;
    };
    std::vector<Compiled> rules_;
    bool strict_;
    std::optional<MockAction> fallback_;
    std::size_t fallback_hits_ = 0;
    std::mutex script_mutex_;
};

/// Parameters of a synthetic judge.
///
/// For each (dialogue transcript, aspect) there is a latent true score in
/// [0, 3] (synthetic_latent_score). The judge perceives
///   mean = clamp(latent' + bias + N(0, judge_noise))
/// where latent' is the latent, or 3 - latent when `invert` is set, and the
/// N(0, judge_noise) term is fixed per (judge seed, transcript, aspect). Each
/// round then draws clamp(mean + N(0, round_noise)) and answers with the
/// two-band distribution whose expectation equals that draw. A fixed `center`
/// replaces the latent entirely.
struct SyntheticProfile {
    std::uint64_t seed = 0;
    std::optional<double> center;
    double bias = 0.0;
    double judge_noise = 0.0;
    double round_noise = 0.25;
    bool invert = false;
    std::string cot_text =
        "1. Read the whole conversation carefully.\n"
        "2. Note how the supporter responds to the help seeker in each turn.\n"
        "3. Compare the supporter's behaviour with the evaluation criterion.\n"
        "4. Decide how likely each score band is.\n";
};

/// Answers CoT requests with profile.cot_text and evaluation prompts with
/// seeded distributions. Replies depend only on (seed, prompt, how many times
/// this exact prompt was seen before), never on global call order.
class SyntheticBackend final : public MockBackend {
public:
    explicit SyntheticBackend(SyntheticProfile profile) : profile_(std::move(profile)) {}

    /// Expected score of the judge's per-dialogue mean before round noise.
    double perceived_mean(std::string_view transcript, Aspect aspect) const;

protected:
    std::string respond(const std::string& prompt, std::size_t occurrence) override;

private:
    SyntheticProfile profile_;
};

/// Deterministic pseudo "true" quality of a transcript in one aspect, in [0, 3].
double synthetic_latent_score(std::string_view transcript, Aspect aspect);

/// Two-band distribution (floor/ceil of mean) with expectation == mean.
ScoreDistribution distribution_with_mean(double mean);

/// Builds a mock backend from a scenario object:
///   {"kind": "fixed", "response": "..."}
///   {"kind": "scripted", "strict": bool, "rules": [{"match": "...", "regex": bool,
///      "cycle": bool, "responses": ["text" | {"fail": "transient|rate_limited|timeout|auth"}]}],
///    "default": "..."}
///   {"kind": "synthetic", "seed": n, "center": x, "bias": x, "judge_noise": x,
///    "round_noise": x, "invert": bool, "cot": "..."}
/// An empty scenario means {"kind": "synthetic"}. `seed` is mixed into the
/// scenario's own seed so a run-level --seed changes synthetic output.
std::shared_ptr<MockBackend> make_mock_backend(const json& scenario, std::uint64_t seed);

}  // namespace feel
