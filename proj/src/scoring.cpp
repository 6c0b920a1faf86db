#include "feel/scoring.hpp"

#include <fmt/format.h>

namespace feel {

double expected_score(const ScoreDistribution& d) {
    double s = 0.0;
    for (std::size_t j = 0; j < kBandCount; ++j) s += d[j] * static_cast<double>(j);
    return s;
}

void ScoringConfig::validate() const {
    std::vector<std::string> problems;
    if (rounds == 0) problems.emplace_back("rounds: must be at least 1");
    if (min_rounds == 0) problems.emplace_back("min_rounds: must be at least 1");
    if (min_rounds > rounds) {
        problems.push_back(fmt::format("min_rounds: {} exceeds rounds ({})", min_rounds, rounds));
    }
    if (!(tolerance >= 0.0 && tolerance < 1.0)) problems.emplace_back("tolerance: must be in [0, 1)");
    if (!problems.empty()) {
        throw DiagnosticError(ErrorKind::invalid_argument, "invalid scoring configuration",
                              std::move(problems));
    }
}

json RoundRecord::to_json() const {
    json j = {{"index", index}, {"status", status == RoundStatus::ok ? "ok" : "failed"}, {"attempts", attempts}};
    if (distribution) {
        j["distribution"] = feel::to_json(*distribution);
        j["expected"] = expected_score(*distribution);
    }
    if (!error.empty()) j["error"] = error;
    return j;
}

RoundRecord RoundRecord::from_json(const json& j) {
    RoundRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.status = j.at("status").get<std::string>() == "ok" ? RoundStatus::ok : RoundStatus::failed;
    r.attempts = j.value("attempts", 0U);
    r.error = j.value("error", std::string());
    if (r.status == RoundStatus::ok) {
        r.distribution = distribution_from_json(j.at("distribution"));
    } else if (j.contains("distribution")) {
        fail(ErrorKind::parse, fmt::format("failed round {} must not carry a distribution", r.index));
    }
    return r;
}

double mean_of_ok_rounds(std::span<const RoundRecord> rounds) {
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& r : rounds) {
        if (r.status != RoundStatus::ok) continue;
        sum += expected_score(*r.distribution);
        ++used;
    }
    if (used == 0) fail(ErrorKind::missing_score, "no successful rounds");
    return sum / static_cast<double>(used);
}

AspectScore evaluate_aspect(JudgeClient& judge, const PromptTemplate& t, const CotSteps& cot,
                            const Dialogue& d, Aspect aspect, const ScoringConfig& config) {
    config.validate();
    const auto prompt = build_evaluation_prompt(t, aspect, cot, d, config.prompt);
    std::vector<RoundRecord> rounds;
    rounds.reserve(config.rounds);
    std::size_t ok = 0;
    for (std::size_t n = 1; n <= config.rounds; ++n) {
        RoundRecord rec;
        rec.index = n;
        try {
            auto reply = judge.complete_distribution(prompt, config.tolerance);
            rec.status = RoundStatus::ok;
            rec.distribution = reply.distribution;
            rec.attempts = reply.attempts;
            ++ok;
        } catch (const BackendError& e) {
            if (!e.retryable() && e.failure_class() == FailureClass::auth) throw;
            rec.error = e.what();
            rec.attempts = judge.config().max_retries + 1;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::parse && e.kind() != ErrorKind::judge) throw;
            rec.error = e.what();
            rec.attempts = judge.config().max_retries + 1;
        }
        rounds.push_back(std::move(rec));
    }
    if (ok < config.min_rounds) {
        throw MissingScoreError(aspect, judge.id(), std::move(rounds),
                                fmt::format("judge '{}' scored {} of dialogue '{}' in only {} of {} "
                                            "rounds (minimum {})",
                                            judge.id(), aspect_name(aspect), d.id, ok,
                                            config.rounds, config.min_rounds));
    }
    const double value = mean_of_ok_rounds(rounds);
    return AspectScore{aspect, judge.id(), LikertScore(value), ok, std::move(rounds)};
}

EvaluationResult evaluate_dialogue(JudgeClient& judge, const PromptTemplate& t, CotCache& cache,
                                   const Dialogue& d, const ScoringConfig& config) {
    EvaluationResult result;
    result.dialogue_id = d.id;
    result.judge_id = judge.id();
    result.template_version = t.version();
    result.started_at = format_timestamp(judge.clock().now());
    for (Aspect a : kAllAspects) {
        try {
            const auto cot = get_or_generate_cot(cache, judge, t, a, config.regenerate_cot);
            result.scores.emplace(a, evaluate_aspect(judge, t, cot, d, a, config));
        } catch (const MissingScoreError& e) {
            result.missing.emplace(a, MissingAspect{e.what(), e.rounds()});
        } catch (const BackendError& e) {
            if (e.failure_class() == FailureClass::auth) throw;
            result.missing.emplace(a, MissingAspect{e.what(), {}});
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::parse && e.kind() != ErrorKind::judge) throw;
            result.missing.emplace(a, MissingAspect{e.what(), {}});
        }
    }
    result.finished_at = format_timestamp(judge.clock().now());
    return result;
}

double EvaluationResult::value(Aspect a) const {
    auto it = scores.find(a);
    if (it == scores.end()) {
        fail(ErrorKind::missing_score, fmt::format("judge '{}' has no {} score for dialogue '{}'",
                                                   judge_id, aspect_name(a), dialogue_id));
    }
    return it->second.value.value();
}

namespace {

json rounds_to_json(const std::vector<RoundRecord>& rounds) {
    json arr = json::array();
    for (const auto& r : rounds) arr.push_back(r.to_json());
    return arr;
}

std::vector<RoundRecord> rounds_from_json(const json& j) {
    std::vector<RoundRecord> out;
    for (const auto& r : j) out.push_back(RoundRecord::from_json(r));
    return out;
}

}  // namespace

json EvaluationResult::to_json() const {
    json scores_j = json::object();
    for (const auto& [a, s] : scores) {
        scores_j[std::string(aspect_name(a))] = {
            {"value", s.value.value()}, {"rounds_used", s.rounds_used}, {"rounds", rounds_to_json(s.rounds)}};
    }
    json missing_j = json::object();
    for (const auto& [a, m] : missing) {
        missing_j[std::string(aspect_name(a))] = {{"reason", m.reason}, {"rounds", rounds_to_json(m.rounds)}};
    }
    return {{"dialogue_id", dialogue_id}, {"judge", judge_id},
            {"template_version", template_version}, {"started_at", started_at},
            {"finished_at", finished_at}, {"scores", std::move(scores_j)},
            {"missing", std::move(missing_j)}};
}

EvaluationResult EvaluationResult::from_json(const json& j) {
    EvaluationResult r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    r.judge_id = j.at("judge").get<std::string>();
    r.template_version = j.value("template_version", std::string());
    r.started_at = j.value("started_at", std::string());
    r.finished_at = j.value("finished_at", std::string());
    for (const auto& [name, s] : j.at("scores").items()) {
        const auto a = parse_aspect(name);
        AspectScore score{a, r.judge_id, LikertScore(s.at("value").get<double>()),
                          s.value("rounds_used", std::size_t{0}), rounds_from_json(s.value("rounds", json::array()))};
        r.scores.emplace(a, std::move(score));
    }
    if (j.contains("missing")) {
        for (const auto& [name, m] : j["missing"].items()) {
            r.missing.emplace(parse_aspect(name),
                              MissingAspect{m.value("reason", std::string()),
                                            rounds_from_json(m.value("rounds", json::array()))});
        }
    }
    return r;
}

std::vector<EvaluationResult> load_evaluations(const std::filesystem::path& path) {
    std::vector<EvaluationResult> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(EvaluationResult::from_json(j));
        } catch (const json::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: bad evaluation record: {}", path.string(), line, e.what()));
        }
    });
    return out;
}

std::string serialize_evaluations(const std::vector<EvaluationResult>& results) {
    std::string out;
    for (const auto& r : results) {
        out += dump_compact(r.to_json());
        out += '\n';
    }
    return out;
}

}  // namespace feel
