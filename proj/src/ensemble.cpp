#include "feel/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace feel {

namespace fs = std::filesystem;

namespace {

constexpr double kMinCorrelationSum = 1e-6;

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += sep;
        out += p;
    }
    return out;
}

/// Judge indices sorted by judge id.
std::vector<std::size_t> id_order(const std::vector<std::string>& judges) {
    std::vector<std::size_t> order(judges.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return judges[a] < judges[b]; });
    return order;
}

std::vector<JudgeWeight> normalize(Aspect aspect, const std::vector<std::string>& judges,
                                   std::vector<double> correlations, bool clamp_negative) {
    for (std::size_t n = 0; n < judges.size(); ++n) {
        if (correlations[n] < 0.0) {
            if (!clamp_negative) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("judge '{}' is negatively correlated with human scores on {} "
                                 "(spearman {:.4f}); pass the clamp option to zero it",
                                 judges[n], aspect_name(aspect), correlations[n]));
            }
        }
    }
    std::vector<double> effective = correlations;
    if (clamp_negative) {
        for (double& c : effective) c = std::max(c, 0.0);
    }
    double sum = 0.0;
    for (auto n : id_order(judges)) sum += effective[n];
    if (!(sum > kMinCorrelationSum)) {
        fail(ErrorKind::invalid_argument,
             fmt::format("correlations on {} sum to {:.3g}; cannot normalize weights (judges: {})",
                         aspect_name(aspect), sum, join(judges, ", ")));
    }
    std::vector<JudgeWeight> out;
    for (std::size_t n = 0; n < judges.size(); ++n) {
        out.push_back({judges[n], correlations[n], effective[n] / sum});
    }
    return out;
}

void require_unique(const std::vector<std::string>& judges) {
    if (judges.empty()) fail(ErrorKind::invalid_argument, "ensemble needs at least one judge");
    std::set<std::string> seen;
    for (const auto& j : judges) {
        if (!seen.insert(j).second) fail(ErrorKind::invalid_argument, fmt::format("judge '{}' listed twice", j));
    }
}

}  // namespace

// --- human scores ----------------------------------------------------------

json HumanScore::to_json() const {
    return {{"dialogue_id", dialogue_id}, {"aspect", aspect_name(aspect)}, {"score", score},
            {"n_annotators", n_annotators}, {"residual_gap", residual_gap}};
}

HumanScore HumanScore::from_json(const json& j) {
    HumanScore h;
    h.dialogue_id = j.at("dialogue_id").get<std::string>();
    h.aspect = parse_aspect(j.at("aspect").get<std::string>());
    h.score = LikertScore(j.at("score").get<double>()).value();
    h.n_annotators = j.value("n_annotators", std::size_t{0});
    h.residual_gap = j.value("residual_gap", 0.0);
    return h;
}

HumanScores::HumanScores(const std::vector<HumanScore>& records) {
    for (const auto& r : records) set(r.dialogue_id, r.aspect, r.score);
}

HumanScores HumanScores::load(const fs::path& path) {
    HumanScores out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            const auto h = HumanScore::from_json(j);
            out.set(h.dialogue_id, h.aspect, h.score);
        } catch (const std::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: bad human score record: {}", path.string(), line, e.what()));
        }
    });
    return out;
}

void HumanScores::set(const std::string& dialogue_id, Aspect aspect, double score) {
    scores_[dialogue_id][aspect] = LikertScore(score).value();
}

std::optional<double> HumanScores::find(const std::string& dialogue_id, Aspect aspect) const {
    auto it = scores_.find(dialogue_id);
    if (it == scores_.end()) return std::nullopt;
    auto jt = it->second.find(aspect);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
}

std::vector<std::string> HumanScores::dialogues(Aspect aspect) const {
    std::vector<std::string> out;
    for (const auto& [id, m] : scores_) {
        if (m.count(aspect)) out.push_back(id);
    }
    return out;
}

std::vector<std::string> HumanScores::dialogues() const {
    std::vector<std::string> out;
    for (const auto& [id, m] : scores_) {
        if (m.size() == kAspectCount) out.push_back(id);
    }
    return out;
}

JudgeScoreTable load_judge_scores(const fs::path& dir, const std::vector<std::string>& judges) {
    JudgeScoreTable table;
    for (const auto& judge : judges) {
        const auto path = dir / (judge + ".jsonl");
        auto& by_dialogue = table[judge];
        for (auto& r : load_evaluations(path)) {
            if (r.judge_id != judge) {
                fail(ErrorKind::parse, fmt::format("{}: record for judge '{}' in file of judge '{}'",
                                                   path.string(), r.judge_id, judge));
            }
            auto id = r.dialogue_id;
            by_dialogue.insert_or_assign(std::move(id), std::move(r));
        }
    }
    return table;
}

// --- weights ---------------------------------------------------------------

void EnsembleWeights::validate() const {
    require_unique(judges);
    for (Aspect a : kAllAspects) {
        auto it = aspects.find(a);
        if (it == aspects.end()) fail(ErrorKind::invalid_argument, fmt::format("weights lack aspect {}", aspect_name(a)));
        const auto& row = it->second;
        if (row.size() != judges.size()) {
            fail(ErrorKind::invalid_argument, fmt::format("weights for {} list {} judges, expected {}",
                                                          aspect_name(a), row.size(), judges.size()));
        }
        double sum = 0.0;
        for (std::size_t n = 0; n < row.size(); ++n) {
            if (row[n].judge_id != judges[n]) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("weights for {} are not in judge order", aspect_name(a)));
            }
            if (!(row[n].weight >= 0.0)) {
                fail(ErrorKind::invalid_argument, fmt::format("negative weight for judge '{}' on {}",
                                                              row[n].judge_id, aspect_name(a)));
            }
            sum += row[n].weight;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) {
            fail(ErrorKind::invalid_argument, fmt::format("weights for {} sum to {}", aspect_name(a), sum));
        }
    }
}

double EnsembleWeights::weight(Aspect aspect, const std::string& judge_id) const {
    for (const auto& w : aspects.at(aspect)) {
        if (w.judge_id == judge_id) return w.weight;
    }
    fail(ErrorKind::not_found, fmt::format("no weight for judge '{}'", judge_id));
}

json EnsembleWeights::to_json() const {
    json a = json::object();
    for (const auto& [aspect, row] : aspects) {
        json arr = json::array();
        for (const auto& w : row) arr.push_back({{"judge", w.judge_id}, {"c", w.correlation}, {"rho", w.weight}});
        a[std::string(aspect_name(aspect))] = std::move(arr);
    }
    return {{"template_version", template_version}, {"trained_on", trained_on}, {"judges", judges},
            {"aspects", std::move(a)}};
}

EnsembleWeights EnsembleWeights::from_json(const json& j) {
    EnsembleWeights w;
    w.template_version = j.value("template_version", std::string());
    w.trained_on = j.value("trained_on", std::string());
    for (const auto& [name, arr] : j.at("aspects").items()) {
        auto& row = w.aspects[parse_aspect(name)];
        for (const auto& e : arr) {
            row.push_back({e.at("judge").get<std::string>(), e.value("c", 0.0), e.at("rho").get<double>()});
        }
    }
    if (j.contains("judges")) {
        w.judges = j["judges"].get<std::vector<std::string>>();
    } else if (!w.aspects.empty()) {
        for (const auto& jw : w.aspects.begin()->second) w.judges.push_back(jw.judge_id);
    }
    w.validate();
    return w;
}

EnsembleWeights EnsembleWeights::load(const fs::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, fmt::format("{}: bad weights file: {}", path.string(), e.what()));
    }
}

EnsembleWeights weights_from_correlations(const std::vector<std::string>& judges,
                                          const std::map<Aspect, std::vector<double>>& correlations,
                                          bool clamp_negative) {
    require_unique(judges);
    EnsembleWeights w;
    w.judges = judges;
    for (Aspect a : kAllAspects) {
        auto it = correlations.find(a);
        if (it == correlations.end() || it->second.size() != judges.size()) {
            fail(ErrorKind::invalid_argument, fmt::format("need {} correlations for {}", judges.size(), aspect_name(a)));
        }
        w.aspects[a] = normalize(a, judges, it->second, clamp_negative);
    }
    w.validate();
    return w;
}

EnsembleWeights train_weights(const std::vector<std::string>& judges, const JudgeScoreTable& scores,
                              const HumanScores& human, const TrainOptions& options) {
    require_unique(judges);
    std::map<Aspect, std::vector<double>> correlations;
    for (Aspect a : kAllAspects) {
        const auto dialogues = human.dialogues(a);
        if (dialogues.size() < 3) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("need at least 3 human-scored dialogues for {}, have {}", aspect_name(a), dialogues.size()));
        }
        std::vector<double> truth;
        for (const auto& d : dialogues) truth.push_back(*human.find(d, a));
        for (const auto& judge : judges) {
            auto jt = scores.find(judge);
            if (jt == scores.end()) fail(ErrorKind::not_found, fmt::format("no scores for judge '{}'", judge));
            std::vector<double> predicted;
            for (const auto& d : dialogues) {
                auto dt = jt->second.find(d);
                if (dt == jt->second.end()) {
                    fail(ErrorKind::missing_score, fmt::format("judge '{}' did not score dialogue '{}'", judge, d));
                }
                predicted.push_back(dt->second.value(a));
            }
            try {
                correlations[a].push_back(spearman(predicted, truth));
            } catch (const Error& e) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("cannot correlate judge '{}' on {}: {}", judge, aspect_name(a), e.what()));
            }
        }
    }
    auto w = weights_from_correlations(judges, correlations, options.clamp_negative);
    w.template_version = options.template_version;
    w.trained_on = options.trained_on;
    return w;
}

// --- combination -----------------------------------------------------------

double FeelResult::mean() const {
    if (aspects.empty()) fail(ErrorKind::missing_score, fmt::format("no aspects for dialogue '{}'", dialogue_id));
    double s = 0.0;
    for (const auto& [_, f] : aspects) s += f.value;
    return s / static_cast<double>(aspects.size());
}

json FeelResult::to_json() const {
    json a = json::object();
    for (const auto& [aspect, f] : aspects) {
        a[std::string(aspect_name(aspect))] = {{"F", f.value}, {"judges", f.judge_scores}};
    }
    return {{"dialogue_id", dialogue_id}, {"aspects", std::move(a)}};
}

FeelResult FeelResult::from_json(const json& j) {
    FeelResult r;
    r.dialogue_id = j.at("dialogue_id").get<std::string>();
    for (const auto& [name, f] : j.at("aspects").items()) {
        r.aspects[parse_aspect(name)] = {f.at("F").get<double>(),
                                         f.value("judges", std::map<std::string, double>{})};
    }
    return r;
}

FeelResult feel_score(const EnsembleWeights& weights, const std::map<std::string, EvaluationResult>& per_judge,
                      bool skip_missing) {
    std::set<std::string> expected(weights.judges.begin(), weights.judges.end());
    std::set<std::string> given;
    for (const auto& [j, _] : per_judge) given.insert(j);
    if (expected != given) {
        fail(ErrorKind::invalid_argument,
             fmt::format("judge set mismatch: weights cover [{}], evaluations cover [{}]",
                         join(weights.judges, ", "), join({given.begin(), given.end()}, ", ")));
    }
    FeelResult out;
    out.dialogue_id = per_judge.begin()->second.dialogue_id;
    for (const auto& [j, r] : per_judge) {
        if (r.dialogue_id != out.dialogue_id) {
            fail(ErrorKind::invalid_argument, fmt::format("evaluations mix dialogues '{}' and '{}'",
                                                          out.dialogue_id, r.dialogue_id));
        }
    }
    for (Aspect a : kAllAspects) {
        FeelAspect fa;
        double weight_sum = 0.0;
        double total = 0.0;
        double lo = LikertScore::kMax;
        double hi = LikertScore::kMin;
        // per_judge is ordered by judge id
        for (const auto& [judge, result] : per_judge) {
            auto it = result.scores.find(a);
            if (it == result.scores.end()) {
                if (skip_missing) continue;
                fail(ErrorKind::missing_score, fmt::format("judge '{}' has no {} score for dialogue '{}'",
                                                           judge, aspect_name(a), out.dialogue_id));
            }
            const double s = it->second.value.value();
            const double w = weights.weight(a, judge);
            fa.judge_scores[judge] = s;
            weight_sum += w;
            total += w * s;
            if (w > 0.0) {
                lo = std::min(lo, s);
                hi = std::max(hi, s);
            }
        }
        if (fa.judge_scores.empty() || !(weight_sum > 0.0)) {
            fail(ErrorKind::missing_score, fmt::format("no weighted judge scored {} for dialogue '{}'",
                                                       aspect_name(a), out.dialogue_id));
        }
        // Dividing by the (≈1) weight sum renormalizes after skips; the clamp
        // only absorbs rounding in the last bit.
        const bool renormalize = std::abs(weight_sum - 1.0) > EnsembleWeights::kSumTolerance;
        fa.value = std::clamp(renormalize ? total / weight_sum : total, lo, hi);
        out.aspects.emplace(a, std::move(fa));
    }
    return out;
}

std::vector<FeelResult> load_feel_results(const fs::path& path) {
    std::vector<FeelResult> out;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        try {
            out.push_back(FeelResult::from_json(j));
        } catch (const std::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: bad FEEL record: {}", path.string(), line, e.what()));
        }
    });
    return out;
}

// --- ablation --------------------------------------------------------------

std::string AblationRow::label() const { return join(judges, "+"); }

json AblationReport::to_json() const {
    json arr = json::array();
    for (const auto& r : rows) {
        json row = {{"subset", r.label()}, {"judges", r.judges}};
        if (!r.error.empty()) {
            row["error"] = r.error;
        } else {
            row["weights"] = r.weights->to_json();
            row["overall"] = r.overall.to_json();
            json per = json::object();
            for (const auto& [a, rep] : r.per_aspect) per[std::string(aspect_name(a))] = rep.to_json();
            row["per_aspect"] = std::move(per);
        }
        arr.push_back(std::move(row));
    }
    return {{"rows", std::move(arr)}};
}

std::vector<std::vector<std::string>> expand_subsets(const std::string& spec, const std::vector<std::string>& judges) {
    require_unique(judges);
    std::vector<std::vector<std::string>> out;
    const auto n = judges.size();
    if (spec == "all-pairs") {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) out.push_back({judges[i], judges[j]});
        }
        if (n != 2) out.push_back(judges);
        return out;
    }
    if (spec == "all") {
        if (n > 16) fail(ErrorKind::invalid_argument, "too many judges to enumerate every subset");
        for (std::size_t size = 1; size <= n; ++size) {
            for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
                if (static_cast<std::size_t>(__builtin_popcount(mask)) != size) continue;
                std::vector<std::string> subset;
                for (std::size_t k = 0; k < n; ++k) {
                    if (mask & (1U << k)) subset.push_back(judges[k]);
                }
                out.push_back(std::move(subset));
            }
        }
        return out;
    }
    const std::set<std::string> known(judges.begin(), judges.end());
    for (const auto& group : split(spec, ';')) {
        std::vector<std::string> subset;
        for (const auto& name : split(group, '+')) {
            const std::string id(trim(name));
            if (id.empty()) continue;
            if (!known.count(id)) fail(ErrorKind::invalid_argument, fmt::format("subset names unknown judge '{}'", id));
            subset.push_back(id);
        }
        if (subset.empty()) fail(ErrorKind::invalid_argument, "empty judge subset");
        out.push_back(std::move(subset));
    }
    return out;
}

AblationReport ablate(const std::vector<std::vector<std::string>>& subsets, const JudgeScoreTable& scores,
                      const HumanScores& train, const HumanScores& heldout, const TrainOptions& options,
                      RmseForm form) {
    AblationReport report;
    for (const auto& subset : subsets) {
        if (subset.empty()) fail(ErrorKind::invalid_argument, "empty judge subset");
        AblationRow row;
        row.judges = subset;
        try {
            auto weights = train_weights(subset, scores, train, options);
            std::vector<AgreementReport> per;
            for (Aspect a : kAllAspects) {
                std::vector<std::string> ids;
                std::vector<double> predicted;
                std::vector<double> truth;
                for (const auto& d : heldout.dialogues(a)) {
                    std::map<std::string, EvaluationResult> per_judge;
                    for (const auto& j : subset) per_judge.emplace(j, scores.at(j).at(d));
                    ids.push_back(d);
                    predicted.push_back(feel_score(weights, per_judge).aspects.at(a).value);
                    truth.push_back(*heldout.find(d, a));
                }
                AgreementReport rep;
                rep.n = ids.size();
                rep.spearman = spearman(predicted, truth);
                rep.kendall = kendall_tau_b(predicted, truth);
                const auto p_rank = ranking_from_scores(ids, predicted);
                const auto r_rank = ranking_from_scores(ids, truth);
                rep.rmse = rmse(p_rank, r_rank, form);
                rep.mae = mae(p_rank, r_rank);
                row.per_aspect[a] = rep;
                per.push_back(rep);
            }
            row.overall = aggregate_agreement(per);
            row.weights = std::move(weights);
        } catch (const std::out_of_range&) {
            row.error = "a judge in this subset did not score every held-out dialogue";
        } catch (const Error& e) {
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace feel
