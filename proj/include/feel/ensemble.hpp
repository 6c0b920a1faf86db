#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feel/aspect.hpp"
#include "feel/rank_stats.hpp"
#include "feel/scoring.hpp"

namespace feel {

/// One line of the human score dataset.
struct HumanScore {
    std::string dialogue_id;
    Aspect aspect;
    double score = 0.0;
    std::size_t n_annotators = 0;
    double residual_gap = 0.0;

    json to_json() const;
    static HumanScore from_json(const json& j);
};

/// Consensus scores keyed by (dialogue, aspect).
class HumanScores {
public:
    HumanScores() = default;
    explicit HumanScores(const std::vector<HumanScore>& records);

    static HumanScores load(const std::filesystem::path& path);

    void set(const std::string& dialogue_id, Aspect aspect, double score);
    std::optional<double> find(const std::string& dialogue_id, Aspect aspect) const;
    /// Dialogues scored in `aspect`, sorted by id.
    std::vector<std::string> dialogues(Aspect aspect) const;
    /// Dialogues scored in every aspect, sorted by id.
    std::vector<std::string> dialogues() const;

private:
    std::map<std::string, std::map<Aspect, double>> scores_;
};

/// judge -> dialogue -> evaluation
using JudgeScoreTable = std::map<std::string, std::map<std::string, EvaluationResult>>;

/// Loads `<dir>/<judge>.jsonl` for each judge.
JudgeScoreTable load_judge_scores(const std::filesystem::path& dir, const std::vector<std::string>& judges);

struct JudgeWeight {
    std::string judge_id;
    double correlation = 0.0;  // Spearman against human scores
    double weight = 0.0;       // correlation / Σ correlations
};

struct EnsembleWeights {
    std::string template_version;
    std::string trained_on;
    std::vector<std::string> judges;  // fixed order shared by every aspect
    std::map<Aspect, std::vector<JudgeWeight>> aspects;

    /// Throws unless every aspect lists exactly `judges` in order with
    /// non-negative weights summing to 1 within 1e-9.
    void validate() const;
    double weight(Aspect aspect, const std::string& judge_id) const;

    json to_json() const;
    static EnsembleWeights from_json(const json& j);
    static EnsembleWeights load(const std::filesystem::path& path);

    static constexpr double kSumTolerance = 1e-9;
};

struct TrainOptions {
    /// Negative correlations become 0 instead of failing.
    bool clamp_negative = false;
    std::string template_version;
    std::string trained_on;
};

/// For each aspect: c = spearman(judge scores, human scores) over the human
/// dialogues, weight = c / Σc. Fails (naming aspect and judge) on a negative
/// c without clamp_negative, on Σc <= 1e-6, on fewer than three dialogues, or
/// when a judge lacks a score for a human-scored dialogue.
EnsembleWeights train_weights(const std::vector<std::string>& judges, const JudgeScoreTable& scores,
                              const HumanScores& human, const TrainOptions& options);

/// Weights given directly as correlations (one vector per aspect, in `judges`
/// order), normalized the same way as train_weights.
EnsembleWeights weights_from_correlations(const std::vector<std::string>& judges,
                                          const std::map<Aspect, std::vector<double>>& correlations,
                                          bool clamp_negative = false);

struct FeelAspect {
    double value = 0.0;
    std::map<std::string, double> judge_scores;
};

struct FeelResult {
    std::string dialogue_id;
    std::map<Aspect, FeelAspect> aspects;

    /// Unweighted mean of the six aspect scores.
    double mean() const;

    json to_json() const;
    static FeelResult from_json(const json& j);
};

/// F_i = Σ_n weight(i, n) · S(i, n), summed in judge-id order so input order
/// never changes the bits. With skip_missing, judges lacking an aspect are
/// dropped and the remaining weights renormalized.
FeelResult feel_score(const EnsembleWeights& weights,
                      const std::map<std::string, EvaluationResult>& per_judge, bool skip_missing = false);

std::vector<FeelResult> load_feel_results(const std::filesystem::path& path);

struct AblationRow {
    std::vector<std::string> judges;
    std::optional<EnsembleWeights> weights;
    std::map<Aspect, AgreementReport> per_aspect;
    AgreementReport overall;  // mean over aspects
    std::string error;        // set when training failed for this subset

    std::string label() const;  // "A+B"
};

struct AblationReport {
    std::vector<AblationRow> rows;
    json to_json() const;
};

/// Expands "all-pairs" (every pair plus the full set), "all" (every
/// non-empty subset, singletons first) or an explicit "A+B;A+C" list.
std::vector<std::vector<std::string>> expand_subsets(const std::string& spec,
                                                     const std::vector<std::string>& judges);

/// Retrains weights per subset on `train` and scores agreement of the FEEL
/// output with `heldout`: per aspect, Spearman and Kendall over dialogues and
/// RMSE/MAE between the induced dialogue rankings.
AblationReport ablate(const std::vector<std::vector<std::string>>& subsets, const JudgeScoreTable& scores,
                      const HumanScores& train, const HumanScores& heldout, const TrainOptions& options,
                      RmseForm form = RmseForm::standard);

}  // namespace feel
