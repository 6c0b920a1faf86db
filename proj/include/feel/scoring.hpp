#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feel/aspect.hpp"
#include "feel/corpus.hpp"
#include "feel/judge.hpp"
#include "feel/prompting.hpp"

namespace feel {

/// Σ_j p_j · j over the four bands.
double expected_score(const ScoreDistribution& d);

struct ScoringConfig {
    std::size_t rounds = 10;
    /// Fewer successful rounds than this marks the score missing.
    std::size_t min_rounds = 5;
    double tolerance = kDefaultNormalizationTolerance;
    bool regenerate_cot = false;
    PromptOptions prompt;

    /// Throws DiagnosticError listing each invalid field.
    void validate() const;
};

enum class RoundStatus { ok, failed };

struct RoundRecord {
    std::size_t index = 0;  // 1-based
    RoundStatus status = RoundStatus::failed;
    std::optional<ScoreDistribution> distribution;  // set iff ok
    std::uint32_t attempts = 0;
    std::string error;

    json to_json() const;
    static RoundRecord from_json(const json& j);
};

/// Mean expected score of the ok rounds, summed in stored order. Throws when
/// there are none.
double mean_of_ok_rounds(std::span<const RoundRecord> rounds);

struct AspectScore {
    Aspect aspect;
    std::string judge_id;
    LikertScore value{0.0};
    std::size_t rounds_used = 0;
    std::vector<RoundRecord> rounds;
};

class MissingScoreError : public Error {
public:
    MissingScoreError(Aspect aspect, std::string judge_id, std::vector<RoundRecord> rounds,
                      const std::string& message)
        : Error(ErrorKind::missing_score, message),
          aspect_(aspect),
          judge_id_(std::move(judge_id)),
          rounds_(std::move(rounds)) {}

    Aspect aspect() const { return aspect_; }
    const std::string& judge_id() const { return judge_id_; }
    const std::vector<RoundRecord>& rounds() const { return rounds_; }

private:
    Aspect aspect_;
    std::string judge_id_;
    std::vector<RoundRecord> rounds_;
};

struct MissingAspect {
    std::string reason;
    std::vector<RoundRecord> rounds;
};

struct EvaluationResult {
    std::string dialogue_id;
    std::string judge_id;
    std::string template_version;
    std::string started_at;
    std::string finished_at;
    std::map<Aspect, AspectScore> scores;
    std::map<Aspect, MissingAspect> missing;

    bool complete() const { return scores.size() == kAspectCount; }
    /// Throws Error(missing_score) naming the aspect when it has no score.
    double value(Aspect a) const;

    json to_json() const;
    static EvaluationResult from_json(const json& j);
};

/// Runs config.rounds independent prompt/parse cycles and averages the
/// expected scores of the rounds that succeeded. Round failures (after the
/// client's own retries) are recorded, not thrown; MissingScoreError carries
/// every round record when fewer than config.min_rounds succeed. Auth
/// failures propagate immediately.
AspectScore evaluate_aspect(JudgeClient& judge, const PromptTemplate& t, const CotSteps& cot,
                            const Dialogue& d, Aspect aspect, const ScoringConfig& config);

/// Scores all six aspects independently. Aspects that end up missing are
/// recorded in EvaluationResult::missing; the others are kept.
EvaluationResult evaluate_dialogue(JudgeClient& judge, const PromptTemplate& t, CotCache& cache,
                                   const Dialogue& d, const ScoringConfig& config);

std::vector<EvaluationResult> load_evaluations(const std::filesystem::path& path);
std::string serialize_evaluations(const std::vector<EvaluationResult>& results);

}  // namespace feel
