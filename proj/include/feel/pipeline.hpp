#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feel/annotation.hpp"
#include "feel/corpus.hpp"
#include "feel/ensemble.hpp"
#include "feel/judge.hpp"
#include "feel/prompting.hpp"
#include "feel/rank_stats.hpp"
#include "feel/scoring.hpp"
#include "feel/text_metrics.hpp"

namespace feel {

/// "standard" or "literal".
RmseForm parse_rmse_form(std::string_view s);
std::string rmse_form_name(RmseForm f);

struct Policies {
    bool include_topic = false;
    bool regenerate_cot = false;
    bool clamp_negative = false;
    bool skip_missing = false;
    RmseForm rmse_form = RmseForm::standard;
    /// How a six-aspect vector becomes one number when ranking: "mean" or an
    /// aspect name.
    std::string reduction = "mean";
};

/// The single declarative document behind a run. Command-line flags override
/// individual fields.
struct RunConfig {
    std::vector<JudgeConfig> judges;
    std::string template_version = "feel-v1";
    std::optional<std::filesystem::path> template_dir;
    std::size_t rounds = 10;
    std::size_t min_rounds = 5;
    double tolerance = kDefaultNormalizationTolerance;
    Policies policies;
    std::optional<std::filesystem::path> cot_cache;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    /// Relative paths resolve against `base`. Every invalid or unknown field
    /// is reported in one DiagnosticError.
    static RunConfig from_json(const json& j, const std::filesystem::path& base = {});
    static RunConfig load(const std::filesystem::path& path);
    json to_json() const;

    /// Throws DiagnosticError listing each problem.
    void validate() const;
    ScoringConfig scoring() const;
    PromptTemplate prompt_template() const;
    const JudgeConfig* find_judge(const std::string& id) const;
};

/// Three synthetic judges of decreasing fidelity ("mock-a", "mock-b", "mock-c").
std::vector<JudgeConfig> builtin_mock_judges();
/// Synthetic judge config for an id that no config defines.
JudgeConfig synthetic_judge(const std::string& id, double judge_noise = 0.4);

/// Resolves a --judges list: "mock" expands to builtin_mock_judges(); other
/// ids come from the config, and ids starting with "mock" that the config
/// lacks become synthetic judges. Unknown ids are an error.
std::vector<JudgeConfig> resolve_judges(const std::vector<std::string>& ids, const RunConfig& config);


// --- manifests -------------------------------------------------------------

/// Record of one command run, written next to its outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::string config_sha256;
    std::string template_version;
    std::vector<std::string> judges;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::string started_at;
    std::string finished_at;
    std::string status = "ok";
    json details = json::object();

    json to_json() const;
    static RunManifest from_json(const json& j);
    /// Writes `<dir>/manifest.json` for directories and `<file>.manifest.json`
    /// otherwise; returns the path written.
    std::filesystem::path write_next_to(const std::filesystem::path& output) const;
};

std::filesystem::path manifest_path_for(const std::filesystem::path& output);
/// Wall-clock time, or SOURCE_DATE_EPOCH when set (reproducible manifests).
std::string manifest_timestamp();

// --- runners shared by the CLI and the service ------------------------------

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

struct CorpusImportResult {
    std::size_t dialogues = 0;
    ImportReport report;
};

CorpusImportResult run_corpus_import(const std::filesystem::path& in, CorpusFormat format,
                                     const std::filesystem::path& out, bool anonymize_text,
                                     const std::vector<RedactionRule>& rules = default_redaction_rules());

struct EvaluateOptions {
    std::vector<JudgeConfig> judges;
    ScoringConfig scoring;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::optional<std::filesystem::path> cot_cache;
    ProgressFn progress;
};

struct EvaluateResult {
    std::map<std::string, std::filesystem::path> files;  // judge -> results
    std::size_t dialogues = 0;
    std::size_t missing = 0;  // (dialogue, judge, aspect) scores left missing
};

/// Scores every dialogue with every judge and writes `<out>/<judge>.jsonl`
/// (records in corpus order) plus `<out>/<judge>.calls.jsonl`. Work is spread
/// over `jobs` threads across dialogues; synthetic mocks give identical
/// bytes for any job count.
EvaluateResult run_evaluate(const std::vector<Dialogue>& corpus, const PromptTemplate& t,
                            const EvaluateOptions& options, const std::filesystem::path& out_dir);

EnsembleWeights run_train_weights(const std::vector<std::string>& judges, const std::filesystem::path& scores_dir,
                                  const std::filesystem::path& human, const TrainOptions& options,
                                  const std::filesystem::path& out);

/// FEEL scores for every dialogue scored by all judges in the weights,
/// written as JSON-Lines in the first judge's record order.
std::vector<FeelResult> run_feel_score(const EnsembleWeights& weights, const std::filesystem::path& scores_dir,
                                       bool skip_missing, const std::filesystem::path& out);

/// One number per item for ranking; `reduction` is "mean" or an aspect name.
double reduce_aspects(const std::map<Aspect, double>& values, const std::string& reduction);

struct RankOptions {
    std::string reduction = "mean";
    RmseForm rmse_form = RmseForm::standard;
    /// CSV `dialogue_id,model[,topic]` grouping dialogues under models.
    std::optional<std::filesystem::path> models;
};

/// Compares a ranking induced by predictions (FEEL or single-judge evaluation
/// records) with a human ranking: pairwise tallies (.csv, models as items) or
/// human scores (.jsonl, dialogues or models as items). Reports every
/// statistic per topic group and their average.
json run_rank(const std::filesystem::path& predictions, const std::filesystem::path& human,
              const RankOptions& options, const std::optional<std::filesystem::path>& report);

json run_baselines(const std::filesystem::path& candidates, const std::filesystem::path& references,
                   const std::vector<Metric>& metrics, const std::optional<std::filesystem::path>& out);

AblationReport run_ablate(const std::vector<std::string>& judges, const std::string& subsets,
                          const std::filesystem::path& scores_dir, const std::filesystem::path& human,
                          const std::optional<std::filesystem::path>& heldout, const TrainOptions& options,
                          RmseForm form, const std::optional<std::filesystem::path>& out);

}  // namespace feel
