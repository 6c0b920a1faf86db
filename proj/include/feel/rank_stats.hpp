#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "feel/io.hpp"

namespace feel {

/// 1-based ranks, smallest value first; equal values share the mean of the
/// positions they cover (midranks).
std::vector<double> rank_transform(std::span<const double> values);

/// Spearman's rank correlation. Tie-free inputs use 1 - 6Σd²/(n(n²-1));
/// inputs with ties use the product-moment correlation of midranks.
/// Throws Error(invalid_argument) for unequal lengths, n < 2, or a constant
/// argument.
double spearman(std::span<const double> x, std::span<const double> y);

/// Pair classification over all n(n-1)/2 pairs.
struct PairCounts {
    std::int64_t concordant = 0;
    std::int64_t discordant = 0;
    std::int64_t ties_x = 0;      // tied in x only
    std::int64_t ties_y = 0;      // tied in y only
    std::int64_t ties_joint = 0;  // tied in both
};

/// Knight's O(n log n) counting (sort by x, then count y inversions with
/// merge sort).
PairCounts count_pairs(std::span<const double> x, std::span<const double> y);

/// τ_b = (C - D) / sqrt((C + D + T)(C + D + U)). Throws when every pair is
/// tied in x or in y (undefined).
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

struct CorrelationReport {
    std::size_t n = 0;
    double spearman_r = 0.0;
    double kendall_tau = 0.0;
    PairCounts pairs;
    double d_sq_sum = 0.0;  // Σ (rank_x - rank_y)²

    json to_json() const;
};

CorrelationReport correlate(std::span<const double> x, std::span<const double> y);

/// Labelled ranking; ranks are midranks of a permutation of 1..n.
struct RankedList {
    std::vector<std::pair<std::string, double>> items;

    std::size_t size() const { return items.size(); }
    /// Throws unless labels are unique and ranks form a valid midrank vector.
    void validate() const;
};

/// Ranks labels by score; the highest score receives rank 1 when
/// `higher_is_better`.
RankedList ranking_from_scores(std::span<const std::string> labels, std::span<const double> scores,
                               bool higher_is_better = true);

enum class RmseForm {
    standard,  // sqrt(Σ(p - r)² / n)
    literal,   // sqrt(Σ(p - r)²) / n, kept for comparison with published tables
};

/// Both lists must rank the same label set. Ranks are aligned by label.
double rmse(const RankedList& predicted, const RankedList& reference, RmseForm form = RmseForm::standard);
double mae(const RankedList& predicted, const RankedList& reference);

struct PairTally {
    std::string model_a;
    std::string model_b;
    std::int64_t wins_a = 0;
    std::int64_t wins_b = 0;
    std::int64_t ties = 0;
};

/// CSV rows `model_a,model_b,wins_a,wins_b,ties` (header optional, optional
/// leading `topic` column grouped into separate tally sets keyed by topic).
std::vector<std::pair<std::string, std::vector<PairTally>>> load_tallies_csv(const std::filesystem::path& path);

/// Copeland-style ranking: each model scores Σ(wins - losses) over all its
/// comparisons, ties counting as neither; higher score ranks first, equal
/// scores share midranks. Every unordered pair must appear exactly once.
RankedList ranking_from_pairwise(std::span<const PairTally> tallies);

/// Agreement between a predicted and a reference ranking.
struct AgreementReport {
    std::size_t n = 0;
    double spearman = 0.0;
    double kendall = 0.0;
    double rmse = 0.0;
    double mae = 0.0;

    json to_json() const;
};

AgreementReport compare_rankings(const RankedList& predicted, const RankedList& reference,
                                 RmseForm form = RmseForm::standard);

/// Unweighted mean of each statistic. Throws on empty input.
AgreementReport aggregate_agreement(std::span<const AgreementReport> reports);

}  // namespace feel
