#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "feel/io.hpp"

namespace feel {

using Tokens = std::vector<std::string>;

/// Lowercases (ASCII, Latin-1, Greek and Cyrillic letters), splits on Unicode
/// whitespace, and emits every punctuation or symbol code point as its own
/// token. Letters, digits and other non-punctuation code points form words.
/// Invalid UTF-8 bytes are treated as word characters.
Tokens tokenize(std::string_view text);

std::string join_tokens(const Tokens& tokens);

inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU with uniform weights over orders 1..n: clipped precisions,
/// geometric mean, brevity penalty against the closest reference length.
/// An order with no matches uses ε / total. Orders the candidate is too short
/// to contain are left out of the mean. Throws on an empty candidate or no
/// references.
double bleu(const Tokens& candidate, std::span<const Tokens> references, int n);

/// F1 of clipped n-gram overlap. Throws on empty input.
double rouge_n(const Tokens& candidate, const Tokens& reference, int n);

/// Length of the longest common subsequence (bit-parallel, O(n·m/64)).
std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// F1 over LCS length. Throws on empty input.
double rouge_l(const Tokens& candidate, const Tokens& reference);

struct MeteorBreakdown {
    std::size_t matches = 0;
    std::size_t chunks = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f_mean = 0.0;
    double penalty = 0.0;
    double score = 0.0;
};

/// METEOR restricted to exact unigram matches. Alignment is greedy left to
/// right, preferring the reference position right after the previous match
/// (which keeps chunks long); the match count is always maximal.
/// F_mean = 10PR / (R + 9P), penalty = 0.5 (chunks / matches)³.
MeteorBreakdown meteor_breakdown(const Tokens& candidate, const Tokens& reference);
double meteor(const Tokens& candidate, const Tokens& reference);

enum class Metric { bleu1, bleu2, rouge1, rouge2, rougeL, meteor };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);
std::vector<Metric> all_metrics();

double score_pair(Metric m, const Tokens& candidate, const Tokens& reference);

/// Supporter responses of one model for one dialogue.
struct CandidateRecord {
    std::string model;
    std::string dialogue_id;
    std::vector<std::string> responses;
};

struct ReferenceRecord {
    std::string dialogue_id;
    std::vector<std::string> responses;
};

/// `{"model", "dialogue_id", "responses": [...]}` per line.
std::vector<CandidateRecord> load_candidates(const std::filesystem::path& path);
/// Either `{"dialogue_id", "responses"}` lines or canonical dialogue records
/// (whose supporter turns become the references).
std::vector<ReferenceRecord> load_references(const std::filesystem::path& path);

struct CorpusScores {
    /// model -> metric -> mean over dialogues
    std::map<std::string, std::map<std::string, double>> summary;
    /// model -> dialogue -> metric -> mean over supporter turns
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> per_dialogue;

    json to_json() const;
};

/// Each response is scored against the aligned reference response; a
/// dialogue's score is the mean over its turns and a model's score the mean
/// over its dialogues. Throws Error(invalid_argument) when a dialogue has no
/// reference or the response counts differ.
CorpusScores score_corpus(std::span<const CandidateRecord> candidates,
                          std::span<const ReferenceRecord> references,
                          std::span<const Metric> metrics);

}  // namespace feel
