#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "feel/aspect.hpp"
#include "feel/corpus.hpp"
#include "feel/judge.hpp"

namespace feel {

/// Versioned prompt texts. Immutable once built.
///
/// On disk a template lives in `<root>/<version>/`:
///   task.txt, output_format.txt, cot_request.txt, criteria/<aspect>.txt,
///   and CHECKSUM (hex SHA-256 of all texts). load() refuses a directory whose
///   texts no longer match CHECKSUM, so edited texts must get a new version.
class PromptTemplate {
public:
    /// Throws Error(invalid_argument) when any text is blank, a criterion is
    /// missing, or the output format lacks one of the four band labels.
    static PromptTemplate create(std::string version, std::string task_spec,
                                 std::map<Aspect, std::string> criteria, std::string output_format,
                                 std::string cot_request_suffix);

    /// The template shipped with the toolkit (version "feel-v1").
    static const PromptTemplate& builtin();

    static PromptTemplate load(const std::filesystem::path& root, std::string_view version);
    void save(const std::filesystem::path& root) const;

    const std::string& version() const { return version_; }
    const std::string& task_spec() const { return task_spec_; }
    const std::string& criterion(Aspect a) const { return criteria_[index_of(a)]; }
    const std::string& output_format() const { return output_format_; }
    const std::string& cot_request_suffix() const { return cot_request_suffix_; }

    /// SHA-256 over every text, independent of the version label.
    std::string fingerprint() const;

private:
    PromptTemplate() = default;

    std::string version_;
    std::string task_spec_;
    std::array<std::string, kAspectCount> criteria_;
    std::string output_format_;
    std::string cot_request_suffix_;
};

/// Placeholder in output_format replaced by the aspect title.
inline constexpr std::string_view kAspectPlaceholder = "{aspect}";

struct CotSteps {
    Aspect aspect;
    std::string judge_id;
    std::string template_version;
    std::vector<std::string> steps;

    json to_json() const;
    static CotSteps from_json(const json& j);
};

struct PromptOptions {
    bool include_topic = false;
};

/// Task, one criterion, and the "Evaluation Steps:" trailer asking the judge
/// to write its own steps.
std::string build_cot_request(const PromptTemplate& t, Aspect a);

/// Splits a reply into numbered ("1." / "2)") or bulleted lines, dropping the
/// markers. Unmarked lines after a step are folded into it; lines made only of
/// dots or ellipses are skipped. Throws Error(parse) "no enumerable steps"
/// when nothing step-like is found.
std::vector<std::string> parse_cot_response(std::string_view raw);

/// "Seeker: ..." / "Supporter: ..." lines, one per turn, inner newlines
/// collapsed to spaces.
std::string render_transcript(const Dialogue& d);

/// Task spec, criterion, evaluation steps, transcript, answer format, in that
/// order. Throws Error(invalid_argument) when `cot` was made for another
/// aspect or template version.
std::string build_evaluation_prompt(const PromptTemplate& t, Aspect a, const CotSteps& cot,
                                    const Dialogue& d, const PromptOptions& options = {});

/// CoT cache keyed by (judge, aspect, template version), optionally backed by
/// a JSON-Lines file. Later lines for the same key win on reload.
class CotCache {
public:
    CotCache() = default;
    explicit CotCache(std::filesystem::path file);

    std::optional<CotSteps> find(std::string_view judge_id, Aspect aspect,
                                 std::string_view template_version) const;
    void store(const CotSteps& steps);
    std::size_t size() const;

private:
    using Key = std::tuple<std::string, Aspect, std::string>;

    std::optional<std::filesystem::path> file_;
    mutable std::shared_mutex mutex_;
    std::map<Key, CotSteps> entries_;
};

/// Cached steps when present (and `regenerate` is false); otherwise asks the
/// judge, parses, stores and returns. Judge errors propagate.
CotSteps get_or_generate_cot(CotCache& cache, JudgeClient& judge, const PromptTemplate& t,
                             Aspect aspect, bool regenerate = false);

}  // namespace feel
