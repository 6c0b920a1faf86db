#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "feel/io.hpp"

namespace feel {

enum class Role { seeker, supporter };

std::string_view role_name(Role role);
/// Accepts "seeker"/"supporter" plus the usr/sys speaker tags used by
/// augmented corpora.
Role parse_role(std::string_view name);

struct Turn {
    Role role;
    std::string text;

    friend bool operator==(const Turn&, const Turn&) = default;
};

enum class Source { esconv, augesc, generated, other };

std::string_view source_name(Source source);
Source parse_source(std::string_view name);

struct Dialogue {
    std::string id;
    Source source = Source::other;
    std::optional<std::string> topic;
    std::vector<Turn> turns;

    /// Throws Error(invalid_argument) naming the dialogue id when a turn is
    /// blank or either role is absent.
    void validate() const;

    std::size_t count(Role role) const;

    friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

json to_json(const Dialogue& d);
/// Parses and validates one canonical record.
Dialogue dialogue_from_json(const json& j);

enum class CorpusFormat { jsonl, esconv, augesc };

CorpusFormat parse_corpus_format(std::string_view name);

/// Fields present in source records that the canonical model does not keep.
struct ImportReport {
    std::size_t records = 0;
    std::map<std::string, std::size_t> dropped_fields;

    json to_json() const;
};

/// Loads a corpus file.
///
/// jsonl: one canonical record per line.
/// esconv: a JSON array of ESConv-style objects (`dialog` of
///   `{speaker, content}`, `problem_type` as topic); ids are "esconv-<index>".
/// augesc: one dialogue per line, each a JSON array of `[speaker, text]`
///   pairs with speakers usr/sys; ids are "augesc-<line>".
///
/// All records are checked before returning. Any invalid record or duplicate
/// id raises DiagnosticError listing every offending record with its line
/// (or array index) and id.
std::vector<Dialogue> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                  ImportReport* report = nullptr);

std::string serialize_corpus(const std::vector<Dialogue>& corpus);
void write_corpus(const std::filesystem::path& path, const std::vector<Dialogue>& corpus);

const Dialogue* find_dialogue(const std::vector<Dialogue>& corpus, std::string_view id);

struct RedactionRule {
    std::string name;
    std::string pattern;  // ECMAScript regular expression
};

inline constexpr std::string_view kRedacted = "[REDACTED]";

/// Default rules: e-mail addresses, URLs and phone-like digit runs.
std::vector<RedactionRule> default_redaction_rules();

/// Compiled rule set. Construction throws Error(invalid_argument) naming the
/// first rule whose pattern does not compile.
class Redactor {
public:
    explicit Redactor(std::vector<RedactionRule> rules);

    /// Replaces every rule match with "[REDACTED]". Existing placeholders are
    /// left untouched, which makes the operation idempotent.
    std::string redact(std::string_view text) const;

    std::size_t size() const { return compiled_.size(); }

private:
    std::vector<RedactionRule> rules_;
    std::vector<std::regex> compiled_;
};

Dialogue anonymize(const Dialogue& d, const Redactor& redactor);
Dialogue anonymize(const Dialogue& d, const std::vector<RedactionRule>& rules);

/// Picks n distinct dialogues with a partial Fisher-Yates shuffle driven by
/// Rng(seed). The selection is returned in corpus order, so n == size yields
/// the corpus unchanged.
std::vector<Dialogue> sample_dialogues(const std::vector<Dialogue>& corpus, std::size_t n,
                                       std::uint64_t seed);

}  // namespace feel
