#include "feel/corpus.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "feel/error.hpp"
#include "feel/rng.hpp"

namespace feel {

namespace fs = std::filesystem;

std::string_view role_name(Role role) {
    return role == Role::seeker ? "seeker" : "supporter";
}

Role parse_role(std::string_view name) {
    if (name == "seeker" || name == "usr" || name == "user") return Role::seeker;
    if (name == "supporter" || name == "sys" || name == "system") return Role::supporter;
    fail(ErrorKind::invalid_argument, fmt::format("unknown role '{}'", name));
}

std::string_view source_name(Source source) {
    switch (source) {
    case Source::esconv: return "esconv";
    case Source::augesc: return "augesc";
    case Source::generated: return "generated";
    case Source::other: return "other";
    }
    return "other";
}

Source parse_source(std::string_view name) {
    if (name == "esconv") return Source::esconv;
    if (name == "augesc") return Source::augesc;
    if (name == "generated") return Source::generated;
    if (name == "other") return Source::other;
    fail(ErrorKind::invalid_argument, fmt::format("unknown source '{}'", name));
}

void Dialogue::validate() const {
    if (id.empty()) fail(ErrorKind::invalid_argument, "dialogue id is empty");
    if (turns.empty()) {
        fail(ErrorKind::invalid_argument, fmt::format("dialogue '{}' has no turns", id));
    }
    for (std::size_t i = 0; i < turns.size(); ++i) {
        if (trim(turns[i].text).empty()) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("dialogue '{}' turn {} is blank", id, i));
        }
    }
    if (count(Role::seeker) == 0 || count(Role::supporter) == 0) {
        fail(ErrorKind::invalid_argument,
             fmt::format("dialogue '{}' needs at least one seeker and one supporter turn", id));
    }
}

std::size_t Dialogue::count(Role role) const {
    return static_cast<std::size_t>(
        std::count_if(turns.begin(), turns.end(), [role](const Turn& t) { return t.role == role; }));
}

json to_json(const Dialogue& d) {
    json turns = json::array();
    for (const auto& t : d.turns) {
        turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
    }
    return {
        {"id", d.id},
        {"source", source_name(d.source)},
        {"topic", d.topic ? json(*d.topic) : json(nullptr)},
        {"turns", std::move(turns)},
    };
}

namespace {

const json& require(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        fail(ErrorKind::parse, fmt::format("missing field '{}'", key));
    }
    return j.at(key);
}

std::string require_string(const json& j, const char* key) {
    const auto& v = require(j, key);
    if (!v.is_string()) fail(ErrorKind::parse, fmt::format("field '{}' must be a string", key));
    return v.get<std::string>();
}

std::string id_hint(const json& j) {
    if (j.is_object() && j.contains("id") && j["id"].is_string()) return j["id"].get<std::string>();
    return "?";
}

struct Loader {
    const fs::path& path;
    std::vector<Dialogue> out;
    std::vector<std::string> diagnostics;
    std::set<std::string> seen;

    void accept(std::string_view where, Dialogue d) {
        try {
            d.validate();
        } catch (const Error& e) {
            diagnostics.push_back(fmt::format("{}: {}", where, e.what()));
            return;
        }
        if (!seen.insert(d.id).second) {
            diagnostics.push_back(fmt::format("{}: duplicate dialogue id '{}'", where, d.id));
            return;
        }
        out.push_back(std::move(d));
    }

    void reject(std::string_view where, std::string_view id, std::string_view why) {
        diagnostics.push_back(fmt::format("{}: record '{}': {}", where, id, why));
    }
};

void load_jsonl(Loader& loader) {
    for_each_jsonl(loader.path, [&](std::size_t line, const json& j) {
        const auto where = fmt::format("{}:{}", loader.path.string(), line);
        try {
            Dialogue d;
            d.id = require_string(j, "id");
            d.source = j.contains("source") ? parse_source(require_string(j, "source"))
                                            : Source::other;
            if (j.contains("topic") && !j["topic"].is_null()) d.topic = require_string(j, "topic");
            const auto& turns = require(j, "turns");
            if (!turns.is_array()) fail(ErrorKind::parse, "field 'turns' must be an array");
            for (const auto& t : turns) {
                d.turns.push_back({parse_role(require_string(t, "role")), require_string(t, "text")});
            }
            loader.accept(where, std::move(d));
        } catch (const Error& e) {
            loader.reject(where, id_hint(j), e.what());
        }
    });
}

void note_dropped(ImportReport* report, const json& record, std::initializer_list<std::string_view> kept) {
    if (report == nullptr || !record.is_object()) return;
    for (const auto& [key, _] : record.items()) {
        if (std::find(kept.begin(), kept.end(), key) == kept.end()) ++report->dropped_fields[key];
    }
}

void load_esconv(Loader& loader, ImportReport* report) {
    json doc;
    try {
        doc = json::parse(read_file(loader.path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, fmt::format("{}: invalid JSON: {}", loader.path.string(), e.what()));
    }
    if (!doc.is_array()) {
        fail(ErrorKind::parse, fmt::format("{}: expected a JSON array of dialogues", loader.path.string()));
    }
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& rec = doc[i];
        const auto where = fmt::format("{}[{}]", loader.path.string(), i);
        const auto id = fmt::format("esconv-{}", i);
        note_dropped(report, rec, {"problem_type", "dialog"});
        try {
            Dialogue d;
            d.id = id;
            d.source = Source::esconv;
            if (rec.contains("problem_type") && rec["problem_type"].is_string()) {
                d.topic = rec["problem_type"].get<std::string>();
            }
            const auto& dialog = require(rec, "dialog");
            if (!dialog.is_array()) fail(ErrorKind::parse, "field 'dialog' must be an array");
            for (const auto& t : dialog) {
                if (report != nullptr) {
                    for (const auto& [key, _] : t.items()) {
                        if (key != "speaker" && key != "content") ++report->dropped_fields["dialog." + key];
                    }
                }
                d.turns.push_back({parse_role(require_string(t, "speaker")),
                                   std::string(trim(require_string(t, "content")))});
            }
            loader.accept(where, std::move(d));
        } catch (const Error& e) {
            loader.reject(where, id, e.what());
        }
    }
}

void load_augesc(Loader& loader) {
    for_each_jsonl(loader.path, [&](std::size_t line, const json& rec) {
        const auto where = fmt::format("{}:{}", loader.path.string(), line);
        const auto id = fmt::format("augesc-{}", line);
        try {
            if (!rec.is_array()) fail(ErrorKind::parse, "expected an array of [speaker, text] pairs");
            Dialogue d;
            d.id = id;
            d.source = Source::augesc;
            for (const auto& pair : rec) {
                if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
                    fail(ErrorKind::parse, "turn must be a [speaker, text] pair of strings");
                }
                d.turns.push_back({parse_role(pair[0].get<std::string>()),
                                   std::string(trim(pair[1].get<std::string>()))});
            }
            loader.accept(where, std::move(d));
        } catch (const Error& e) {
            loader.reject(where, id, e.what());
        }
    });
}

}  // namespace

Dialogue dialogue_from_json(const json& j) {
    Dialogue d;
    d.id = require_string(j, "id");
    d.source = j.contains("source") ? parse_source(require_string(j, "source")) : Source::other;
    if (j.contains("topic") && !j["topic"].is_null()) d.topic = require_string(j, "topic");
    const auto& turns = require(j, "turns");
    if (!turns.is_array()) fail(ErrorKind::parse, "field 'turns' must be an array");
    for (const auto& t : turns) {
        d.turns.push_back({parse_role(require_string(t, "role")), require_string(t, "text")});
    }
    d.validate();
    return d;
}

CorpusFormat parse_corpus_format(std::string_view name) {
    if (name == "jsonl") return CorpusFormat::jsonl;
    if (name == "esconv") return CorpusFormat::esconv;
    if (name == "augesc") return CorpusFormat::augesc;
    fail(ErrorKind::invalid_argument, fmt::format("unknown corpus format '{}'", name));
}

json ImportReport::to_json() const {
    return {{"records", records}, {"dropped_fields", dropped_fields}};
}

std::vector<Dialogue> load_corpus(const fs::path& path, CorpusFormat format, ImportReport* report) {
    if (!fs::exists(path)) fail(ErrorKind::io, fmt::format("corpus file '{}' not found", path.string()));
    Loader loader{path, {}, {}, {}};
    switch (format) {
    case CorpusFormat::jsonl: load_jsonl(loader); break;
    case CorpusFormat::esconv: load_esconv(loader, report); break;
    case CorpusFormat::augesc: load_augesc(loader); break;
    }
    if (!loader.diagnostics.empty()) {
        throw DiagnosticError(ErrorKind::parse,
                              fmt::format("{} invalid record(s) in '{}'", loader.diagnostics.size(),
                                          path.string()),
                              std::move(loader.diagnostics));
    }
    if (report != nullptr) report->records = loader.out.size();
    return std::move(loader.out);
}

std::string serialize_corpus(const std::vector<Dialogue>& corpus) {
    std::string out;
    for (const auto& d : corpus) {
        out += dump_compact(to_json(d));
        out += '\n';
    }
    return out;
}

void write_corpus(const fs::path& path, const std::vector<Dialogue>& corpus) {
    write_file(path, serialize_corpus(corpus));
}

const Dialogue* find_dialogue(const std::vector<Dialogue>& corpus, std::string_view id) {
    auto it = std::find_if(corpus.begin(), corpus.end(), [&](const Dialogue& d) { return d.id == id; });
    return it == corpus.end() ? nullptr : &*it;
}

// --- anonymization ---------------------------------------------------------

std::vector<RedactionRule> default_redaction_rules() {
    return {
        {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})"},
        {"url", R"((?:https?://|www\.)[^\s<>"]+)"},
        {"phone", R"(\+?\(?\d[\d\-.() ]{5,}\d)"},
    };
}

Redactor::Redactor(std::vector<RedactionRule> rules) : rules_(std::move(rules)) {
    compiled_.reserve(rules_.size());
    for (const auto& rule : rules_) {
        try {
            compiled_.emplace_back(rule.pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("redaction rule '{}' has invalid pattern '{}': {}", rule.name,
                             rule.pattern, e.what()));
        }
    }
}

std::string Redactor::redact(std::string_view text) const {
    std::string current(text);
    for (const auto& re : compiled_) {
        // Apply the rule only to the gaps between placeholders.
        std::string next;
        std::size_t pos = 0;
        while (pos <= current.size()) {
            const auto hit = current.find(kRedacted, pos);
            const auto end = hit == std::string::npos ? current.size() : hit;
            next += std::regex_replace(current.substr(pos, end - pos), re, std::string(kRedacted));
            if (hit == std::string::npos) break;
            next += kRedacted;
            pos = hit + kRedacted.size();
        }
        current = std::move(next);
    }
    return current;
}

Dialogue anonymize(const Dialogue& d, const Redactor& redactor) {
    Dialogue out = d;
    for (auto& t : out.turns) t.text = redactor.redact(t.text);
    return out;
}

Dialogue anonymize(const Dialogue& d, const std::vector<RedactionRule>& rules) {
    return anonymize(d, Redactor(rules));
}

std::vector<Dialogue> sample_dialogues(const std::vector<Dialogue>& corpus, std::size_t n,
                                       std::uint64_t seed) {
    if (n > corpus.size()) {
        fail(ErrorKind::invalid_argument,
             fmt::format("cannot sample {} dialogues from a corpus of {}", n, corpus.size()));
    }
    std::vector<std::size_t> idx(corpus.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<Dialogue> out;
    out.reserve(n);
    for (auto i : idx) out.push_back(corpus[i]);
    return out;
}

}  // namespace feel
