#include "feel/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "feel/clock.hpp"
#include "feel/error.hpp"
#include "feel/mock_judge.hpp"
#include "feel/rng.hpp"

namespace feel {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    if (path.is_relative() && !base.empty()) return base / path;
    return path;
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<std::string_view> known,
                    std::vector<std::string>& problems) {
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            problems.push_back(fmt::format("{}{}: unknown field", where, key));
        }
    }
}

template <class T, class Check>
void read_field(const json& j, const char* key, const std::string& where, T& out, Check check,
                const char* expectation, std::vector<std::string>& problems) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    try {
        T value = v.get<T>();
        if (!check(value)) {
            problems.push_back(fmt::format("{}{}: {}", where, key, expectation));
            return;
        }
        out = value;
    } catch (const json::exception&) {
        problems.push_back(fmt::format("{}{}: {}", where, key, expectation));
    }
}

bool valid_reduction(const std::string& r) { return r == "mean" || try_parse_aspect(r).has_value(); }

}  // namespace

RmseForm parse_rmse_form(std::string_view s) {
    if (s == "standard") return RmseForm::standard;
    if (s == "literal") return RmseForm::literal;
    fail(ErrorKind::invalid_argument, fmt::format("unknown rmse form '{}' (standard|literal)", s));
}

std::string rmse_form_name(RmseForm f) { return f == RmseForm::standard ? "standard" : "literal"; }

// --- config ----------------------------------------------------------------

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) fail(ErrorKind::parse, "config must be a JSON object");
    std::vector<std::string> problems;
    RunConfig c;
    reject_unknown(j, "",
                   {"judges", "template", "rounds", "min_rounds", "tolerance", "policies", "cot_cache", "seed",
                    "jobs"},
                   problems);
    if (j.contains("judges")) {
        if (!j["judges"].is_array()) {
            problems.emplace_back("judges: must be an array");
        } else {
            for (std::size_t i = 0; i < j["judges"].size(); ++i) {
                const auto& jj = j["judges"][i];
                const auto where = fmt::format("judges[{}].", i);
                if (jj.is_object()) {
                    reject_unknown(jj, where,
                                   {"judge_id", "provider", "endpoint", "model", "credential_env",
                                    "timeout_seconds", "max_retries", "backoff_seconds", "rate_limit", "params",
                                    "scenario"},
                                   problems);
                }
                try {
                    c.judges.push_back(judge_config_from_json(jj));
                } catch (const std::exception& e) {
                    problems.push_back(fmt::format("judges[{}]: {}", i, e.what()));
                }
            }
        }
    }
    if (j.contains("template")) {
        const auto& t = j["template"];
        if (!t.is_object()) {
            problems.emplace_back("template: must be an object");
        } else {
            reject_unknown(t, "template.", {"version", "dir"}, problems);
            read_field(t, "version", "template.", c.template_version,
                       [](const std::string& s) { return !s.empty(); }, "must be a non-empty string", problems);
            std::string dir;
            read_field(t, "dir", "template.", dir, [](const std::string& s) { return !s.empty(); },
                       "must be a non-empty path", problems);
            if (!dir.empty()) c.template_dir = resolve(base, dir);
        }
    }
    read_field(j, "rounds", "", c.rounds, [](std::size_t v) { return v >= 1; }, "must be an integer >= 1",
               problems);
    read_field(j, "min_rounds", "", c.min_rounds, [](std::size_t v) { return v >= 1; },
               "must be an integer >= 1", problems);
    read_field(j, "tolerance", "", c.tolerance, [](double v) { return v >= 0.0 && v < 1.0; },
               "must be a number in [0, 1)", problems);
    read_field(j, "seed", "", c.seed, [](std::uint64_t) { return true; }, "must be a non-negative integer",
               problems);
    read_field(j, "jobs", "", c.jobs, [](std::size_t v) { return v >= 1; }, "must be an integer >= 1", problems);
    std::string cache;
    read_field(j, "cot_cache", "", cache, [](const std::string& s) { return !s.empty(); },
               "must be a non-empty path", problems);
    if (!cache.empty()) c.cot_cache = resolve(base, cache);
    if (j.contains("policies")) {
        const auto& p = j["policies"];
        if (!p.is_object()) {
            problems.emplace_back("policies: must be an object");
        } else {
            reject_unknown(p, "policies.",
                           {"include_topic", "regenerate_cot", "clamp_negative", "skip_missing", "rmse",
                            "reduction"},
                           problems);
            auto any = [](bool) { return true; };
            read_field(p, "include_topic", "policies.", c.policies.include_topic, any, "must be a boolean",
                       problems);
            read_field(p, "regenerate_cot", "policies.", c.policies.regenerate_cot, any, "must be a boolean",
                       problems);
            read_field(p, "clamp_negative", "policies.", c.policies.clamp_negative, any, "must be a boolean",
                       problems);
            read_field(p, "skip_missing", "policies.", c.policies.skip_missing, any, "must be a boolean",
                       problems);
            std::string form = "standard";
            read_field(p, "rmse", "policies.", form,
                       [](const std::string& s) { return s == "standard" || s == "literal"; },
                       "must be \"standard\" or \"literal\"", problems);
            c.policies.rmse_form = form == "literal" ? RmseForm::literal : RmseForm::standard;
            read_field(p, "reduction", "policies.", c.policies.reduction, valid_reduction,
                       "must be \"mean\" or an aspect name", problems);
        }
    }
    if (!problems.empty()) throw DiagnosticError(ErrorKind::invalid_argument, "invalid config", std::move(problems));
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(j, path.parent_path());
}

json RunConfig::to_json() const {
    json judges_json = json::array();
    for (const auto& jc : judges) judges_json.push_back(feel::to_json(jc));
    json tmpl = {{"version", template_version}};
    if (template_dir) tmpl["dir"] = template_dir->string();
    json j = {{"judges", judges_json},
              {"template", tmpl},
              {"rounds", rounds},
              {"min_rounds", min_rounds},
              {"tolerance", tolerance},
              {"policies",
               {{"include_topic", policies.include_topic},
                {"regenerate_cot", policies.regenerate_cot},
                {"clamp_negative", policies.clamp_negative},
                {"skip_missing", policies.skip_missing},
                {"rmse", rmse_form_name(policies.rmse_form)},
                {"reduction", policies.reduction}}},
              {"seed", seed},
              {"jobs", jobs}};
    if (cot_cache) j["cot_cache"] = cot_cache->string();
    return j;
}

void RunConfig::validate() const {
    std::vector<std::string> problems;
    try {
        scoring().validate();
    } catch (const DiagnosticError& e) {
        problems.insert(problems.end(), e.details().begin(), e.details().end());
    }
    try {
        validate_judge_configs(judges);
    } catch (const DiagnosticError& e) {
        problems.insert(problems.end(), e.details().begin(), e.details().end());
    }
    if (jobs == 0) problems.emplace_back("jobs: must be at least 1");
    if (!valid_reduction(policies.reduction)) {
        problems.push_back(fmt::format("policies.reduction: unknown reduction '{}'", policies.reduction));
    }
    if (template_version.empty()) problems.emplace_back("template.version: must not be empty");
    if (!problems.empty()) throw DiagnosticError(ErrorKind::invalid_argument, "invalid config", std::move(problems));
}

ScoringConfig RunConfig::scoring() const {
    ScoringConfig s;
    s.rounds = rounds;
    s.min_rounds = min_rounds;
    s.tolerance = tolerance;
    s.regenerate_cot = policies.regenerate_cot;
    s.prompt.include_topic = policies.include_topic;
    return s;
}

PromptTemplate RunConfig::prompt_template() const {
    if (template_dir) return PromptTemplate::load(*template_dir, template_version);
    if (template_version == PromptTemplate::builtin().version()) return PromptTemplate::builtin();
    fail(ErrorKind::not_found,
         fmt::format("template '{}' is not built in; set template.dir in the config", template_version));
}

const JudgeConfig* RunConfig::find_judge(const std::string& id) const {
    for (const auto& j : judges) {
        if (j.judge_id == id) return &j;
    }
    return nullptr;
}

std::vector<JudgeConfig> builtin_mock_judges() {
    return {synthetic_judge("mock-a", 0.2), synthetic_judge("mock-b", 0.4), synthetic_judge("mock-c", 0.6)};
}

JudgeConfig synthetic_judge(const std::string& id, double judge_noise) {
    JudgeConfig c;
    c.judge_id = id;
    c.provider = "mock";
    c.backoff_base = std::chrono::milliseconds(0);
    c.scenario = {{"kind", "synthetic"}, {"judge_noise", judge_noise}};
    return c;
}

std::vector<JudgeConfig> resolve_judges(const std::vector<std::string>& ids, const RunConfig& config) {
    std::vector<JudgeConfig> out;
    std::vector<std::string> problems;
    auto push = [&](JudgeConfig c) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const auto& o) { return o.judge_id == c.judge_id; });
        if (!dup) out.push_back(std::move(c));
    };
    const auto& requested = ids.empty() ? std::vector<std::string>{} : ids;
    if (requested.empty()) {
        for (const auto& c : config.judges) push(c);
    }
    for (const auto& id : requested) {
        if (const auto* c = config.find_judge(id)) {
            push(*c);
        } else if (id == "mock") {
            for (auto& c : builtin_mock_judges()) push(std::move(c));
        } else if (id.rfind("mock", 0) == 0) {
            push(synthetic_judge(id));
        } else {
            problems.push_back(fmt::format("judge '{}' is not defined in the config", id));
        }
    }
    if (out.empty() && problems.empty()) problems.emplace_back("no judges selected");
    if (!problems.empty()) throw DiagnosticError(ErrorKind::invalid_argument, "cannot resolve judges", problems);
    validate_judge_configs(out);
    return out;
}

// --- manifests -------------------------------------------------------------

json RunManifest::to_json() const {
    return {{"command", command},
            {"argv", argv},
            {"config_sha256", config_sha256},
            {"template_version", template_version},
            {"judges", judges},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"started_at", started_at},
            {"finished_at", finished_at},
            {"status", status},
            {"details", details}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.config_sha256 = j.at("config_sha256").get<std::string>();
        m.template_version = j.at("template_version").get<std::string>();
        m.judges = j.at("judges").get<std::vector<std::string>>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.started_at = j.at("started_at").get<std::string>();
        m.finished_at = j.at("finished_at").get<std::string>();
        m.status = j.at("status").get<std::string>();
        m.details = j.value("details", json::object());
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, fmt::format("invalid manifest: {}", e.what()));
    }
    if (m.command.empty()) fail(ErrorKind::parse, "invalid manifest: empty command");
    return m;
}

fs::path manifest_path_for(const fs::path& output) {
    if (fs::is_directory(output)) return output / "manifest.json";
    auto p = output;
    p += ".manifest.json";
    return p;
}

fs::path RunManifest::write_next_to(const fs::path& output) const {
    const auto path = manifest_path_for(output);
    write_file(path, to_json().dump(2) + "\n");
    return path;
}

std::string manifest_timestamp() {
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
        try {
            const auto secs = std::stoll(epoch);
            return format_timestamp(Clock::time_point(std::chrono::seconds(secs)));
        } catch (const std::exception&) {
            // fall through to wall clock
        }
    }
    return format_timestamp(SystemClock().now());
}

// --- corpus import ---------------------------------------------------------

CorpusImportResult run_corpus_import(const fs::path& in, CorpusFormat format, const fs::path& out,
                                     bool anonymize_text, const std::vector<RedactionRule>& rules) {
    CorpusImportResult result;
    auto corpus = load_corpus(in, format, &result.report);
    if (anonymize_text) {
        const Redactor redactor(rules);
        for (auto& d : corpus) d = anonymize(d, redactor);
    }
    write_corpus(out, corpus);
    result.dialogues = corpus.size();
    return result;
}

// --- evaluate --------------------------------------------------------------

EvaluateResult run_evaluate(const std::vector<Dialogue>& corpus, const PromptTemplate& t,
                            const EvaluateOptions& options, const fs::path& out_dir) {
    options.scoring.validate();
    validate_judge_configs(options.judges);
    if (options.judges.empty()) fail(ErrorKind::invalid_argument, "no judges to evaluate with");
    if (corpus.empty()) fail(ErrorKind::invalid_argument, "corpus is empty");
    fs::create_directories(out_dir);

    CotCache cache = options.cot_cache ? CotCache(*options.cot_cache) : CotCache();
    const std::size_t n = corpus.size();
    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, n));
    const std::size_t total = n * options.judges.size();
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;

    EvaluateResult out;
    out.dialogues = n;
    for (const auto& cfg : options.judges) {
        const bool mock = cfg.provider == "mock";
        auto backend = make_backend(cfg, options.seed);
        std::shared_ptr<Clock> shared_clock = mock ? std::shared_ptr<Clock>(std::make_shared<ManualClock>())
                                                   : std::shared_ptr<Clock>(std::make_shared<SystemClock>());
        auto cot_client = std::make_shared<JudgeClient>(cfg, backend, shared_clock);
        for (Aspect a : kAllAspects) {
            get_or_generate_cot(cache, *cot_client, t, a, options.scoring.regenerate_cot);
        }
        ScoringConfig per_dialogue = options.scoring;
        per_dialogue.regenerate_cot = false;

        std::vector<std::optional<EvaluationResult>> results(n);
        std::vector<std::vector<CallRecord>> logs(n);
        std::vector<std::exception_ptr> errors(n);
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    if (mock) {
                        JudgeClient client(cfg, backend, std::make_shared<ManualClock>());
                        results[i] = evaluate_dialogue(client, t, cache, corpus[i], per_dialogue);
                        logs[i] = client.call_log();
                    } else {
                        results[i] = evaluate_dialogue(*cot_client, t, cache, corpus[i], per_dialogue);
                    }
                } catch (...) {
                    errors[i] = std::current_exception();
                    next = n;
                }
                const auto d = ++done;
                if (options.progress) {
                    std::lock_guard lock(progress_mutex);
                    options.progress(d, total);
                }
            }
        };
        if (jobs == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t k = 0; k < jobs; ++k) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }

        std::string body;
        for (auto& r : results) {
            out.missing += r->missing.size();
            body += dump_compact(r->to_json());
            body += '\n';
        }
        const auto file = out_dir / (cfg.judge_id + ".jsonl");
        write_file(file, body);
        std::string calls;
        auto append_log = [&](const std::vector<CallRecord>& log) {
            for (const auto& c : log) {
                calls += dump_compact(c.to_json());
                calls += '\n';
            }
        };
        append_log(cot_client->call_log());
        for (const auto& log : logs) append_log(log);
        write_file(out_dir / (cfg.judge_id + ".calls.jsonl"), calls);
        out.files[cfg.judge_id] = file;
    }
    return out;
}

// --- ensemble --------------------------------------------------------------

EnsembleWeights run_train_weights(const std::vector<std::string>& judges, const fs::path& scores_dir,
                                  const fs::path& human, const TrainOptions& options, const fs::path& out) {
    const auto table = load_judge_scores(scores_dir, judges);
    const auto humans = HumanScores::load(human);
    TrainOptions opts = options;
    if (opts.trained_on.empty()) opts.trained_on = human.filename().string();
    if (opts.template_version.empty()) {
        for (const auto& [_, per] : table) {
            if (!per.empty()) {
                opts.template_version = per.begin()->second.template_version;
                break;
            }
        }
    }
    auto w = train_weights(judges, table, humans, opts);
    write_file(out, w.to_json().dump(2) + "\n");
    return w;
}

std::vector<FeelResult> run_feel_score(const EnsembleWeights& weights, const fs::path& scores_dir,
                                       bool skip_missing, const fs::path& out) {
    weights.validate();
    const auto table = load_judge_scores(scores_dir, weights.judges);
    const auto order = load_evaluations(scores_dir / (weights.judges.front() + ".jsonl"));
    std::vector<FeelResult> results;
    std::vector<std::string> problems;
    for (const auto& first : order) {
        std::map<std::string, EvaluationResult> per_judge;
        for (const auto& j : weights.judges) {
            const auto& per = table.at(j);
            auto it = per.find(first.dialogue_id);
            if (it == per.end()) {
                problems.push_back(fmt::format("judge '{}' has no record for dialogue '{}'", j, first.dialogue_id));
                break;
            }
            per_judge.emplace(j, it->second);
        }
        if (per_judge.size() != weights.judges.size()) continue;
        results.push_back(feel_score(weights, per_judge, skip_missing));
    }
    if (!problems.empty()) {
        throw DiagnosticError(ErrorKind::missing_score, "judge score files do not cover the same dialogues",
                              std::move(problems));
    }
    std::string body;
    for (const auto& r : results) {
        body += dump_compact(r.to_json());
        body += '\n';
    }
    write_file(out, body);
    return results;
}

// --- rank ------------------------------------------------------------------

double reduce_aspects(const std::map<Aspect, double>& values, const std::string& reduction) {
    if (reduction == "mean") {
        double sum = 0.0;
        for (Aspect a : kAllAspects) {
            auto it = values.find(a);
            if (it == values.end()) {
                fail(ErrorKind::missing_score,
                     fmt::format("mean reduction needs all six aspects; {} is missing", aspect_name(a)));
            }
            sum += it->second;
        }
        return sum / static_cast<double>(kAspectCount);
    }
    const Aspect a = parse_aspect(reduction);
    auto it = values.find(a);
    if (it == values.end()) fail(ErrorKind::missing_score, fmt::format("{} score is missing", aspect_name(a)));
    return it->second;
}

namespace {

struct ModelMap {
    std::map<std::string, std::pair<std::string, std::string>> by_dialogue;  // -> (model, topic)
};

ModelMap load_model_map(const fs::path& path) {
    ModelMap m;
    const auto text = read_file(path);
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        auto cols = split(line, ',');
        for (auto& c : cols) c = std::string(trim(c));
        if (cols[0] == "dialogue_id") continue;
        if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty()) {
            fail(ErrorKind::parse, fmt::format("{}:{}: expected dialogue_id,model[,topic]", path.string(), line_no));
        }
        if (!m.by_dialogue.emplace(cols[0], std::pair{cols[1], cols.size() == 3 ? cols[2] : ""}).second) {
            fail(ErrorKind::parse,
                 fmt::format("{}:{}: dialogue '{}' listed twice", path.string(), line_no, cols[0]));
        }
    }
    if (m.by_dialogue.empty()) fail(ErrorKind::parse, fmt::format("{}: no rows", path.string()));
    return m;
}

/// dialogue -> aspect -> value, in file order.
std::vector<std::pair<std::string, std::map<Aspect, double>>> load_predictions(const fs::path& path) {
    std::vector<std::pair<std::string, std::map<Aspect, double>>> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](std::size_t line, const json& j) {
        std::pair<std::string, std::map<Aspect, double>> row;
        try {
            if (j.contains("aspects")) {
                const auto r = FeelResult::from_json(j);
                row.first = r.dialogue_id;
                for (const auto& [a, fa] : r.aspects) row.second[a] = fa.value;
            } else {
                const auto r = EvaluationResult::from_json(j);
                row.first = r.dialogue_id;
                for (const auto& [a, s] : r.scores) row.second[a] = s.value.value();
            }
        } catch (const std::exception& e) {
            fail(ErrorKind::parse, fmt::format("{}:{}: {}", path.string(), line, e.what()));
        }
        if (!seen.insert(row.first).second) {
            fail(ErrorKind::parse, fmt::format("{}:{}: duplicate dialogue '{}'", path.string(), line, row.first));
        }
        out.push_back(std::move(row));
    });
    if (out.empty()) fail(ErrorKind::parse, fmt::format("{}: no predictions", path.string()));
    return out;
}

bool has_extension(const fs::path& p, std::string_view ext) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ext;
}

json ranking_json(const RankedList& r) {
    json arr = json::array();
    for (const auto& [label, rank] : r.items) arr.push_back({{"item", label}, {"rank", rank}});
    return arr;
}

/// Means of values grouped by key, keys in sorted order.
std::pair<std::vector<std::string>, std::vector<double>> grouped_means(
    const std::map<std::string, std::vector<double>>& groups) {
    std::pair<std::vector<std::string>, std::vector<double>> out;
    for (const auto& [k, vs] : groups) {
        double s = 0.0;
        for (double v : vs) s += v;
        out.first.push_back(k);
        out.second.push_back(s / static_cast<double>(vs.size()));
    }
    return out;
}

}  // namespace

json run_rank(const fs::path& predictions, const fs::path& human, const RankOptions& options,
              const std::optional<fs::path>& report) {
    if (!valid_reduction(options.reduction)) {
        fail(ErrorKind::invalid_argument, fmt::format("unknown reduction '{}'", options.reduction));
    }
    const auto preds = load_predictions(predictions);
    std::optional<ModelMap> models;
    if (options.models) models = load_model_map(*options.models);

    // group -> item -> predicted values
    std::map<std::string, std::map<std::string, std::vector<double>>> predicted;
    for (const auto& [dialogue, values] : preds) {
        const double v = reduce_aspects(values, options.reduction);
        if (models) {
            auto it = models->by_dialogue.find(dialogue);
            if (it == models->by_dialogue.end()) {
                fail(ErrorKind::invalid_argument,
                     fmt::format("dialogue '{}' has no model in {}", dialogue, options.models->string()));
            }
            predicted[it->second.second][it->second.first].push_back(v);
        } else {
            predicted[""][dialogue].push_back(v);
        }
    }

    std::vector<std::pair<std::string, RankedList>> references;
    if (has_extension(human, ".csv")) {
        if (!models) fail(ErrorKind::invalid_argument, "pairwise tallies rank models; pass a models map");
        for (const auto& [topic, tallies] : load_tallies_csv(human)) {
            references.emplace_back(topic, ranking_from_pairwise(tallies));
        }
    } else {
        const auto hs = HumanScores::load(human);
        std::map<std::string, std::map<std::string, std::vector<double>>> hgroups;
        for (const auto& [group, items] : predicted) {
            for (const auto& [item, _] : items) {
                if (!models) {
                    std::map<Aspect, double> values;
                    for (Aspect a : kAllAspects) {
                        if (auto v = hs.find(item, a)) values[a] = *v;
                    }
                    if (values.empty()) fail(ErrorKind::missing_score, fmt::format("no human score for '{}'", item));
                    hgroups[group][item].push_back(reduce_aspects(values, options.reduction));
                }
            }
        }
        if (models) {
            for (const auto& [dialogue, mt] : models->by_dialogue) {
                std::map<Aspect, double> values;
                for (Aspect a : kAllAspects) {
                    if (auto v = hs.find(dialogue, a)) values[a] = *v;
                }
                if (values.empty()) continue;
                hgroups[mt.second][mt.first].push_back(reduce_aspects(values, options.reduction));
            }
        }
        for (const auto& [group, items] : hgroups) {
            const auto [labels, means] = grouped_means(items);
            references.emplace_back(group, ranking_from_scores(labels, means));
        }
    }
    if (references.empty()) fail(ErrorKind::invalid_argument, "human data contains no rankings");

    json groups = json::object();
    std::vector<AgreementReport> reports;
    for (const auto& [group, ref] : references) {
        std::map<std::string, std::vector<double>> items;
        if (group.empty()) {
            for (const auto& [_, per] : predicted) {
                for (const auto& [item, vs] : per) items[item].insert(items[item].end(), vs.begin(), vs.end());
            }
        } else {
            auto it = predicted.find(group);
            if (it == predicted.end()) {
                fail(ErrorKind::invalid_argument, fmt::format("no predictions for group '{}'", group));
            }
            items = it->second;
        }
        std::set<std::string> ref_labels;
        for (const auto& [label, _] : ref.items) ref_labels.insert(label);
        std::vector<std::string> missing;
        for (const auto& label : ref_labels) {
            if (!items.count(label)) missing.push_back(label);
        }
        if (!missing.empty()) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("no predictions for {} ranked item(s) in group '{}', e.g. '{}'", missing.size(),
                             group, missing.front()));
        }
        std::erase_if(items, [&](const auto& kv) { return !ref_labels.count(kv.first); });
        const auto [labels, means] = grouped_means(items);
        const auto pred_rank = ranking_from_scores(labels, means);
        const auto agreement = compare_rankings(pred_rank, ref, options.rmse_form);
        reports.push_back(agreement);
        groups[group.empty() ? "all" : group] = {{"agreement", agreement.to_json()},
                                                 {"predicted", ranking_json(pred_rank)},
                                                 {"reference", ranking_json(ref)}};
    }
    const auto avg = aggregate_agreement(reports);
    json out = {{"reduction", options.reduction},
                {"rmse_form", rmse_form_name(options.rmse_form)},
                {"groups", groups},
                {"average", avg.to_json()}};
    if (report) write_file(*report, out.dump(2) + "\n");
    return out;
}

// --- baselines and ablation ------------------------------------------------

json run_baselines(const fs::path& candidates, const fs::path& references, const std::vector<Metric>& metrics,
                   const std::optional<fs::path>& out) {
    if (metrics.empty()) fail(ErrorKind::invalid_argument, "no metrics selected");
    const auto cands = load_candidates(candidates);
    const auto refs = load_references(references);
    const auto scores = score_corpus(cands, refs, metrics);
    json j = scores.to_json();
    if (out) write_file(*out, j.dump(2) + "\n");
    return j;
}

AblationReport run_ablate(const std::vector<std::string>& judges, const std::string& subsets,
                          const fs::path& scores_dir, const fs::path& human, const std::optional<fs::path>& heldout,
                          const TrainOptions& options, RmseForm form, const std::optional<fs::path>& out) {
    const auto expanded = expand_subsets(subsets, judges);
    const auto table = load_judge_scores(scores_dir, judges);
    const auto train = HumanScores::load(human);
    const auto held = heldout ? HumanScores::load(*heldout) : train;
    TrainOptions opts = options;
    if (opts.trained_on.empty()) opts.trained_on = human.filename().string();
    auto report = ablate(expanded, table, train, held, opts, form);
    if (out) write_file(*out, report.to_json().dump(2) + "\n");
    return report;
}

}  // namespace feel
