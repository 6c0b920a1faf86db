// feel: command-line entry points for the evaluation pipeline.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "feel/annotation.hpp"
#include "feel/pipeline.hpp"
#include "feel/service.hpp"

namespace fs = std::filesystem;
using namespace feel;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return 2;
        case ErrorKind::parse: return 3;
        case ErrorKind::not_found: return 4;
        case ErrorKind::conflict: return 5;
        case ErrorKind::io: return 6;
        case ErrorKind::judge: return 7;
        case ErrorKind::auth:
        case ErrorKind::unauthorized: return 8;
        case ErrorKind::missing_score: return 9;
    }
    return 1;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& part : split(s, ',')) {
        auto t = std::string(trim(part));
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    bool verbose = false;
    std::vector<std::string> argv;
};

/// The config file (if any) with global flag overrides applied.
RunConfig base_config(const Globals& g) {
    RunConfig c = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
    if (g.seed) c.seed = *g.seed;
    if (g.jobs) c.jobs = *g.jobs;
    c.validate();
    return c;
}

RunManifest start_manifest(const std::string& command, const Globals& g, const RunConfig& c) {
    RunManifest m;
    m.command = command;
    m.argv = g.argv;
    m.started_at = manifest_timestamp();
    m.config_sha256 = sha256_hex(dump_compact(c.to_json()));
    m.template_version = c.template_version;
    m.seed = c.seed;
    m.details["config"] = c.to_json();
    return m;
}

void finish_manifest(RunManifest& m, const fs::path& output) {
    m.finished_at = manifest_timestamp();
    const auto path = m.write_next_to(output);
    spdlog::info("manifest written to {}", path.string());
}

}  // namespace

int main(int argc, char** argv) {
    Globals g;
    for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);

    CLI::App app{"feel: ensemble LLM judging for emotional support conversations"};
    app.require_subcommand(1);
    app.add_option("--config", g.config_path, "Run config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Seed for every random choice");
    app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", g.verbose, "Debug logging");
    std::function<void()> action;

    // corpus import
    auto* corpus = app.add_subcommand("corpus", "Corpus tools");
    corpus->require_subcommand(1);
    auto* import = corpus->add_subcommand("import", "Convert a corpus to canonical JSON-Lines");
    std::string import_format = "jsonl", import_in, import_out;
    bool import_anonymize = false;
    import->add_option("--format", import_format, "esconv | augesc | jsonl")
        ->check(CLI::IsMember({"esconv", "augesc", "jsonl"}));
    import->add_option("--in", import_in)->required()->check(CLI::ExistingFile);
    import->add_option("--out", import_out)->required();
    import->add_flag("--anonymize", import_anonymize, "Redact e-mail addresses, URLs and phone numbers");
    import->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            auto m = start_manifest("corpus import", g, cfg);
            const auto r = run_corpus_import(import_in, parse_corpus_format(import_format), import_out, import_anonymize);
            spdlog::info("imported {} dialogues", r.dialogues);
            m.inputs["corpus"] = import_in;
            m.outputs["corpus"] = import_out;
            m.details["import"] = r.report.to_json();
            m.details["anonymize"] = import_anonymize;
            finish_manifest(m, import_out);
        };
    });

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a corpus with every judge");
    std::string eval_judges, eval_corpus, eval_out = "scores", eval_template, eval_template_dir, eval_cot_cache;
    std::optional<std::size_t> eval_rounds, eval_min_rounds;
    bool eval_topic = false, eval_regen = false;
    evaluate->add_option("--judges", eval_judges, "Comma-separated judge ids; 'mock' selects built-in mock judges");
    evaluate->add_option("--corpus", eval_corpus)->required()->check(CLI::ExistingFile);
    evaluate->add_option("--out", eval_out, "Output directory")->capture_default_str();
    evaluate->add_option("--rounds", eval_rounds)->check(CLI::PositiveNumber);
    evaluate->add_option("--min-rounds", eval_min_rounds)->check(CLI::PositiveNumber);
    evaluate->add_option("--template", eval_template, "Template version");
    evaluate->add_option("--template-dir", eval_template_dir)->check(CLI::ExistingDirectory);
    evaluate->add_option("--cot-cache", eval_cot_cache, "CoT cache file (JSON-Lines)");
    evaluate->add_flag("--include-topic", eval_topic);
    evaluate->add_flag("--regenerate-cot", eval_regen);
    evaluate->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            if (eval_rounds) {
                cfg.rounds = *eval_rounds;
                if (!eval_min_rounds) cfg.min_rounds = std::min(cfg.min_rounds, cfg.rounds);
            }
            if (eval_min_rounds) cfg.min_rounds = *eval_min_rounds;
            if (!eval_template.empty()) cfg.template_version = eval_template;
            if (!eval_template_dir.empty()) cfg.template_dir = eval_template_dir;
            if (!eval_cot_cache.empty()) cfg.cot_cache = eval_cot_cache;
            if (eval_topic) cfg.policies.include_topic = true;
            if (eval_regen) cfg.policies.regenerate_cot = true;
            cfg.judges = resolve_judges(split_list(eval_judges), cfg);
            cfg.validate();
            const auto tmpl = cfg.prompt_template();
            const auto dialogues = load_corpus(eval_corpus, CorpusFormat::jsonl);
            auto m = start_manifest("evaluate", g, cfg);
            EvaluateOptions eo;
            eo.judges = cfg.judges;
            eo.scoring = cfg.scoring();
            eo.seed = cfg.seed;
            eo.jobs = cfg.jobs;
            eo.cot_cache = cfg.cot_cache;
            std::size_t last_pct = 0;
            eo.progress = [&](std::size_t done, std::size_t total) {
                const auto pct = done * 100 / total;
                if (pct >= last_pct + 10 || done == total) {
                    last_pct = pct;
                    spdlog::info("evaluated {}/{} (dialogue, judge) pairs", done, total);
                }
            };
            const auto res = run_evaluate(dialogues, tmpl, eo, eval_out);
            m.template_version = tmpl.version();
            m.inputs["corpus"] = eval_corpus;
            for (const auto& [judge, file] : res.files) {
                m.judges.push_back(judge);
                m.outputs[judge] = file.string();
            }
            m.details["template_fingerprint"] = tmpl.fingerprint();
            m.details["missing_scores"] = res.missing;
            if (res.missing > 0) spdlog::warn("{} aspect scores are missing; see the result files", res.missing);
            finish_manifest(m, eval_out);
        };
    });

    // train-weights
    auto* train = app.add_subcommand("train-weights", "Fit per-aspect judge weights against human scores");
    std::string train_judges, train_scores, train_human, train_out;
    bool train_clamp = false;
    train->add_option("--judges", train_judges)->required();
    train->add_option("--scores", train_scores)->required()->check(CLI::ExistingDirectory);
    train->add_option("--human", train_human)->required()->check(CLI::ExistingFile);
    train->add_option("--out", train_out)->required();
    train->add_flag("--clamp-negative", train_clamp);
    train->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            if (train_clamp) cfg.policies.clamp_negative = true;
            auto m = start_manifest("train-weights", g, cfg);
            TrainOptions opts;
            opts.clamp_negative = cfg.policies.clamp_negative;
            const auto judges = split_list(train_judges);
            const auto w = run_train_weights(judges, train_scores, train_human, opts, train_out);
            m.judges = judges;
            m.template_version = w.template_version;
            m.inputs["scores"] = train_scores;
            m.inputs["human"] = train_human;
            m.outputs["weights"] = train_out;
            finish_manifest(m, train_out);
        };
    });

    // feel-score
    auto* score = app.add_subcommand("feel-score", "Combine judge scores with trained weights");
    std::string score_weights, score_scores, score_out;
    bool score_skip = false;
    score->add_option("--weights", score_weights)->required()->check(CLI::ExistingFile);
    score->add_option("--scores", score_scores)->required()->check(CLI::ExistingDirectory);
    score->add_option("--out", score_out)->required();
    score->add_flag("--skip-missing", score_skip, "Renormalize over judges that have the aspect");
    score->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            if (score_skip) cfg.policies.skip_missing = true;
            auto m = start_manifest("feel-score", g, cfg);
            const auto w = EnsembleWeights::load(score_weights);
            const auto results = run_feel_score(w, score_scores, cfg.policies.skip_missing, score_out);
            spdlog::info("scored {} dialogues", results.size());
            m.judges = w.judges;
            m.template_version = w.template_version;
            m.inputs["weights"] = score_weights;
            m.inputs["scores"] = score_scores;
            m.outputs["feel"] = score_out;
            finish_manifest(m, score_out);
        };
    });

    // rank
    auto* rank = app.add_subcommand("rank", "Rank agreement of predictions with human judgements");
    std::string rank_pred, rank_human, rank_report, rank_models, rank_reduction, rank_rmse;
    rank->add_option("--predictions", rank_pred, "FEEL or evaluation JSON-Lines")->required()->check(CLI::ExistingFile);
    rank->add_option("--human", rank_human, "Tallies CSV or human-score JSON-Lines")->required()->check(CLI::ExistingFile);
    rank->add_option("--report", rank_report)->required();
    rank->add_option("--models", rank_models, "CSV dialogue_id,model[,topic]")->check(CLI::ExistingFile);
    rank->add_option("--reduction", rank_reduction, "mean | <aspect>");
    rank->add_option("--rmse", rank_rmse, "standard | literal")->check(CLI::IsMember({"standard", "literal"}));
    rank->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            if (!rank_reduction.empty()) cfg.policies.reduction = rank_reduction;
            if (!rank_rmse.empty()) cfg.policies.rmse_form = parse_rmse_form(rank_rmse);
            cfg.validate();
            auto m = start_manifest("rank", g, cfg);
            RankOptions ro;
            ro.reduction = cfg.policies.reduction;
            ro.rmse_form = cfg.policies.rmse_form;
            if (!rank_models.empty()) ro.models = rank_models;
            const auto report = run_rank(rank_pred, rank_human, ro, rank_report);
            std::cout << report["average"].dump(2) << "\n";
            m.inputs["predictions"] = rank_pred;
            m.inputs["human"] = rank_human;
            if (ro.models) m.inputs["models"] = rank_models;
            m.outputs["report"] = rank_report;
            finish_manifest(m, rank_report);
        };
    });

    // baselines
    auto* baselines = app.add_subcommand("baselines", "Reference-based overlap metrics");
    std::string base_cands, base_refs, base_metrics = "bleu1,bleu2,rouge1,rouge2,rougeL,meteor", base_out;
    baselines->add_option("--candidates", base_cands)->required()->check(CLI::ExistingFile);
    baselines->add_option("--references", base_refs)->required()->check(CLI::ExistingFile);
    baselines->add_option("--metrics", base_metrics)->capture_default_str();
    baselines->add_option("--out", base_out)->required();
    baselines->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            auto m = start_manifest("baselines", g, cfg);
            std::vector<Metric> metrics;
            for (const auto& name : split_list(base_metrics)) metrics.push_back(parse_metric(name));
            run_baselines(base_cands, base_refs, metrics, base_out);
            m.inputs["candidates"] = base_cands;
            m.inputs["references"] = base_refs;
            m.outputs["report"] = base_out;
            finish_manifest(m, base_out);
        };
    });

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Retrain and evaluate judge subsets");
    std::string abl_judges, abl_subsets = "all-pairs", abl_scores, abl_human, abl_heldout, abl_out;
    bool abl_clamp = false;
    ablate_cmd->add_option("--judges", abl_judges)->required();
    ablate_cmd->add_option("--subsets", abl_subsets, "all-pairs | all | A+B;A+C")->capture_default_str();
    ablate_cmd->add_option("--scores", abl_scores)->required()->check(CLI::ExistingDirectory);
    ablate_cmd->add_option("--human", abl_human, "Training human scores")->required()->check(CLI::ExistingFile);
    ablate_cmd->add_option("--heldout", abl_heldout, "Held-out human scores (default: --human)")
        ->check(CLI::ExistingFile);
    ablate_cmd->add_option("--out", abl_out)->required();
    ablate_cmd->add_flag("--clamp-negative", abl_clamp);
    ablate_cmd->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            if (abl_clamp) cfg.policies.clamp_negative = true;
            auto m = start_manifest("ablate", g, cfg);
            TrainOptions opts;
            opts.clamp_negative = cfg.policies.clamp_negative;
            const auto judges = split_list(abl_judges);
            std::optional<fs::path> heldout;
            if (!abl_heldout.empty()) heldout = abl_heldout;
            const auto report = run_ablate(judges, abl_subsets, abl_scores, abl_human, heldout, opts,
                                           cfg.policies.rmse_form, abl_out);
            for (const auto& row : report.rows) {
                if (row.error.empty()) {
                    spdlog::info("{}: spearman {:.4f} kendall {:.4f}", row.label(), row.overall.spearman,
                                 row.overall.kendall);
                } else {
                    spdlog::warn("{}: {}", row.label(), row.error);
                }
            }
            m.judges = judges;
            m.inputs["scores"] = abl_scores;
            m.inputs["human"] = abl_human;
            if (heldout) m.inputs["heldout"] = abl_heldout;
            m.outputs["report"] = abl_out;
            m.details["subsets"] = abl_subsets;
            finish_manifest(m, abl_out);
        };
    });

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::string serve_data, serve_bind, serve_static, serve_corpus;
    std::size_t serve_workers = 2;
    serve->add_option("--data-dir", serve_data, "Default: $FEEL_DATA_DIR or ./feel-data");
    serve->add_option("--bind", serve_bind, "host:port; default: $FEEL_BIND_ADDR or 127.0.0.1:8080");
    serve->add_option("--static", serve_static, "Annotation UI assets served under /ui");
    serve->add_option("--corpus", serve_corpus, "Corpus for GET /dialogues/{id}");
    serve->add_option("--workers", serve_workers)->check(CLI::PositiveNumber)->capture_default_str();
    serve->callback([&] {
        action = [&] {
            auto opts = ServiceOptions::from_env();
            opts.config = base_config(g);
            if (!serve_data.empty()) opts.data_dir = serve_data;
            if (!serve_static.empty()) opts.static_dir = serve_static;
            if (!serve_corpus.empty()) opts.corpus = serve_corpus;
            opts.workers = serve_workers;
            if (serve_bind.empty()) {
                if (const char* b = std::getenv("FEEL_BIND_ADDR")) serve_bind = b;
            }
            const auto [host, port] = parse_bind_addr(serve_bind);
            Service service(std::move(opts));
            if (!service.bind(host, port)) fail(ErrorKind::io, fmt::format("cannot bind {}:{}", host, port));
            spdlog::info("serving on {}:{} (data in {})", host, port, service.options().data_dir.string());
            static Service* running = nullptr;
            running = &service;
            std::signal(SIGINT, [](int) { if (running) running->stop(); });
            std::signal(SIGTERM, [](int) { if (running) running->stop(); });
            service.listen();
            running = nullptr;
        };
    });

    // annotation import / export
    auto* annotation = app.add_subcommand("annotation", "Human annotation data");
    annotation->require_subcommand(1);
    auto* ann_import = annotation->add_subcommand("import", "Build a human score dataset from a score CSV");
    std::string ann_csv, ann_session = "imported", ann_out, ann_data;
    bool ann_open = false;
    ann_import->add_option("--csv", ann_csv, "annotator,dialogue_id,aspect,round,score")->required()->check(CLI::ExistingFile);
    ann_import->add_option("--session", ann_session)->capture_default_str();
    ann_import->add_option("--out", ann_out, "Human score JSON-Lines")->required();
    ann_import->add_option("--data-dir", ann_data, "Also store the session's event log here");
    ann_import->add_flag("--keep-open", ann_open, "Do not close the session");
    ann_import->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            auto m = start_manifest("annotation import", g, cfg);
            const auto rows = load_annotation_csv(ann_csv);
            auto session = import_session(ann_session, rows, !ann_open);
            if (!ann_data.empty()) {
                const auto log = fs::path(ann_data) / "sessions" / (ann_session + ".events.jsonl");
                if (fs::exists(log)) fail(ErrorKind::conflict, fmt::format("session '{}' already exists", ann_session));
                std::string body;
                for (const auto& e : session.events()) body += dump_compact(e) + "\n";
                write_file(log, body);
                m.outputs["events"] = log.string();
            }
            const auto scores = session.state() == SessionState::closed ? session.human_scores() : std::vector<HumanScore>{};
            write_file(ann_out, serialize_human_scores(scores));
            if (!session.flags().empty()) spdlog::info("{} keys were flagged for rescoring", session.flags().size());
            m.inputs["csv"] = ann_csv;
            m.outputs["human"] = ann_out;
            m.details["state"] = std::string(state_name(session.state()));
            finish_manifest(m, ann_out);
        };
    });
    auto* ann_export = annotation->add_subcommand("export", "Export a closed session's consensus scores");
    std::string exp_data, exp_session, exp_out;
    ann_export->add_option("--data-dir", exp_data, "Default: $FEEL_DATA_DIR or ./feel-data");
    ann_export->add_option("--session", exp_session)->required();
    ann_export->add_option("--out", exp_out)->required();
    ann_export->callback([&] {
        action = [&] {
            auto cfg = base_config(g);
            auto m = start_manifest("annotation export", g, cfg);
            auto dir = exp_data.empty() ? ServiceOptions::from_env().data_dir : fs::path(exp_data);
            SessionStore store(dir);
            const auto scores = store.read(exp_session, [](const AnnotationSession& s) { return s.human_scores(); });
            write_file(exp_out, serialize_human_scores(scores));
            m.inputs["session"] = (dir / "sessions" / (exp_session + ".events.jsonl")).string();
            m.outputs["human"] = exp_out;
            finish_manifest(m, exp_out);
        };
    });

    // template save
    auto* tmpl = app.add_subcommand("template", "Prompt templates");
    tmpl->require_subcommand(1);
    auto* tmpl_save = tmpl->add_subcommand("save", "Write the built-in template to a directory");
    std::string tmpl_dir = "templates";
    tmpl_save->add_option("--dir", tmpl_dir)->capture_default_str();
    tmpl_save->callback([&] {
        action = [&] {
            PromptTemplate::builtin().save(tmpl_dir);
            spdlog::info("template {} written under {}", PromptTemplate::builtin().version(), tmpl_dir);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto logger = spdlog::stderr_color_mt("feel");
    spdlog::set_default_logger(logger);
    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (action) action();
        return 0;
    } catch (const Error& e) {
        std::cerr << error_body(e).dump(2) << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << error_body(e).dump(2) << "\n";
        return 1;
    }
}
