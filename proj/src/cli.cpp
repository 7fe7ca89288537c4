#include "mpct/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <sstream>

#include "CLI11.hpp"
#include "mpct/report.hpp"

namespace fs = std::filesystem;

namespace mpct {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> split_csv_list(const std::string& joined) {
    std::vector<std::string> out;
    std::stringstream ss(joined);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto b = part.find_first_not_of(" \t");
        const auto e = part.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
    }
    return out;
}

// step-%06d.mpct -> the step; anything else -> 0.
int step_from_checkpoint_name(const std::string& path) {
    const std::string name = fs::path(path).filename().string();
    const std::string prefix = "step-", suffix = ".mpct";
    if (name.size() <= prefix.size() + suffix.size()) return 0;
    if (name.rfind(prefix, 0) != 0) return 0;
    if (name.substr(name.size() - suffix.size()) != suffix) return 0;
    const std::string digits =
        name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    if (digits.empty() ||
        !std::all_of(digits.begin(), digits.end(),
                     [](char c) { return c >= '0' && c <= '9'; })) {
        return 0;
    }
    return std::atoi(digits.c_str());
}

struct RunFlags {
    std::string config_path;
    std::vector<std::string> sets;
    bool ablate = false;
    std::string out_override;
    std::string seed_override;
};

std::vector<std::string> assemble_overrides(const RunFlags& flags) {
    std::vector<std::string> overrides = flags.sets;
    // Dedicated flags land after --set so they win.
    if (!flags.out_override.empty()) overrides.push_back("run.out=" + flags.out_override);
    if (!flags.seed_override.empty()) overrides.push_back("run.seed=" + flags.seed_override);
    if (flags.ablate) overrides.push_back("training.consistency_enabled=false");
    return overrides;
}

int cmd_run(const RunFlags& flags, std::ostream& out, std::ostream& err) {
    try {
        const auto t_start = std::chrono::steady_clock::now();
        const ExperimentConfig cfg =
            load_experiment_config(flags.config_path, assemble_overrides(flags));
        const int threads = resolve_thread_count(cfg.run.threads);

        RunTimings timings;
        const auto t_data = std::chrono::steady_clock::now();
        const std::vector<DomainDataset> datasets = build_datasets(cfg);
        timings.data_seconds = seconds_since(t_data);

        const RunPaths paths = RunPaths::for_run(cfg.run.out, cfg.run.name);
        fs::create_directories(paths.checkpoints_dir());
        RunLock lock(paths.lock_file());

        // Snapshot first: even a failed run keeps its exact configuration.
        {
            std::ofstream snap(paths.config_snapshot(), std::ios::binary | std::ios::trunc);
            if (!snap) throw IoError("cannot write " + paths.config_snapshot().string());
            snap << serialize_config(cfg);
        }

        const auto t_train = std::chrono::steady_clock::now();
        const RunReport report =
            train(cfg.training, datasets, paths.checkpoints_dir().string());
        timings.train_seconds = seconds_since(t_train);

        if (report.evals.empty()) {
            write_metrics_csv(paths.metrics_csv(), MetricsReport{});
        } else {
            write_metrics_csv(paths.metrics_csv(), report.evals.back());
        }
        write_curves_csv(paths.curves_csv(), report);
        timings.total_seconds = seconds_since(t_start);
        write_report_txt(paths.report_txt(), cfg, report, timings, threads);

        out << "run " << cfg.run.name << ": " << report.total_steps << " steps\n";
        if (!report.evals.empty()) {
            out << "classifier holdout accuracy: " << report.classifier_accuracy << "\n";
            out << "final metrics (step " << report.evals.back().step << "):\n"
                << format_metrics_table(report.evals.back());
        }
        out << "artifacts under " << paths.root.string() << "\n";
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 1;
    }
}

struct EvalFlags {
    std::string config_path;
    std::string checkpoint;
    std::string metrics_list;
    std::string out_dir;
    std::vector<std::string> sets;
};

int cmd_eval(const EvalFlags& flags, std::ostream& out, std::ostream& err) {
    try {
        RunFlags rf;
        rf.sets = flags.sets;
        rf.config_path = flags.config_path;
        const ExperimentConfig cfg =
            load_experiment_config(flags.config_path, assemble_overrides(rf));
        const std::vector<std::string> filter = split_csv_list(flags.metrics_list);
        for (const auto& name : filter) {
            const auto& known = known_metrics();
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                std::string all;
                for (const auto& k : known) all += (all.empty() ? "" : ", ") + k;
                throw ConfigError("unknown metric \"" + name + "\" for --metrics (known: " +
                                  all + ")");
            }
        }

        const CheckpointData ckpt = checkpoint_read(flags.checkpoint);
        const int nd = cfg.training.bank_domains();
        TranslatorBank bank(cfg.training.gen, cfg.training.mode, nd,
                            Rng::derive(cfg.run.seed, "init.gen").next_u64());
        ParamSet target = bank.params();
        checkpoint_apply(ckpt, target, nd, cfg.training.mode);

        const std::vector<DomainDataset> datasets = build_datasets(cfg);
        const DatasetSplit split = prepare_split(cfg.training, datasets);

        try {
            const EvalClassifier classifier = train_run_classifier(cfg.training, split);
            EvalPlan plan;
            plan.pairs = eval_pairs_for(cfg.training);
            plan.step = step_from_checkpoint_name(flags.checkpoint);
            plan.max_eval_images = cfg.training.max_eval_images;
            const MetricsReport report = evaluate_bank(bank, classifier, split.eval, plan);

            out << "checkpoint: " << flags.checkpoint << " (step " << plan.step << ")\n";
            out << "classifier holdout accuracy: " << classifier.heldout_accuracy() << "\n";
            out << format_metrics_table(report);
            if (!flags.out_dir.empty()) {
                fs::create_directories(flags.out_dir);
                const fs::path csv = fs::path(flags.out_dir) / "metrics.csv";
                write_metrics_csv(csv, report, filter);
                out << "wrote " << csv.string() << "\n";
            }
            return 0;
        } catch (const NumericError& e) {
            err << "runtime error: " << e.what() << "\n";
            return 1;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 1;
    }
}

fs::path resolve_metrics_path(const std::string& given) {
    fs::path p(given);
    if (fs::is_directory(p)) return p / "metrics.csv";
    return p;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out_csv,
                std::ostream& out, std::ostream& err) {
    try {
        const auto ma = read_metrics_csv(resolve_metrics_path(a));
        const auto mb = read_metrics_csv(resolve_metrics_path(b));
        const CompareResult result = compare_metrics(ma, mb);
        for (const auto& w : result.warnings) err << "warning: " << w << "\n";
        out << format_compare_table(result);
        if (!out_csv.empty()) {
            write_compare_csv(out_csv, result);
            out << "wrote " << out_csv << "\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"multi-domain image translation laboratory"};
    app.require_subcommand(1);

    RunFlags run_flags;
    CLI::App* run_cmd = app.add_subcommand("run", "train per an experiment config");
    run_cmd->add_option("--config", run_flags.config_path, "experiment config file")->required();
    run_cmd->add_option("--set", run_flags.sets, "section.key=value override (repeatable)");
    run_cmd->add_flag("--ablate-consistency", run_flags.ablate,
                      "disable the path-agreement loss term only");
    run_cmd->add_option("--out", run_flags.out_override, "override run.out");
    run_cmd->add_option("--seed", run_flags.seed_override, "override run.seed");

    EvalFlags eval_flags;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "score a checkpoint without training");
    eval_cmd->add_option("--config", eval_flags.config_path, "experiment config file")
        ->required();
    eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "generator checkpoint")
        ->required();
    eval_cmd->add_option("--metrics", eval_flags.metrics_list,
                         "comma-separated metric subset for the CSV");
    eval_cmd->add_option("--out", eval_flags.out_dir, "directory for metrics.csv");
    eval_cmd->add_option("--set", eval_flags.sets, "section.key=value override (repeatable)");

    std::string cmp_a, cmp_b, cmp_out;
    CLI::App* cmp_cmd =
        app.add_subcommand("compare", "delta table between two runs' metrics");
    cmp_cmd->add_option("first", cmp_a, "run directory or metrics.csv")->required();
    cmp_cmd->add_option("second", cmp_b, "run directory or metrics.csv")->required();
    cmp_cmd->add_option("--out", cmp_out, "also write the deltas as CSV here");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "argument error: " << e.what() << "\n";
        return 2;
    }

    if (run_cmd->parsed()) return cmd_run(run_flags, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_flags, out, err);
    return cmd_compare(cmp_a, cmp_b, cmp_out, out, err);
}

} // namespace mpct
