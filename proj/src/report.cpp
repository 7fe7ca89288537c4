#include "mpct/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace mpct {

namespace {

std::string fmt12(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    out.flush();
    if (!out) throw IoError("failed while writing " + path.string());
}

int metric_rank(const std::string& name) {
    const auto& known = known_metrics();
    const auto it = std::find(known.begin(), known.end(), name);
    return it == known.end() ? static_cast<int>(known.size()) : static_cast<int>(it - known.begin());
}

std::vector<std::string> resolve_filter(const std::vector<std::string>& filter) {
    if (filter.empty()) return known_metrics();
    for (const auto& name : filter) {
        const auto& known = known_metrics();
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            std::string all;
            for (const auto& k : known) all += (all.empty() ? "" : ", ") + k;
            throw ConfigError("unknown metric \"" + name + "\" (known: " + all + ")");
        }
    }
    return filter;
}

// The four per-pair values in canonical order; psnr_db may be absent.
std::vector<std::pair<std::string, double>> pair_values(const PairMetrics& pm) {
    std::vector<std::pair<std::string, double>> out;
    out.emplace_back("cls_error", pm.cls_error);
    if (pm.psnr_db.has_value()) out.emplace_back("psnr_db", *pm.psnr_db);
    out.emplace_back("frechet", pm.frechet);
    out.emplace_back("consistency_gap", pm.consistency);
    return out;
}

} // namespace

RunPaths RunPaths::for_run(const std::string& out, const std::string& name) {
    return RunPaths{fs::path(out) / name};
}

RunLock::RunLock(const fs::path& file) : file_(file) {
    // "wx" creates the file only when it does not yet exist (atomic claim).
    std::FILE* f = std::fopen(file.string().c_str(), "wx");
    if (f == nullptr) {
        throw IoError("run directory is locked by " + file.string() +
                      " - another run owns it; if that run is gone, delete the lock file");
    }
    std::fputs("lock\n", f);
    std::fclose(f);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(file_, ec); // best effort; a leftover lock is documented behavior
}

const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> kMetrics = {"cls_error", "psnr_db", "frechet",
                                                      "consistency_gap"};
    return kMetrics;
}

std::string pair_label(int source, int target) {
    return std::to_string(source) + "->" + std::to_string(target);
}

void write_metrics_csv(const fs::path& path, const MetricsReport& report,
                       const std::vector<std::string>& metric_filter) {
    const std::vector<std::string> metrics = resolve_filter(metric_filter);
    std::ostringstream out;
    out << "pair,metric,value\n";
    for (const auto& pm : report.pairs) {
        const std::string label = pair_label(pm.source, pm.target);
        for (const auto& [name, value] : pair_values(pm)) {
            if (std::find(metrics.begin(), metrics.end(), name) == metrics.end()) continue;
            out << label << "," << name << "," << fmt12(value) << "\n";
        }
    }
    write_text_file(path, out.str());
}

void write_curves_csv(const fs::path& path, const RunReport& report) {
    std::ostringstream out;
    out << "step,metric,value\n";
    for (const auto& [step, bundle] : report.curves) {
        out << step << ",loss.dual," << fmt12(bundle.dual) << "\n";
        out << step << ",loss.consistency," << fmt12(bundle.consistency) << "\n";
        out << step << ",loss.gan," << fmt12(bundle.gan) << "\n";
        out << step << ",loss.total," << fmt12(bundle.total) << "\n";
        out << step << ",loss.total_G," << fmt12(bundle.total_G) << "\n";
        out << step << ",loss.total_D," << fmt12(bundle.total_D) << "\n";
        if (bundle.has_cls) {
            out << step << ",loss.cls_real," << fmt12(bundle.cls_real) << "\n";
            out << step << ",loss.cls_fake," << fmt12(bundle.cls_fake) << "\n";
        }
    }
    for (const auto& ev : report.evals) {
        for (const auto& pm : ev.pairs) {
            const std::string label = pair_label(pm.source, pm.target);
            for (const auto& [name, value] : pair_values(pm)) {
                out << ev.step << "," << name << "." << label << "," << fmt12(value) << "\n";
            }
        }
    }
    write_text_file(path, out.str());
}

std::map<std::pair<std::string, std::string>, double> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read metrics file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "pair,metric,value") {
        throw IoError(path.string() + " is not a metrics CSV (expected header pair,metric,value)");
    }
    std::map<std::pair<std::string, std::string>, double> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw IoError(path.string() + ": malformed row at line " + std::to_string(line_no));
        }
        const std::string pair = line.substr(0, c1);
        const std::string metric = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string value_str = line.substr(c2 + 1);
        char* end = nullptr;
        const double value = std::strtod(value_str.c_str(), &end);
        if (value_str.empty() || end != value_str.c_str() + value_str.size()) {
            throw IoError(path.string() + ": bad value \"" + value_str + "\" at line " +
                          std::to_string(line_no));
        }
        if (!out.emplace(std::make_pair(pair, metric), value).second) {
            throw IoError(path.string() + ": duplicate row for " + pair + "/" + metric);
        }
    }
    return out;
}

std::string format_metrics_table(const MetricsReport& report) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s %12s %12s %12s %16s\n", "pair", "cls_error",
                  "psnr_db", "frechet", "consistency_gap");
    out << buf;
    for (const auto& pm : report.pairs) {
        const std::string psnr = pm.psnr_db.has_value() ? fmt12(*pm.psnr_db) : "-";
        std::snprintf(buf, sizeof(buf), "%-8s %12.4g %12s %12.4g %16.4g\n",
                      pair_label(pm.source, pm.target).c_str(), pm.cls_error, psnr.c_str(),
                      pm.frechet, pm.consistency);
        out << buf;
    }
    return out.str();
}

void write_report_txt(const fs::path& path, const ExperimentConfig& cfg,
                      const RunReport& report, const RunTimings& timings, int threads) {
    const fs::path root = path.parent_path();
    for (const fs::path& p :
         {root / "config.snapshot", root / "metrics.csv", root / "curves.csv"}) {
        if (!fs::exists(p)) {
            throw IoError("report references a missing artifact: " + p.string());
        }
    }
    for (const auto& ckpt : report.checkpoints) {
        if (!fs::exists(ckpt)) {
            throw IoError("report references a missing checkpoint: " + ckpt);
        }
    }

    std::ostringstream out;
    out << "run: " << cfg.run.name << "\n";
    out << "seed: " << cfg.run.seed << "\n";
    out << "steps: " << report.total_steps << " (" << report.steps_per_epoch
        << " per epoch, " << cfg.training.epochs << " epochs)\n";
    out << "threads: " << threads << "\n";
    if (report.evals.empty()) {
        out << "evaluation: disabled (eval_every = 0)\n";
    } else {
        out << "classifier holdout accuracy: " << fmt12(report.classifier_accuracy) << "\n";
        out << "evaluations: " << report.evals.size() << " (steps";
        for (const auto& ev : report.evals) out << " " << ev.step;
        out << ")\n";
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "timing: data %.2fs, train %.2fs, total %.2fs\n", timings.data_seconds,
                  timings.train_seconds, timings.total_seconds);
    out << buf;
    if (!report.evals.empty()) {
        out << "\nfinal metrics (step " << report.evals.back().step << "):\n";
        out << format_metrics_table(report.evals.back());
    }
    out << "\ncheckpoints:\n";
    for (const auto& ckpt : report.checkpoints) out << "  " << ckpt << "\n";
    out << "\nartifacts: config.snapshot, metrics.csv, curves.csv\n";
    write_text_file(path, out.str());
}

CompareResult compare_metrics(
    const std::map<std::pair<std::string, std::string>, double>& a,
    const std::map<std::pair<std::string, std::string>, double>& b) {
    CompareResult result;
    for (const auto& [key, value_a] : a) {
        const auto it = b.find(key);
        if (it == b.end()) {
            result.warnings.push_back("metric " + key.second + " for pair " + key.first +
                                      " only in the first report");
            continue;
        }
        CompareRow row;
        row.pair = key.first;
        row.metric = key.second;
        row.a = value_a;
        row.b = it->second;
        // Positive improvement always means the second report is better.
        row.improvement = key.second == "psnr_db" ? row.b - row.a : row.a - row.b;
        result.rows.push_back(std::move(row));
    }
    for (const auto& [key, value_b] : b) {
        (void)value_b;
        if (a.find(key) == a.end()) {
            result.warnings.push_back("metric " + key.second + " for pair " + key.first +
                                      " only in the second report");
        }
    }
    if (result.rows.empty()) {
        throw ConfigError("the two reports share no (pair, metric) rows to compare");
    }
    std::sort(result.rows.begin(), result.rows.end(), [](const CompareRow& x, const CompareRow& y) {
        if (x.pair != y.pair) return x.pair < y.pair;
        const int rx = metric_rank(x.metric), ry = metric_rank(y.metric);
        if (rx != ry) return rx < ry;
        return x.metric < y.metric;
    });
    return result;
}

std::string format_compare_table(const CompareResult& result) {
    std::ostringstream out;
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%-8s %-16s %14s %14s %14s\n", "pair", "metric", "first",
                  "second", "improvement");
    out << buf;
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof(buf), "%-8s %-16s %14.6g %14.6g %14.6g\n", row.pair.c_str(),
                      row.metric.c_str(), row.a, row.b, row.improvement);
        out << buf;
    }
    out << "(positive improvement = second report better)\n";
    return out.str();
}

void write_compare_csv(const fs::path& path, const CompareResult& result) {
    std::ostringstream out;
    out << "pair,metric,a,b,improvement\n";
    for (const auto& row : result.rows) {
        out << row.pair << "," << row.metric << "," << fmt12(row.a) << "," << fmt12(row.b) << ","
            << fmt12(row.improvement) << "\n";
    }
    write_text_file(path, out.str());
}

} // namespace mpct
