#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mpct/config.hpp"
#include "mpct/training.hpp"

namespace mpct {

// Directory layout of one run under <out>/<run-name>/.
struct RunPaths {
    std::filesystem::path root;

    static RunPaths for_run(const std::string& out, const std::string& name);

    std::filesystem::path config_snapshot() const { return root / "config.snapshot"; }
    std::filesystem::path metrics_csv() const { return root / "metrics.csv"; }
    std::filesystem::path curves_csv() const { return root / "curves.csv"; }
    std::filesystem::path checkpoints_dir() const { return root / "checkpoints"; }
    std::filesystem::path report_txt() const { return root / "report.txt"; }
    std::filesystem::path lock_file() const { return root / ".lock"; }
};

// Exclusive ownership of a run directory, held for this object's lifetime via
// an atomically created lock file. A second acquisition fails with a message
// naming the lock; a crash leaves the file behind, and the message explains
// how to clear it.
class RunLock {
  public:
    explicit RunLock(const std::filesystem::path& file);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    std::filesystem::path file_;
};

// The metric columns evaluations produce, in their canonical order.
const std::vector<std::string>& known_metrics(); // cls_error, psnr_db, frechet,
                                                 // consistency_gap

std::string pair_label(int source, int target); // "1->2"

// metrics.csv: header `pair,metric,value`, one row per pair and metric in
// canonical order, values %.12g. Pairs without a ground-truth pairing skip
// their psnr_db row. A nonempty filter restricts the metric set (unknown
// names are ConfigErrors).
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report,
                       const std::vector<std::string>& metric_filter = {});

// curves.csv: header `step,metric,value`. First every per-step loss component
// (loss.dual, loss.consistency, loss.gan, loss.total, loss.total_G,
// loss.total_D, plus loss.cls_real/loss.cls_fake when present), then each
// evaluation's pair-qualified series (e.g. `psnr_db.1->2`) at its step.
void write_curves_csv(const std::filesystem::path& path, const RunReport& report);

// Parsed metrics.csv: (pair label, metric) -> value.
std::map<std::pair<std::string, std::string>, double>
read_metrics_csv(const std::filesystem::path& path);

std::string format_metrics_table(const MetricsReport& report);

struct RunTimings {
    double data_seconds = 0.0;
    double train_seconds = 0.0; // classifier + steps + in-loop evaluations
    double total_seconds = 0.0;
};

// Human-readable run summary. Verifies every artifact it references exists
// before writing (IoError otherwise).
void write_report_txt(const std::filesystem::path& path, const ExperimentConfig& cfg,
                      const RunReport& report, const RunTimings& timings, int threads);

// One joined row of a side-by-side comparison. `improvement` is
// direction-aware: positive always means the second report is better (psnr_db
// counts up, every other metric counts down).
struct CompareRow {
    std::string pair;
    std::string metric;
    double a = 0.0;
    double b = 0.0;
    double improvement = 0.0;
};

struct CompareResult {
    std::vector<CompareRow> rows;      // intersection, canonical order
    std::vector<std::string> warnings; // metrics present on one side only
};

// Joins two parsed metric tables on (pair, metric). Disjoint tables are
// ConfigErrors; one-sided keys become warnings.
CompareResult compare_metrics(
    const std::map<std::pair<std::string, std::string>, double>& a,
    const std::map<std::pair<std::string, std::string>, double>& b);

std::string format_compare_table(const CompareResult& result);

// compare CSV: header `pair,metric,a,b,improvement`.
void write_compare_csv(const std::filesystem::path& path, const CompareResult& result);

} // namespace mpct
