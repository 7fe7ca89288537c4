#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mpct/cli.hpp"
#include "mpct/report.hpp"

using namespace mpct;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    CliResult r;
    r.code = cli_main(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

std::string replaced(std::string text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
    return text;
}

// Three permuted-channel domains at 8x8: small enough that a full run takes
// seconds, separable enough that the eval classifier clears its quality gate.
std::string base_config_text(const fs::path& out_dir) {
    std::ostringstream cfg;
    cfg << "[run]\n"
        << "name = base\n"
        << "out = " << out_dir.string() << "\n"
        << "seed = 97\n"
        << "\n"
        << "[training]\n"
        << "lr0 = 0.001\n"
        << "epochs = 2\n"
        << "batch_size = 4\n"
        << "eval_every = 6\n"
        << "max_eval_images = 8\n"
        << "\n"
        << "[model]\n"
        << "gen_base_width = 4\n"
        << "gen_downsample = 1\n"
        << "gen_res_blocks = 1\n"
        << "disc_width = 8\n"
        << "disc_layers = 3\n"
        << "\n"
        << "[data]\n"
        << "source = synthetic\n"
        << "base_count = 32\n"
        << "image_size = 8\n"
        << "channels = 3\n"
        << "domain1.transform = identity\n"
        << "domain2.transform = channel_permutation\n"
        << "domain2.permutation = 1,2,0\n"
        << "domain3.transform = channel_permutation\n"
        << "domain3.permutation = 2,0,1\n";
    return cfg.str();
}

// Shared across the whole suite: the config file plus one completed 12-step
// run that later cases rerun, evaluate, and compare against.
struct Workspace {
    fs::path root, config, out;
    RunPaths paths{fs::path()};
    CliResult run_result;
};

const Workspace& ws() {
    static const Workspace w = [] {
        Workspace v;
        v.root = fs::temp_directory_path() / "mpct_cli_suite";
        fs::remove_all(v.root);
        fs::create_directories(v.root);
        v.out = v.root / "runs";
        v.config = v.root / "exp.ini";
        std::ofstream(v.config) << base_config_text(v.out);
        v.paths = RunPaths::for_run(v.out.string(), "base");
        v.run_result = cli({"run", "--config", v.config.string()});
        return v;
    }();
    return w;
}

} // namespace

TEST_CASE("a training run produces the complete artifact tree") {
    const Workspace& w = ws();
    CHECK(w.run_result.err == "");
    REQUIRE(w.run_result.code == 0);
    CHECK(w.run_result.out.find("run base: 12 steps") != std::string::npos);
    CHECK(w.run_result.out.find("classifier holdout accuracy") != std::string::npos);
    CHECK(w.run_result.out.find("artifacts under") != std::string::npos);

    CHECK(fs::exists(w.paths.config_snapshot()));
    CHECK(fs::exists(w.paths.metrics_csv()));
    CHECK(fs::exists(w.paths.curves_csv()));
    CHECK(fs::exists(w.paths.report_txt()));
    for (const char* name : {"step-000000.mpct", "step-000006.mpct", "step-000012.mpct"}) {
        CHECK(fs::exists(w.paths.checkpoints_dir() / name));
    }
    CHECK_FALSE(fs::exists(w.paths.lock_file())); // released at exit

    const std::string report = slurp(w.paths.report_txt());
    CHECK(report.find("run: base") != std::string::npos);
    CHECK(report.find("threads:") != std::string::npos);
    CHECK(report.find("step-000012.mpct") != std::string::npos);
}

TEST_CASE("metrics.csv holds one row per ordered pair and metric") {
    const auto rows = read_metrics_csv(ws().paths.metrics_csv());
    CHECK(rows.size() == 24); // 6 ordered pairs x 4 metrics (synthetic => psnr present)
    for (const char* pair : {"1->2", "2->1", "1->3", "3->1", "2->3", "3->2"}) {
        for (const auto& metric : known_metrics()) {
            CHECK(rows.count({pair, metric}) == 1);
        }
    }
}

TEST_CASE("curves.csv covers every step and evaluation") {
    const std::string text = slurp(ws().paths.curves_csv());
    // 12 steps x 6 loss series + 3 evals x 24 metric rows + header.
    CHECK(count_lines(text) == 1 + 12 * 6 + 3 * 24);
    CHECK(text.find("\n1,loss.dual,") != std::string::npos);
    CHECK(text.find("\n12,loss.total_D,") != std::string::npos);
    CHECK(text.find("\n0,cls_error.1->2,") != std::string::npos);
    CHECK(text.find("\n12,psnr_db.3->2,") != std::string::npos);
    CHECK(text.find("loss.cls_real") == std::string::npos); // pairwise run
}

TEST_CASE("the snapshot is canonical and reruns the experiment bitwise") {
    const Workspace& w = ws();
    const std::string snap = slurp(w.paths.config_snapshot());
    // Canonical: parsing the snapshot and serializing again changes nothing.
    CHECK(serialize_config(parse_experiment_config(ini_parse(snap))) == snap);

    const CliResult r =
        cli({"run", "--config", w.paths.config_snapshot().string(), "--set", "run.name=copy"});
    CHECK(r.err == "");
    REQUIRE(r.code == 0);

    const RunPaths copy = RunPaths::for_run(w.out.string(), "copy");
    CHECK(slurp(copy.metrics_csv()) == slurp(w.paths.metrics_csv()));
    CHECK(slurp(copy.curves_csv()) == slurp(w.paths.curves_csv()));
    // The copy's snapshot differs from the original only in the run name.
    CHECK(replaced(slurp(copy.config_snapshot()), "name = copy", "name = base") == snap);
}

TEST_CASE("--ablate-consistency flips exactly the one knob") {
    const Workspace& w = ws();
    const CliResult r = cli({"run", "--config", w.config.string(), "--set", "run.name=ablate",
                             "--set", "training.epochs=1", "--ablate-consistency"});
    CHECK(r.err == "");
    REQUIRE(r.code == 0);
    const RunPaths ab = RunPaths::for_run(w.out.string(), "ablate");
    const std::string snap = slurp(ab.config_snapshot());
    CHECK(snap.find("consistency_enabled = false\n") != std::string::npos);
    CHECK(snap.find("epochs = 1\n") != std::string::npos);
    // Restoring the three touched lines recovers the base snapshot exactly.
    const std::string restored =
        replaced(replaced(replaced(snap, "name = ablate", "name = base"),
                          "consistency_enabled = false", "consistency_enabled = true"),
                 "epochs = 1", "epochs = 2");
    CHECK(restored == slurp(w.paths.config_snapshot()));
    // The excluded term is still measured and reported.
    CHECK(slurp(ab.curves_csv()).find("loss.consistency,") != std::string::npos);
}

TEST_CASE("--seed overrides the run seed end to end") {
    const Workspace& w = ws();
    const CliResult r = cli({"run", "--config", w.config.string(), "--set", "run.name=seeded",
                             "--set", "training.epochs=0", "--seed", "1234"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("run seeded: 0 steps") != std::string::npos);
    const RunPaths sp = RunPaths::for_run(w.out.string(), "seeded");
    CHECK(slurp(sp.config_snapshot()).find("seed = 1234\n") != std::string::npos);
    CHECK(read_metrics_csv(sp.metrics_csv()).size() == 24); // the step-0 evaluation
}

TEST_CASE("eval reproduces the run's final metrics byte for byte") {
    const Workspace& w = ws();
    const fs::path evald = w.root / "evald";
    const std::string ckpt = (w.paths.checkpoints_dir() / "step-000012.mpct").string();
    const CliResult r = cli({"eval", "--config", w.paths.config_snapshot().string(),
                             "--checkpoint", ckpt, "--out", evald.string()});
    CHECK(r.err == "");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("(step 12)") != std::string::npos);
    CHECK(r.out.find("wrote ") != std::string::npos);
    CHECK(slurp(evald / "metrics.csv") == slurp(w.paths.metrics_csv()));
}

TEST_CASE("eval can restrict the exported metric set") {
    const Workspace& w = ws();
    const fs::path evalf = w.root / "evalf";
    const std::string ckpt = (w.paths.checkpoints_dir() / "step-000012.mpct").string();
    const CliResult r = cli({"eval", "--config", w.paths.config_snapshot().string(),
                             "--checkpoint", ckpt, "--metrics", "psnr_db", "--out",
                             evalf.string()});
    REQUIRE(r.code == 0);
    const auto rows = read_metrics_csv(evalf / "metrics.csv");
    CHECK(rows.size() == 6);
    for (const auto& [key, value] : rows) CHECK(key.second == "psnr_db");

    const CliResult bad = cli({"eval", "--config", w.paths.config_snapshot().string(),
                               "--checkpoint", ckpt, "--metrics", "sharpness"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("sharpness") != std::string::npos);
}

TEST_CASE("eval validates the checkpoint against the configuration") {
    const Workspace& w = ws();
    const std::string cfg = w.paths.config_snapshot().string();
    const std::string ckpt = (w.paths.checkpoints_dir() / "step-000012.mpct").string();

    const CliResult missing =
        cli({"eval", "--config", cfg, "--checkpoint", (w.root / "none.mpct").string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("io error") != std::string::npos);

    const fs::path junk = w.root / "junk.mpct";
    std::ofstream(junk, std::ios::binary) << "not a checkpoint";
    const CliResult bad_magic = cli({"eval", "--config", cfg, "--checkpoint", junk.string()});
    CHECK(bad_magic.code == 2);
    CHECK(bad_magic.err.find("magic") != std::string::npos);

    const CliResult wrong_mode = cli({"eval", "--config", cfg, "--checkpoint", ckpt, "--set",
                                      "training.mode=conditional-stargan"});
    CHECK(wrong_mode.code == 2);
    CHECK(wrong_mode.err.find("mode") != std::string::npos);
}

TEST_CASE("compare of a run against itself is all zeros") {
    const Workspace& w = ws();
    const fs::path cmp_csv = w.root / "cmp.csv";
    // A run directory stands in for its metrics.csv.
    const CliResult r = cli({"compare", w.paths.root.string(), w.paths.root.string(), "--out",
                             cmp_csv.string()});
    CHECK(r.err == "");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("positive improvement = second report better") != std::string::npos);

    const std::string text = slurp(cmp_csv);
    REQUIRE(text.rfind("pair,metric,a,b,improvement\n", 0) == 0);
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line); // header
    int rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        CHECK(line.substr(line.rfind(',') + 1) == "0");
    }
    CHECK(rows == 24);
}

TEST_CASE("compare flags one-sided metrics and rejects disjoint reports") {
    const Workspace& w = ws();
    const auto write_csv = [&](const char* name, const std::string& body) {
        const fs::path p = w.root / name;
        std::ofstream(p, std::ios::binary) << body;
        return p.string();
    };
    const std::string a = write_csv(
        "a.csv", "pair,metric,value\n1->2,frechet,1\n1->2,cls_error,0.5\n");
    const std::string b =
        write_csv("b.csv", "pair,metric,value\n1->2,frechet,0.9\n3->1,frechet,0.7\n");
    const CliResult r = cli({"compare", a, b});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("warning:") != std::string::npos);
    CHECK(r.err.find("cls_error") != std::string::npos);
    CHECK(r.err.find("3->1") != std::string::npos);

    const std::string c = write_csv("c.csv", "pair,metric,value\n2->3,consistency_gap,1\n");
    const CliResult disjoint = cli({"compare", a, c});
    CHECK(disjoint.code == 2);
    CHECK(disjoint.err.find("config error") != std::string::npos);
}

TEST_CASE("invalid configs and arguments exit with status 2") {
    const Workspace& w = ws();
    // Unknown key injected through an override.
    const CliResult unknown =
        cli({"run", "--config", w.config.string(), "--set", "training.frobs=1"});
    CHECK(unknown.code == 2);
    CHECK(unknown.err.find("config error") != std::string::npos);
    CHECK(unknown.err.find("training.frobs") != std::string::npos);

    // Dataset directory that does not exist.
    const fs::path dcfg = w.root / "dirs.ini";
    std::ofstream(dcfg) << "[run]\nname = d\nout = " << (w.root / "runs2").string()
                        << "\n[data]\nsource = dirs\n"
                        << "domain1.dir = " << (w.root / "absent").string() << "\n"
                        << "domain2.dir = " << (w.root / "absent").string() << "\n"
                        << "domain3.dir = " << (w.root / "absent").string() << "\n";
    const CliResult nodir = cli({"run", "--config", dcfg.string()});
    CHECK(nodir.code == 2);
    CHECK(nodir.err.find("io error") != std::string::npos);
    CHECK(nodir.err.find("absent") != std::string::npos);

    // A lock left in the target run directory.
    const RunPaths locked = RunPaths::for_run(w.out.string(), "locked");
    fs::create_directories(locked.root);
    std::ofstream(locked.lock_file()) << "held\n";
    const CliResult blocked =
        cli({"run", "--config", w.config.string(), "--set", "run.name=locked"});
    CHECK(blocked.code == 2);
    CHECK(blocked.err.find(".lock") != std::string::npos);
    fs::remove(locked.lock_file());

    // Argument-level failures.
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"run"}).code == 2); // --config is required
    CHECK(cli({}).code == 2);
    CHECK(cli({"compare", "only-one"}).code == 2);
    const CliResult help = cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("run") != std::string::npos);
    CHECK(help.out.find("eval") != std::string::npos);
    CHECK(help.out.find("compare") != std::string::npos);
}

TEST_CASE("worker counts come from the config or the environment") {
    const Workspace& w = ws();
    ::setenv("MPCT_THREADS", "2", 1);
    const CliResult env_run = cli({"run", "--config", w.config.string(), "--set",
                                   "run.name=envthreads", "--set", "training.epochs=0"});
    REQUIRE(env_run.code == 0);
    const RunPaths ep = RunPaths::for_run(w.out.string(), "envthreads");
    CHECK(slurp(ep.report_txt()).find("threads: 2") != std::string::npos);

    // An explicit run.threads beats the environment.
    const CliResult fix_run =
        cli({"run", "--config", w.config.string(), "--set", "run.name=fixthreads", "--set",
             "training.epochs=0", "--set", "run.threads=3"});
    ::unsetenv("MPCT_THREADS");
    REQUIRE(fix_run.code == 0);
    const RunPaths fp = RunPaths::for_run(w.out.string(), "fixthreads");
    CHECK(slurp(fp.report_txt()).find("threads: 3") != std::string::npos);
}
