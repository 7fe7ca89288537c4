#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mpct/config.hpp"

using namespace mpct;
namespace fs = std::filesystem;

namespace {

// A complete three-domain synthetic experiment exercising every section.
const char* kFullConfig = R"(# demo experiment
[run]
name = demo
out = runs
seed = 11
threads = 2

[training]
alpha = 0.25
beta = 0.15
lr0 = 2e-4
decay = false
epochs = 3
batch_size = 5
mode = conditional-stargan
consistency_enabled = true
saturating_gan = true
eval_every = 50
eval_fraction = 0.2
max_eval_images = 16
n_domains = 3
auxiliary_domain = 0

[model]
gen_base_width = 6
gen_downsample = 1
gen_res_blocks = 2
disc_width = 10
disc_layers = 3

[data]
source = synthetic
base_count = 40
image_size = 16
channels = 3
domain1.transform = identity
domain2.transform = channel_permutation
domain2.permutation = 1,2,0
domain3.transform = uniform_noise
domain3.amplitude = 0.3
)";

ExperimentConfig parse_text(const std::string& text) {
    return parse_experiment_config(ini_parse(text));
}

std::string patched(const std::string& base, const std::string& from, const std::string& to) {
    std::string out = base;
    const auto pos = out.find(from);
    REQUIRE(pos != std::string::npos);
    out.replace(pos, from.size(), to);
    return out;
}

} // namespace

TEST_CASE("ini parsing: sections, comments, trimming, and line numbers") {
    const IniDoc doc = ini_parse("# header comment\n"
                                 "[run]\n"
                                 "  name   =  demo run value  \n"
                                 "; alt comment\n"
                                 "\n"
                                 "[data]\n"
                                 "domain1.transform = identity\n");
    REQUIRE(doc.entries.size() == 2);
    CHECK(doc.entries[0].section == "run");
    CHECK(doc.entries[0].key == "name");
    CHECK(doc.entries[0].value == "demo run value");
    CHECK(doc.entries[0].line == 3);
    CHECK(doc.entries[1].section == "data");
    CHECK(doc.entries[1].key == "domain1.transform");
    CHECK(doc.entries[1].line == 7);
    CHECK(doc.find("run", "name") != nullptr);
    CHECK(doc.find("run", "missing") == nullptr);
}

TEST_CASE("ini parsing rejects malformed input with line numbers") {
    CHECK_THROWS_WITH_AS(ini_parse("name = orphan\n"), doctest::Contains("before any"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(ini_parse("[run\nname = x\n"), doctest::Contains("line 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(ini_parse("[run]\njust words\n"), doctest::Contains("key = value"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(ini_parse("[run]\nname =\n"), doctest::Contains("empty value"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(ini_parse("[run]\nseed = 1\nseed = 2\n"),
                         doctest::Contains("duplicate key 'run.seed'"), ConfigError);
    CHECK_THROWS_WITH_AS(ini_parse("[run]\nseed = 1\nseed = 2\n"), doctest::Contains("line 2"),
                         ConfigError);
    CHECK_THROWS_AS(ini_parse("[run]\nbad!key = 1\n"), ConfigError);
    CHECK_THROWS_AS(ini_parse("[bad section]\n"), ConfigError);
}

TEST_CASE("ini overrides replace existing entries or append new ones") {
    IniDoc doc = ini_parse("[run]\nname = a\n");
    ini_set(doc, "run.name=b");
    REQUIRE(doc.entries.size() == 1);
    CHECK(doc.entries[0].value == "b");
    ini_set(doc, "training.alpha = 0.5");
    REQUIRE(doc.entries.size() == 2);
    CHECK(doc.entries[1].section == "training");
    CHECK(doc.entries[1].key == "alpha");
    CHECK(doc.entries[1].value == "0.5");

    CHECK_THROWS_WITH_AS(ini_set(doc, "noequals"), doctest::Contains("section.key=value"),
                         ConfigError);
    CHECK_THROWS_AS(ini_set(doc, "nodot=1"), ConfigError);
    CHECK_THROWS_AS(ini_set(doc, "run.name="), ConfigError);
}

TEST_CASE("a full config parses into every field") {
    const ExperimentConfig cfg = parse_text(kFullConfig);
    CHECK(cfg.run.name == "demo");
    CHECK(cfg.run.out == "runs");
    CHECK(cfg.run.seed == 11);
    CHECK(cfg.run.threads == 2);

    const TrainingConfig& t = cfg.training;
    CHECK(t.alpha == 0.25);
    CHECK(t.beta == 0.15);
    CHECK(t.lr0 == 2e-4);
    CHECK_FALSE(t.decay);
    CHECK(t.epochs == 3);
    CHECK(t.batch_size == 5);
    CHECK(t.mode == BankMode::Conditional);
    CHECK(t.consistency_enabled);
    CHECK(t.saturating_gan);
    CHECK(t.eval_every == 50);
    CHECK(t.eval_fraction == 0.2);
    CHECK(t.max_eval_images == 16);
    CHECK(t.n_domains == 3);
    CHECK(t.seed == 11); // run.seed feeds training

    CHECK(t.gen.base_width == 6);
    CHECK(t.gen.n_downsample == 1);
    CHECK(t.gen.n_res_blocks == 2);
    CHECK(t.gen.image_channels == 3);
    CHECK(t.disc.width == 10);
    CHECK(t.disc.n_layers == 3);
    CHECK(t.disc.image_size == 16);
    CHECK(t.disc.image_channels == 3);

    CHECK(cfg.data.source == DataConfig::Source::Synthetic);
    CHECK(cfg.data.base_count == 40);
    REQUIRE(cfg.data.domains.size() == 3);
    CHECK(cfg.data.domains[0].transform.kind == SynthTransformSpec::Kind::Identity);
    CHECK(cfg.data.domains[1].transform.kind ==
          SynthTransformSpec::Kind::ChannelPermutation);
    CHECK(cfg.data.domains[1].transform.permutation == std::vector<int>{1, 2, 0});
    CHECK(cfg.data.domains[2].transform.kind == SynthTransformSpec::Kind::UniformNoise);
    CHECK(cfg.data.domains[2].transform.noise_amplitude == 0.3);
    CHECK(cfg.data.domains[0].transform.seed == 11);
}

TEST_CASE("minimal config gets the documented defaults") {
    const ExperimentConfig cfg = parse_text("[run]\n"
                                            "name = tiny\n"
                                            "[data]\n"
                                            "domain1.transform = identity\n"
                                            "domain2.transform = brightness_shift\n"
                                            "domain3.transform = identity\n");
    CHECK(cfg.run.out == "runs");
    CHECK(cfg.run.seed == 1);
    CHECK(cfg.run.threads == 0);
    CHECK(cfg.training.alpha == 0.1);
    CHECK(cfg.training.beta == 0.1);
    CHECK(cfg.training.lr0 == 1e-4);
    CHECK(cfg.training.decay);
    CHECK(cfg.training.epochs == 50);
    CHECK(cfg.training.mode == BankMode::Pairwise);
    CHECK(cfg.training.consistency_enabled);
    CHECK_FALSE(cfg.training.saturating_gan);
    CHECK(cfg.training.eval_every == 100);
    CHECK(cfg.training.n_domains == 3);
    CHECK(cfg.data.base_count == 128);
    CHECK(cfg.data.image_size == 32);
    CHECK(cfg.data.channels == 3);
    CHECK(cfg.data.domains[1].transform.shift == 0.3); // spec default
}

TEST_CASE("unknown keys and sections are rejected by name") {
    CHECK_THROWS_WITH_AS(parse_text("[run]\nname = a\nfrobs = 2\n"),
                         doctest::Contains("'run.frobs'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_text("[training]\nfoo = 1\n"),
                         doctest::Contains("'training.foo'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_text("[extras]\nx = 1\n"), doctest::Contains("'extras'"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_text("[data]\ndomain1.sparkle = 1\n"),
                         doctest::Contains("domain1.sparkle"), ConfigError);
    // Line numbers travel into the message.
    CHECK_THROWS_WITH_AS(parse_text("[training]\nfoo = 1\n"), doctest::Contains("line 2"),
                         ConfigError);
}

TEST_CASE("typed values reject malformed text by field") {
    const std::string base(kFullConfig);
    CHECK_THROWS_WITH_AS(parse_text(patched(base, "alpha = 0.25", "alpha = abc")),
                         doctest::Contains("'training.alpha'"), ConfigError);
    CHECK_THROWS_AS(parse_text(patched(base, "epochs = 3", "epochs = 2.5")), ConfigError);
    CHECK_THROWS_WITH_AS(parse_text(patched(base, "decay = false", "decay = maybe")),
                         doctest::Contains("true or false"), ConfigError);
    CHECK_THROWS_AS(parse_text(patched(base, "seed = 11", "seed = -4")), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "mode = conditional-stargan", "mode = vanilla")),
        doctest::Contains("pairwise-cyclegan"), ConfigError);
    CHECK_THROWS_AS(
        parse_text(patched(base, "domain2.permutation = 1,2,0", "domain2.permutation = 1,x")),
        ConfigError);
}

TEST_CASE("domain coverage and transform parameters are cross-checked") {
    const std::string base(kFullConfig);
    // Missing domain3 entirely.
    CHECK_THROWS_WITH_AS(
        parse_text(patched(patched(base, "domain3.transform = uniform_noise", "# gone"),
                           "domain3.amplitude = 0.3", "# gone2")),
        doctest::Contains("domain3"), ConfigError);
    // A fourth domain when the models span three.
    CHECK_THROWS_WITH_AS(parse_text(base + "domain4.transform = identity\n"),
                         doctest::Contains("domain 4"), ConfigError);
    // Parameter belonging to a different transform kind.
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "domain3.amplitude = 0.3", "domain3.shift = 0.1")),
        doctest::Contains("brightness_shift"), ConfigError);
    // channel_permutation without its permutation.
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "domain2.permutation = 1,2,0", "# none")),
        doctest::Contains("domain2.permutation"), ConfigError);
    // Not a permutation of the channels.
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "domain2.permutation = 1,2,0", "domain2.permutation = 0,0,1")),
        doctest::Contains("permutation of 0..2"), ConfigError);
    CHECK_THROWS_AS(
        parse_text(patched(base, "domain2.permutation = 1,2,0", "domain2.permutation = 0,1")),
        ConfigError);
    // Out-of-range transform parameters.
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "domain3.amplitude = 0.3", "domain3.amplitude = 1.5")),
        doctest::Contains("(0, 1]"), ConfigError);
    // Directory keys only make sense for dirs mode and vice versa.
    CHECK_THROWS_WITH_AS(parse_text(base + "domain1.dir = /tmp/x\n"),
                         doctest::Contains("data.source = dirs"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_text(patched(base, "source = synthetic", "source = dirs")),
        doctest::Contains("base_count"), ConfigError);
}

TEST_CASE("run section validation") {
    CHECK_THROWS_WITH_AS(parse_text("[data]\ndomain1.transform = identity\n"
                                    "domain2.transform = identity\n"
                                    "domain3.transform = identity\n"),
                         doctest::Contains("run.name"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_text(patched(kFullConfig, "name = demo", "name = bad/name")),
                         doctest::Contains("run.name"), ConfigError);
}

TEST_CASE("two-domain configs still describe the auxiliary domain's data") {
    const std::string aux = "[run]\nname = two\n[training]\nn_domains = 2\n"
                            "auxiliary_domain = 3\n[data]\n"
                            "domain1.transform = identity\n"
                            "domain2.transform = brightness_shift\n";
    CHECK_THROWS_WITH_AS(parse_text(aux), doctest::Contains("domain3"), ConfigError);
    const ExperimentConfig cfg = parse_text(aux + "domain3.transform = identity\n");
    CHECK(cfg.training.bank_domains() == 3);
    CHECK(cfg.data.domains.size() == 3);
}

TEST_CASE("serialized snapshots reparse to the same configuration, byte for byte") {
    const ExperimentConfig cfg = parse_text(kFullConfig);
    const std::string snap = serialize_config(cfg);
    // Spot checks: shortest round-trip double text, explicit defaults.
    CHECK(snap.find("alpha = 0.25\n") != std::string::npos);
    CHECK(snap.find("lr0 = 2e-04\n") != std::string::npos);
    CHECK(snap.find("mode = conditional-stargan\n") != std::string::npos);
    CHECK(snap.find("domain2.permutation = 1,2,0\n") != std::string::npos);
    CHECK(snap.find("auxiliary_domain = 0\n") != std::string::npos);

    const ExperimentConfig reparsed = parse_text(snap);
    CHECK(serialize_config(reparsed) == snap);

    // Dirs-mode snapshots carry dir keys and omit synthetic-only ones.
    ExperimentConfig dirs = cfg;
    dirs.data.source = DataConfig::Source::Dirs;
    for (auto& d : dirs.data.domains) {
        d.from_dir = true;
        d.dir = "/tmp/imgs";
    }
    const std::string dsnap = serialize_config(dirs);
    CHECK(dsnap.find("source = dirs\n") != std::string::npos);
    CHECK(dsnap.find("base_count") == std::string::npos);
    CHECK(dsnap.find("domain1.dir = /tmp/imgs\n") != std::string::npos);
    CHECK(serialize_config(parse_text(dsnap)) == dsnap);
}

TEST_CASE("config files load from disk with overrides applied in order") {
    const fs::path dir = fs::temp_directory_path() / "mpct_cfg_test";
    fs::create_directories(dir);
    const fs::path file = dir / "exp.ini";
    {
        std::ofstream out(file);
        out << kFullConfig;
    }
    const ExperimentConfig cfg = load_experiment_config(
        file.string(), {"run.seed=99", "training.alpha=0.5", "training.alpha=0.75"});
    CHECK(cfg.run.seed == 99);
    CHECK(cfg.training.alpha == 0.75); // later override wins
    CHECK(cfg.training.seed == 99);

    CHECK_THROWS_AS(load_experiment_config((dir / "absent.ini").string()), IoError);
    CHECK_THROWS_AS(load_experiment_config(file.string(), {"training.alpha=abc"}), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic dataset construction matches the data layer directly") {
    ExperimentConfig cfg = parse_text(kFullConfig);
    cfg.data.base_count = 6;
    cfg.data.image_size = 8;
    const std::vector<DomainDataset> via_config = build_datasets(cfg);

    std::vector<SynthTransformSpec> specs;
    for (const auto& d : cfg.data.domains) specs.push_back(d.transform);
    const std::vector<DomainDataset> direct =
        synth_build(6, ImageShape{3, 8, 8}, specs, cfg.run.seed);

    REQUIRE(via_config.size() == direct.size());
    for (std::size_t d = 0; d < direct.size(); ++d) {
        CHECK(via_config[d].domain == direct[d].domain);
        REQUIRE(via_config[d].images.size() == direct[d].images.size());
        CHECK(via_config[d].images[0].values() == direct[d].images[0].values());
        CHECK(via_config[d].pairing == direct[d].pairing);
    }
}

TEST_CASE("directory datasets load and resize through the config") {
    const fs::path dir = fs::temp_directory_path() / "mpct_cfg_dirs";
    fs::remove_all(dir);
    for (int d = 1; d <= 3; ++d) {
        fs::create_directories(dir / ("dom" + std::to_string(d)));
    }
    Rng rng(5);
    for (int d = 1; d <= 3; ++d) {
        for (int n = 0; n < 2; ++n) {
            Tensor img = Tensor::zeros({3, 4, 4});
            for (auto& v : img.values()) v = rng.uniform(-1.0, 1.0);
            png_save((dir / ("dom" + std::to_string(d)) / ("img" + std::to_string(n) + ".png"))
                         .string(),
                     img);
        }
    }
    std::string text = "[run]\nname = d\n[data]\nsource = dirs\nimage_size = 8\n";
    for (int d = 1; d <= 3; ++d) {
        text += "domain" + std::to_string(d) + ".dir = " +
                (dir / ("dom" + std::to_string(d))).string() + "\n";
    }
    const ExperimentConfig cfg = parse_text(text);
    const std::vector<DomainDataset> sets = build_datasets(cfg);
    REQUIRE(sets.size() == 3);
    for (const auto& ds : sets) {
        REQUIRE(ds.images.size() == 2);
        CHECK(ds.images[0].shape() == std::vector<int>{3, 8, 8}); // resized up
        CHECK(ds.pairing.empty());                                // no hidden alignment
    }

    ExperimentConfig missing = cfg;
    missing.data.domains[1].dir = (dir / "nope").string();
    CHECK_THROWS_WITH_AS(build_datasets(missing), doctest::Contains("nope"), IoError);
    fs::remove_all(dir);
}
