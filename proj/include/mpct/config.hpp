#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpct/data.hpp"
#include "mpct/training.hpp"

namespace mpct {

// One `key = value` line of the experiment config, with its [section] and the
// source line number for error messages.
struct IniEntry {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
};

// Flat sectioned key-value text: `[section]` headers, `key = value` lines,
// blank lines, and full-line comments starting with '#' or ';'. Duplicate
// keys within a section are rejected; order is preserved.
struct IniDoc {
    std::vector<IniEntry> entries;

    const IniEntry* find(const std::string& section, const std::string& key) const;
};

IniDoc ini_parse(const std::string& text);

// Applies one `section.key=value` override: replaces the existing entry or
// appends a new one (line 0). Malformed overrides are ConfigErrors.
void ini_set(IniDoc& doc, const std::string& assignment);

struct RunSection {
    std::string name;        // required; names the output subdirectory
    std::string out = "runs";
    std::uint64_t seed = 1;
    int threads = 0; // 0 = resolve from MPCT_THREADS / hardware
};

// Where one domain's images come from: a synthetic transform of the shared
// base set, or a directory of PNG files.
struct DomainSource {
    bool from_dir = false;
    std::string dir;
    SynthTransformSpec transform;
};

struct DataConfig {
    enum class Source { Synthetic, Dirs };
    Source source = Source::Synthetic;
    int base_count = 128; // synthetic images per domain
    int image_size = 32;
    int channels = 3;
    std::vector<DomainSource> domains; // index d holds domain d+1
};

struct ExperimentConfig {
    RunSection run;
    TrainingConfig training; // seed/gen/disc filled from [run], [model], [data]
    DataConfig data;

    void validate() const;
};

// Strict interpretation of a parsed document: every key must be known, every
// value well-formed, and every domain the models span fully described.
// Errors name the offending section.key (and line when it came from a file).
ExperimentConfig parse_experiment_config(const IniDoc& doc);

// Read + parse + apply `--set` style overrides, in order.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

// Canonical snapshot: fixed section and key order, every field explicit,
// doubles printed round-trip exact. parse(serialize(c)) == c, and serializing
// again reproduces the same text byte for byte.
std::string serialize_config(const ExperimentConfig& cfg);

// Materializes the configured datasets: synth_build for synthetic sources,
// directory loading (with resize to the configured geometry) otherwise.
std::vector<DomainDataset> build_datasets(const ExperimentConfig& cfg);

} // namespace mpct
