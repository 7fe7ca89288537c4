#include "mpct/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mpct {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::string where(const IniEntry& e) {
    std::string loc = "'" + e.section + "." + e.key + "'";
    if (e.line > 0) loc += " (line " + std::to_string(e.line) + ")";
    return loc;
}

[[noreturn]] void bad_value(const IniEntry& e, const std::string& expect) {
    throw ConfigError("bad value \"" + e.value + "\" for " + where(e) + ": expected " + expect);
}

double parse_f64(const IniEntry& e) {
    const std::string v = trim(e.value);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
        bad_value(e, "a finite number");
    }
    return x;
}

long long parse_i64(const IniEntry& e) {
    const std::string v = trim(e.value);
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) bad_value(e, "an integer");
    return x;
}

int parse_int(const IniEntry& e) { return static_cast<int>(parse_i64(e)); }

std::uint64_t parse_u64(const IniEntry& e) {
    const std::string v = trim(e.value);
    if (v.empty() || v[0] == '-') bad_value(e, "a non-negative integer");
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size()) bad_value(e, "a non-negative integer");
    return static_cast<std::uint64_t>(x);
}

bool parse_bool(const IniEntry& e) {
    const std::string v = trim(e.value);
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(e, "true or false");
}

std::vector<int> parse_int_list(const IniEntry& e) {
    std::vector<int> out;
    std::stringstream ss(e.value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        char* end = nullptr;
        const long long x = std::strtoll(part.c_str(), &end, 10);
        if (part.empty() || end != part.c_str() + part.size()) {
            bad_value(e, "a comma-separated integer list");
        }
        out.push_back(static_cast<int>(x));
    }
    if (out.empty()) bad_value(e, "a comma-separated integer list");
    return out;
}

std::string fmt_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr); // shortest round-trip form
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

const char* kind_name(SynthTransformSpec::Kind k) {
    switch (k) {
        case SynthTransformSpec::Kind::Identity: return "identity";
        case SynthTransformSpec::Kind::ChannelPermutation: return "channel_permutation";
        case SynthTransformSpec::Kind::UniformNoise: return "uniform_noise";
        case SynthTransformSpec::Kind::StripeOverlay: return "stripe_overlay";
        case SynthTransformSpec::Kind::BrightnessShift: return "brightness_shift";
    }
    return "identity";
}

SynthTransformSpec::Kind kind_from(const IniEntry& e) {
    const std::string v = trim(e.value);
    if (v == "identity") return SynthTransformSpec::Kind::Identity;
    if (v == "channel_permutation") return SynthTransformSpec::Kind::ChannelPermutation;
    if (v == "uniform_noise") return SynthTransformSpec::Kind::UniformNoise;
    if (v == "stripe_overlay") return SynthTransformSpec::Kind::StripeOverlay;
    if (v == "brightness_shift") return SynthTransformSpec::Kind::BrightnessShift;
    bad_value(e, "one of identity, channel_permutation, uniform_noise, stripe_overlay, "
                 "brightness_shift");
}

BankMode mode_from(const IniEntry& e) {
    const std::string v = trim(e.value);
    if (v == "pairwise-cyclegan") return BankMode::Pairwise;
    if (v == "conditional-stargan") return BankMode::Conditional;
    bad_value(e, "pairwise-cyclegan or conditional-stargan");
}

const char* mode_name(BankMode m) {
    return m == BankMode::Pairwise ? "pairwise-cyclegan" : "conditional-stargan";
}

} // namespace

const IniEntry* IniDoc::find(const std::string& section, const std::string& key) const {
    for (const auto& e : entries) {
        if (e.section == section && e.key == key) return &e;
    }
    return nullptr;
}

IniDoc ini_parse(const std::string& text) {
    IniDoc doc;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": malformed section header \"" + line + "\"");
            }
            section = trim(line.substr(1, line.size() - 2));
            const bool ok = !section.empty() &&
                            std::all_of(section.begin(), section.end(), [](char c) {
                                return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
                            });
            if (!ok) {
                throw ConfigError("line " + std::to_string(line_no) +
                                  ": invalid section name \"" + section + "\"");
            }
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) +
                              ": expected key = value, got \"" + line + "\"");
        }
        IniEntry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        e.value = trim(line.substr(eq + 1));
        e.line = line_no;
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line_no) +
                              ": key \"" + e.key + "\" appears before any [section]");
        }
        if (e.key.empty() || !std::all_of(e.key.begin(), e.key.end(), valid_key_char)) {
            throw ConfigError("line " + std::to_string(line_no) + ": invalid key \"" + e.key +
                              "\"");
        }
        if (e.value.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": empty value for '" +
                              section + "." + e.key + "'");
        }
        if (const IniEntry* prev = doc.find(section, e.key)) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + section +
                              "." + e.key + "' (first set on line " + std::to_string(prev->line) +
                              ")");
        }
        doc.entries.push_back(std::move(e));
    }
    return doc;
}

void ini_set(IniDoc& doc, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override \"" + assignment + "\" must look like section.key=value");
    }
    const std::string dotted = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    const std::size_t dot = dotted.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size()) {
        throw ConfigError("override \"" + assignment + "\" must look like section.key=value");
    }
    if (value.empty()) {
        throw ConfigError("override \"" + assignment + "\" has an empty value");
    }
    const std::string section = dotted.substr(0, dot);
    const std::string key = dotted.substr(dot + 1);
    for (auto& e : doc.entries) {
        if (e.section == section && e.key == key) {
            e.value = value;
            e.line = 0; // no longer traceable to a file line
            return;
        }
    }
    doc.entries.push_back(IniEntry{section, key, value, 0});
}

ExperimentConfig parse_experiment_config(const IniDoc& doc) {
    ExperimentConfig cfg;
    // Raw per-domain entries; resolved once n_domains is known.
    std::map<int, std::map<std::string, IniEntry>> domain_entries;
    bool saw_base_count = false;

    for (const auto& e : doc.entries) {
        if (e.section == "run") {
            if (e.key == "name") cfg.run.name = e.value;
            else if (e.key == "out") cfg.run.out = e.value;
            else if (e.key == "seed") cfg.run.seed = parse_u64(e);
            else if (e.key == "threads") cfg.run.threads = parse_int(e);
            else throw ConfigError("unknown key " + where(e));
        } else if (e.section == "training") {
            auto& t = cfg.training;
            if (e.key == "alpha") t.alpha = parse_f64(e);
            else if (e.key == "beta") t.beta = parse_f64(e);
            else if (e.key == "lr0") t.lr0 = parse_f64(e);
            else if (e.key == "decay") t.decay = parse_bool(e);
            else if (e.key == "epochs") t.epochs = parse_int(e);
            else if (e.key == "batch_size") t.batch_size = parse_int(e);
            else if (e.key == "mode") t.mode = mode_from(e);
            else if (e.key == "consistency_enabled") t.consistency_enabled = parse_bool(e);
            else if (e.key == "saturating_gan") t.saturating_gan = parse_bool(e);
            else if (e.key == "eval_every") t.eval_every = parse_int(e);
            else if (e.key == "eval_fraction") t.eval_fraction = parse_f64(e);
            else if (e.key == "max_eval_images") t.max_eval_images = parse_int(e);
            else if (e.key == "n_domains") t.n_domains = parse_int(e);
            else if (e.key == "auxiliary_domain") t.auxiliary_domain = parse_int(e);
            else throw ConfigError("unknown key " + where(e));
        } else if (e.section == "model") {
            if (e.key == "gen_base_width") cfg.training.gen.base_width = parse_int(e);
            else if (e.key == "gen_downsample") cfg.training.gen.n_downsample = parse_int(e);
            else if (e.key == "gen_res_blocks") cfg.training.gen.n_res_blocks = parse_int(e);
            else if (e.key == "disc_width") cfg.training.disc.width = parse_int(e);
            else if (e.key == "disc_layers") cfg.training.disc.n_layers = parse_int(e);
            else throw ConfigError("unknown key " + where(e));
        } else if (e.section == "data") {
            if (e.key == "source") {
                const std::string v = trim(e.value);
                if (v == "synthetic") cfg.data.source = DataConfig::Source::Synthetic;
                else if (v == "dirs") cfg.data.source = DataConfig::Source::Dirs;
                else bad_value(e, "synthetic or dirs");
            } else if (e.key == "base_count") {
                cfg.data.base_count = parse_int(e);
                saw_base_count = true;
            } else if (e.key == "image_size") {
                cfg.data.image_size = parse_int(e);
            } else if (e.key == "channels") {
                cfg.data.channels = parse_int(e);
            } else if (e.key.rfind("domain", 0) == 0) {
                const std::size_t dot = e.key.find('.');
                if (dot == std::string::npos) throw ConfigError("unknown key " + where(e));
                const std::string idx_str = e.key.substr(6, dot - 6);
                char* end = nullptr;
                const long long idx = std::strtoll(idx_str.c_str(), &end, 10);
                if (idx_str.empty() || end != idx_str.c_str() + idx_str.size() || idx < 1) {
                    throw ConfigError("unknown key " + where(e));
                }
                const std::string sub = e.key.substr(dot + 1);
                static const std::set<std::string> kDomainKeys = {
                    "transform", "permutation", "amplitude", "period", "intensity",
                    "shift",     "dir"};
                if (kDomainKeys.count(sub) == 0) throw ConfigError("unknown key " + where(e));
                domain_entries[static_cast<int>(idx)].emplace(sub, e);
            } else {
                throw ConfigError("unknown key " + where(e));
            }
        } else {
            throw ConfigError("unknown section '" + e.section + "' (key " + where(e) + ")");
        }
    }

    cfg.training.seed = cfg.run.seed;
    cfg.training.gen.image_channels = cfg.data.channels;
    cfg.training.disc.image_channels = cfg.data.channels;
    cfg.training.disc.image_size = cfg.data.image_size;

    const bool synthetic = cfg.data.source == DataConfig::Source::Synthetic;
    if (!synthetic && saw_base_count) {
        throw ConfigError("'data.base_count' applies only to synthetic data");
    }

    const int nd = cfg.training.bank_domains();
    for (const auto& [idx, entries] : domain_entries) {
        if (idx > nd) {
            throw ConfigError("domain " + std::to_string(idx) + " is configured ('data." +
                              entries.begin()->second.key + "') but the models span only " +
                              std::to_string(nd) + " domains");
        }
    }
    cfg.data.domains.resize(static_cast<std::size_t>(nd));
    for (int d = 1; d <= nd; ++d) {
        DomainSource& src = cfg.data.domains[static_cast<std::size_t>(d - 1)];
        const auto it = domain_entries.find(d);
        const std::string prefix = "data.domain" + std::to_string(d);
        if (it == domain_entries.end()) {
            throw ConfigError("missing '" + prefix +
                              (synthetic ? ".transform'" : ".dir'") + " for domain " +
                              std::to_string(d));
        }
        const auto& entries = it->second;
        const auto get = [&](const char* sub) -> const IniEntry* {
            const auto f = entries.find(sub);
            return f == entries.end() ? nullptr : &f->second;
        };
        if (synthetic) {
            if (get("dir")) {
                throw ConfigError("'" + prefix + ".dir' is only valid when data.source = dirs");
            }
            const IniEntry* tr = get("transform");
            if (!tr) throw ConfigError("missing '" + prefix + ".transform'");
            src.transform.kind = kind_from(*tr);
            src.transform.seed = cfg.run.seed;
            const auto only_for = [&](const char* sub, SynthTransformSpec::Kind k,
                                      const char* kname) {
                if (get(sub) && src.transform.kind != k) {
                    throw ConfigError("'" + prefix + "." + sub + "' applies only to " + kname);
                }
            };
            only_for("permutation", SynthTransformSpec::Kind::ChannelPermutation,
                     "channel_permutation");
            only_for("amplitude", SynthTransformSpec::Kind::UniformNoise, "uniform_noise");
            only_for("period", SynthTransformSpec::Kind::StripeOverlay, "stripe_overlay");
            only_for("intensity", SynthTransformSpec::Kind::StripeOverlay, "stripe_overlay");
            only_for("shift", SynthTransformSpec::Kind::BrightnessShift, "brightness_shift");
            if (src.transform.kind == SynthTransformSpec::Kind::ChannelPermutation) {
                const IniEntry* p = get("permutation");
                if (!p) {
                    throw ConfigError("channel_permutation needs '" + prefix +
                                      ".permutation' (0-based channel list, e.g. 1,2,0)");
                }
                src.transform.permutation = parse_int_list(*p);
            }
            if (const IniEntry* a = get("amplitude")) src.transform.noise_amplitude = parse_f64(*a);
            if (const IniEntry* p = get("period")) src.transform.stripe_period = parse_int(*p);
            if (const IniEntry* i = get("intensity")) src.transform.stripe_intensity = parse_f64(*i);
            if (const IniEntry* s = get("shift")) src.transform.shift = parse_f64(*s);
        } else {
            for (const char* sub : {"transform", "permutation", "amplitude", "period",
                                    "intensity", "shift"}) {
                if (get(sub)) {
                    throw ConfigError("'" + prefix + "." + sub +
                                      "' is only valid when data.source = synthetic");
                }
            }
            const IniEntry* dir = get("dir");
            if (!dir) throw ConfigError("missing '" + prefix + ".dir'");
            src.from_dir = true;
            src.dir = dir->value;
        }
    }

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    if (run.name.empty()) throw ConfigError("'run.name' is required");
    const bool name_ok = std::all_of(run.name.begin(), run.name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
    if (!name_ok || run.name == "." || run.name == "..") {
        throw ConfigError("'run.name' may contain only letters, digits, '_', '-', '.': \"" +
                          run.name + "\"");
    }
    if (run.out.empty()) throw ConfigError("'run.out' must not be empty");
    if (run.threads < 0) throw ConfigError("'run.threads' must be >= 0");
    training.validate();
    if (data.channels < 1) throw ConfigError("'data.channels' must be >= 1");
    if (data.image_size < 4) throw ConfigError("'data.image_size' must be >= 4");
    const int nd = training.bank_domains();
    if (static_cast<int>(data.domains.size()) != nd) {
        throw ConfigError("data must describe exactly " + std::to_string(nd) + " domains");
    }
    if (data.source == DataConfig::Source::Synthetic) {
        if (data.base_count < 2) throw ConfigError("'data.base_count' must be >= 2");
        for (int d = 1; d <= nd; ++d) {
            const auto& t = data.domains[static_cast<std::size_t>(d - 1)].transform;
            const std::string prefix = "data.domain" + std::to_string(d);
            if (t.kind == SynthTransformSpec::Kind::ChannelPermutation) {
                std::vector<bool> seen(static_cast<std::size_t>(data.channels), false);
                bool ok = static_cast<int>(t.permutation.size()) == data.channels;
                for (int c : t.permutation) {
                    if (c < 0 || c >= data.channels || seen[static_cast<std::size_t>(c)]) {
                        ok = false;
                        break;
                    }
                    seen[static_cast<std::size_t>(c)] = true;
                }
                if (!ok) {
                    throw ConfigError("'" + prefix + ".permutation' must be a permutation of 0.." +
                                      std::to_string(data.channels - 1));
                }
            } else if (t.kind == SynthTransformSpec::Kind::UniformNoise) {
                if (!(t.noise_amplitude > 0.0 && t.noise_amplitude <= 1.0)) {
                    throw ConfigError("'" + prefix + ".amplitude' must lie in (0, 1]");
                }
            } else if (t.kind == SynthTransformSpec::Kind::StripeOverlay) {
                if (t.stripe_period < 2) {
                    throw ConfigError("'" + prefix + ".period' must be >= 2");
                }
                if (!(t.stripe_intensity >= 0.0 && t.stripe_intensity <= 1.0)) {
                    throw ConfigError("'" + prefix + ".intensity' must lie in [0, 1]");
                }
            } else if (t.kind == SynthTransformSpec::Kind::BrightnessShift) {
                if (!std::isfinite(t.shift)) {
                    throw ConfigError("'" + prefix + ".shift' must be finite");
                }
            }
        }
    } else {
        for (int d = 1; d <= nd; ++d) {
            if (data.domains[static_cast<std::size_t>(d - 1)].dir.empty()) {
                throw ConfigError("missing 'data.domain" + std::to_string(d) + ".dir'");
            }
        }
    }
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    IniDoc doc = ini_parse(buf.str());
    for (const auto& ov : overrides) ini_set(doc, ov);
    return parse_experiment_config(doc);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[run]\n";
    out << "name = " << cfg.run.name << "\n";
    out << "out = " << cfg.run.out << "\n";
    out << "seed = " << cfg.run.seed << "\n";
    out << "threads = " << cfg.run.threads << "\n";
    out << "\n[training]\n";
    const auto& t = cfg.training;
    out << "alpha = " << fmt_double(t.alpha) << "\n";
    out << "beta = " << fmt_double(t.beta) << "\n";
    out << "lr0 = " << fmt_double(t.lr0) << "\n";
    out << "decay = " << fmt_bool(t.decay) << "\n";
    out << "epochs = " << t.epochs << "\n";
    out << "batch_size = " << t.batch_size << "\n";
    out << "mode = " << mode_name(t.mode) << "\n";
    out << "consistency_enabled = " << fmt_bool(t.consistency_enabled) << "\n";
    out << "saturating_gan = " << fmt_bool(t.saturating_gan) << "\n";
    out << "eval_every = " << t.eval_every << "\n";
    out << "eval_fraction = " << fmt_double(t.eval_fraction) << "\n";
    out << "max_eval_images = " << t.max_eval_images << "\n";
    out << "n_domains = " << t.n_domains << "\n";
    out << "auxiliary_domain = " << t.auxiliary_domain << "\n";
    out << "\n[model]\n";
    out << "gen_base_width = " << t.gen.base_width << "\n";
    out << "gen_downsample = " << t.gen.n_downsample << "\n";
    out << "gen_res_blocks = " << t.gen.n_res_blocks << "\n";
    out << "disc_width = " << t.disc.width << "\n";
    out << "disc_layers = " << t.disc.n_layers << "\n";
    out << "\n[data]\n";
    const bool synthetic = cfg.data.source == DataConfig::Source::Synthetic;
    out << "source = " << (synthetic ? "synthetic" : "dirs") << "\n";
    if (synthetic) out << "base_count = " << cfg.data.base_count << "\n";
    out << "image_size = " << cfg.data.image_size << "\n";
    out << "channels = " << cfg.data.channels << "\n";
    for (std::size_t d = 0; d < cfg.data.domains.size(); ++d) {
        const std::string prefix = "domain" + std::to_string(d + 1) + ".";
        const auto& src = cfg.data.domains[d];
        if (!synthetic) {
            out << prefix << "dir = " << src.dir << "\n";
            continue;
        }
        const auto& tr = src.transform;
        out << prefix << "transform = " << kind_name(tr.kind) << "\n";
        switch (tr.kind) {
            case SynthTransformSpec::Kind::Identity:
                break;
            case SynthTransformSpec::Kind::ChannelPermutation: {
                out << prefix << "permutation = ";
                for (std::size_t c = 0; c < tr.permutation.size(); ++c) {
                    if (c) out << ",";
                    out << tr.permutation[c];
                }
                out << "\n";
                break;
            }
            case SynthTransformSpec::Kind::UniformNoise:
                out << prefix << "amplitude = " << fmt_double(tr.noise_amplitude) << "\n";
                break;
            case SynthTransformSpec::Kind::StripeOverlay:
                out << prefix << "period = " << tr.stripe_period << "\n";
                out << prefix << "intensity = " << fmt_double(tr.stripe_intensity) << "\n";
                break;
            case SynthTransformSpec::Kind::BrightnessShift:
                out << prefix << "shift = " << fmt_double(tr.shift) << "\n";
                break;
        }
    }
    return out.str();
}

std::vector<DomainDataset> build_datasets(const ExperimentConfig& cfg) {
    cfg.validate();
    const ImageShape shape{cfg.data.channels, cfg.data.image_size, cfg.data.image_size};
    if (cfg.data.source == DataConfig::Source::Synthetic) {
        std::vector<SynthTransformSpec> specs;
        for (const auto& d : cfg.data.domains) specs.push_back(d.transform);
        return synth_build(cfg.data.base_count, shape, specs, cfg.run.seed);
    }
    std::vector<DomainDataset> out;
    for (std::size_t d = 0; d < cfg.data.domains.size(); ++d) {
        out.push_back(
            load_image_dir(cfg.data.domains[d].dir, shape, static_cast<int>(d + 1)));
    }
    return out;
}

} // namespace mpct
