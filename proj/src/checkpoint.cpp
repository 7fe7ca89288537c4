#include <cstring>
#include <fstream>

#include "mpct/models.hpp"

namespace mpct {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint32_t kMaxRank = 8;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError("checkpoint truncated while reading " + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64s(std::ostream& os, const std::vector<double>& vals) {
    // doubles are written as their IEEE-754 bit patterns, little-endian
    for (double d : vals) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) {
            b[i] = static_cast<unsigned char>(bits >> (8 * i));
        }
        os.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_f64s(std::istream& is, std::vector<double>& vals, const std::string& what) {
    for (double& d : vals) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8)) {
            throw IoError("checkpoint truncated while reading values of " + what);
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        }
        std::memcpy(&d, &bits, 8);
    }
}

} // namespace

void checkpoint_save(const std::string& path, const ParamSet& params, int n_domains,
                     BankMode mode) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open checkpoint for writing: " + path);
    }
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(n_domains));
    const char mode_byte = mode == BankMode::Pairwise ? 0 : 1;
    os.write(&mode_byte, 1);
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& it : params.items()) {
        write_u32(os, static_cast<std::uint32_t>(it.name.size()));
        os.write(it.name.data(), static_cast<std::streamsize>(it.name.size()));
        const auto& shape = it.tensor.shape();
        write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) {
            write_u32(os, static_cast<std::uint32_t>(d));
        }
        write_f64s(os, it.tensor.values());
    }
    os.flush();
    if (!os) {
        throw IoError("write failure on checkpoint: " + path);
    }
}

CheckpointData checkpoint_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint: " + path);
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("not a checkpoint file (bad magic): " + path);
    }
    CheckpointData data;
    data.version = read_u32(is, "version");
    if (data.version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(data.version));
    }
    data.n_domains = static_cast<int>(read_u32(is, "domain count"));
    char mode_byte;
    if (!is.read(&mode_byte, 1)) {
        throw IoError("checkpoint truncated while reading mode");
    }
    if (mode_byte != 0 && mode_byte != 1) {
        throw IoError("checkpoint has unknown mode byte " + std::to_string(int(mode_byte)));
    }
    data.mode = mode_byte == 0 ? BankMode::Pairwise : BankMode::Conditional;
    const std::uint32_t count = read_u32(is, "parameter count");
    data.params.reserve(count);
    for (std::uint32_t p = 0; p < count; ++p) {
        const std::uint32_t name_len = read_u32(is, "name length");
        if (name_len == 0 || name_len > kMaxNameLen) {
            throw IoError("checkpoint has implausible name length " + std::to_string(name_len));
        }
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw IoError("checkpoint truncated while reading a parameter name");
        }
        const std::uint32_t rank = read_u32(is, "rank of " + name);
        if (rank == 0 || rank > kMaxRank) {
            throw IoError("checkpoint has implausible rank for " + name);
        }
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(read_u32(is, "extent of " + name));
            if (shape[d] <= 0) {
                throw IoError("checkpoint has non-positive extent for " + name);
            }
            numel *= static_cast<std::size_t>(shape[d]);
        }
        Tensor t = Tensor::zeros(shape);
        (void)numel;
        read_f64s(is, t.values(), name);
        data.params.emplace_back(std::move(name), std::move(t));
    }
    return data;
}

void checkpoint_apply(const CheckpointData& data, ParamSet& target, int expect_n_domains,
                      BankMode expect_mode) {
    if (data.n_domains != expect_n_domains) {
        throw ConfigError("checkpoint was written for " + std::to_string(data.n_domains) +
                          " domains, models expect " + std::to_string(expect_n_domains));
    }
    if (data.mode != expect_mode) {
        throw ConfigError("checkpoint mode does not match the configured generator mode");
    }
    if (data.params.size() != target.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(data.params.size()) +
                          " parameters, models expect " + std::to_string(target.size()));
    }
    // Validate the complete inventory before mutating anything.
    std::vector<const Tensor*> sources;
    sources.reserve(target.size());
    for (const auto& it : target.items()) {
        const Tensor* found = nullptr;
        for (const auto& [name, tensor] : data.params) {
            if (name == it.name) {
                found = &tensor;
                break;
            }
        }
        if (!found) {
            throw ConfigError("checkpoint is missing parameter " + it.name);
        }
        if (found->shape() != it.tensor.shape()) {
            throw ConfigError("checkpoint shape " + format_shape(found->shape()) +
                              " does not match " + format_shape(it.tensor.shape()) + " for " +
                              it.name);
        }
        sources.push_back(found);
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
        Tensor dst = target.items()[i].tensor;
        dst.values() = sources[i]->values();
    }
}

} // namespace mpct
