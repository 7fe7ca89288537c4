#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpct {

// Structural problems: shapes that do not conform, bad arguments.
class ShapeError : public std::runtime_error {
  public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf reaching a computation that requires finite values.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration: missing generators, bad domain ids, malformed specs.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-level failures: unreadable paths, corrupt checkpoints, bad images.
class IoError : public std::runtime_error {
  public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG used everywhere instead of std distributions, whose output
// is implementation-defined. The generator (xoshiro256** seeded via splitmix64)
// and every derived draw below reproduce bit-for-bit across platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Derives an independent stream from a master seed and a purpose tag, so
    // e.g. parameter init and data shuffling never share a stream.
    static Rng derive(std::uint64_t master, const std::string& tag, std::uint64_t index = 0);

    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    double normal();                          // standard normal, Box-Muller
    std::uint64_t below(std::uint64_t bound); // [0, bound), unbiased

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t s_[4]; // internal xoshiro-like state fed by splitmix64
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Worker count for evaluation parallelism. Resolution order: explicit request
// (> 0), then MPCT_THREADS, then hardware concurrency capped at 4.
int resolve_thread_count(int requested = 0);

// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
// result is identical for any worker count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

std::string format_shape(const std::vector<int>& shape);

} // namespace mpct
