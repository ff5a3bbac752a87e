#pragma once

// Shared plumbing: error categories, deterministic RNG, hashing, seed splitting.

#include <bit>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint and frame files are little-endian; big-endian hosts unsupported");

namespace itts {

// ----------------------------- error categories -----------------------------

/// Shape/dimension mismatch; message names the offending operand.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

/// Nonfinite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

/// Bad configuration value or unparsable config file.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

/// Word or word id outside the vocabulary where substitution is not allowed.
class VocabError : public std::runtime_error {
public:
    explicit VocabError(const std::string& msg) : std::runtime_error("vocabulary error: " + msg) {}
};

/// Training diverged or its preconditions were violated.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& msg, long iteration = -1)
        : std::runtime_error(iteration >= 0
                                 ? "training error at iteration " + std::to_string(iteration) + ": " + msg
                                 : "training error: " + msg),
          iteration_(iteration) {}
    long iteration() const { return iteration_; }

private:
    long iteration_;
};

/// File IO failure or missing upstream artifact.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

// ----------------------------- hashing -----------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_ids(const std::vector<int>& ids, std::uint64_t seed) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    for (int id : ids) {
        std::uint32_t v = static_cast<std::uint32_t>(id);
        h = fnv1a64_bytes(&v, sizeof(v), h);
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Fixed rule expanding one global seed into independent per-stage seeds.
/// Stage names are stable strings ("corpus", "lm", ...), so any stage can be
/// rerun on its own and still see the same stream.
inline std::uint64_t stage_seed(std::uint64_t global_seed, std::string_view stage) {
    return splitmix64(global_seed ^ fnv1a64(stage));
}

// ----------------------------- deterministic RNG -----------------------------

// mt19937_64 is bit-stable across platforms; the distribution mapping below is
// ours because std::uniform_*_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1u;
        return lo + static_cast<long>(engine_() % span);
    }

    /// Index sampled from unnormalized nonnegative weights (CDF walk).
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        const double r = uniform() * total;
        double c = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            c += weights[i];
            if (r < c) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace itts
