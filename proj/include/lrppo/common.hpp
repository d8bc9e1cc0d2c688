#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrppo {

// Error taxonomy. The CLI maps these onto exit codes, so new error
// conditions should pick the closest existing class.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct ShapeError : DataError {
    using DataError::DataError;
};
struct NumericError : Error {
    using Error::Error;
};

// Deterministic RNG. All sampling goes through this wrapper rather than
// <random> distributions, whose output is implementation-defined; the
// draws below are pinned to mt19937_64 output alone so results are stable
// across standard library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller on our own uniforms.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform index in [0, n). Rejection-free modulo bias is negligible for
    // the pool sizes here, but do it properly anyway.
    std::size_t index(std::size_t n) {
        if (n == 0) throw Error("Rng::index: empty range");
        const std::uint64_t bound = n;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % bound);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates; std::shuffle is implementation-defined.
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    std::string save_state() const;
    void load_state(const std::string& s);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64-style mixing, used to derive independent seed streams from a
// master seed (stream id = purpose tag or trajectory index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a, for stable string hashes (instance ids, config hashes).
std::uint64_t fnv1a(std::string_view s);

// Order-stable reduction: pairwise summation so that parallel evaluation
// with per-slot results aggregates identically regardless of thread count.
double pairwise_sum(std::span<const double> values);

// Shortest lossless formatting for doubles ("%.17g" trimmed), used anywhere
// a number lands in a file that must be byte-reproducible.
std::string format_double(double v);

}  // namespace lrppo
