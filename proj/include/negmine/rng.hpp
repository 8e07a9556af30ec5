#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "negmine/common.hpp"

namespace negmine {

// Derives a child seed from a master seed plus a stream name, so that every
// consumer of randomness (world gen, model init, masking, batching, actions)
// owns an independent stream and insertion of a new consumer never perturbs
// the others.
uint64_t derive_seed(uint64_t master, std::string_view stream_name);

// Deterministic random stream. All distributions are implemented by hand on
// top of mt19937_64 raw draws: libstdc++'s std::*_distribution output is not
// pinned by the standard, and bit-reproducibility across toolchains is part
// of the contract here.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : eng_(seed) {}
    RngStream(uint64_t master, std::string_view stream_name)
        : eng_(derive_seed(master, stream_name)) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform on [0,1) with 53 random bits (exactly representable doubles).
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    uint64_t uniform_int(uint64_t n);

    // Standard normal via Box-Muller (both values used, cached).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 boosted through the
    // Gamma(shape+1) * U^{1/shape} identity.
    double gamma(double shape);

    // Beta(a, b) as Ga/(Ga+Gb).
    double beta(double a, double b);

    // Fisher-Yates, descending index, uniform_int above.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // State capture for checkpoints. Serialized as the textual mt19937_64
    // state plus the Box-Muller cache.
    std::string save_state() const;
    void load_state(const std::string& s);

private:
    std::mt19937_64 eng_;
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace negmine
