#include "negmine/rng.hpp"

#include <cmath>
#include <sstream>

namespace negmine {

namespace {

// splitmix64 finalizer; decorrelates FNV-1a outputs for nearby names.
uint64_t splitmix64_mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master, std::string_view stream_name) {
    uint64_t h = fnv1a(stream_name.data(), stream_name.size());
    h = fnv1a(&master, sizeof(master), h);
    return splitmix64_mix(h);
}

uint64_t RngStream::uniform_int(uint64_t n) {
    if (n == 0) throw ContractError("uniform_int: n must be positive");
    if (n == 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return x % n;
}

double RngStream::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller on (0,1] x [0,1) to avoid log(0).
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    have_cached_normal_ = true;
    return r * std::cos(theta);
}

double RngStream::gamma(double shape) {
    if (!(shape > 0.0)) throw ContractError("gamma: shape must be positive");
    if (shape < 1.0) {
        // Boost: X ~ Gamma(shape+1), U uniform, X * U^{1/shape} ~ Gamma(shape).
        double x = gamma(shape + 1.0);
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return x * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double RngStream::beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    double s = x + y;
    if (s <= 0.0) return 0.5;  // both underflowed; a,b tiny
    return x / s;
}

std::string RngStream::save_state() const {
    std::ostringstream os;
    os << eng_;
    os << ' ' << (have_cached_normal_ ? 1 : 0);
    if (have_cached_normal_) {
        os << ' ';
        os.precision(17);
        os << cached_normal_;
    }
    return os.str();
}

void RngStream::load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    int flag = 0;
    is >> flag;
    if (is.fail()) throw DataError("RngStream::load_state: malformed state string");
    have_cached_normal_ = (flag != 0);
    if (have_cached_normal_) {
        is >> cached_normal_;
        if (is.fail()) throw DataError("RngStream::load_state: missing cached normal");
    }
}

}  // namespace negmine
