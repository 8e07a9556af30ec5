#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "negmine/common.hpp"

namespace negmine {

// Overflow-safe softplus.
inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// d/dx softplus = sigmoid.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log Gamma via lgamma (thread-unsafe signgam ignored: args always > 0 here).
inline double log_gamma(double x) { return std::lgamma(x); }

inline double log_beta_fn(double a, double b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

// Digamma by forward recurrence + asymptotic series; good to ~1e-12 and only
// used in Beta log-density gradients so that level of accuracy is plenty.
inline double digamma(double x) {
    if (!(x > 0.0)) throw ContractError("digamma: x must be positive");
    double r = 0.0;
    while (x < 10.0) {
        r -= 1.0 / x;
        x += 1.0;
    }
    double inv = 1.0 / x;
    double inv2 = inv * inv;
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^{2n})
    double series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    return r + std::log(x) - 0.5 * inv - series;
}

// Beta(a,b) log-density at q in (0,1).
inline double beta_log_pdf(double q, double a, double b) {
    if (!(q > 0.0 && q < 1.0)) throw ContractError("beta_log_pdf: q must be in (0,1)");
    return (a - 1.0) * std::log(q) + (b - 1.0) * std::log1p(-q) - log_beta_fn(a, b);
}

// Partial derivatives of beta_log_pdf w.r.t. (a, b).
inline double beta_log_pdf_da(double q, double a, double b) {
    return std::log(q) - digamma(a) + digamma(a + b);
}
inline double beta_log_pdf_db(double q, double a, double b) {
    return std::log1p(-q) - digamma(b) + digamma(a + b);
}

// Nearest-rank index for quantile level q over n order statistics:
// rank = round(q * (n-1)) with halves rounding up, clamped to [0, n-1].
inline size_t nearest_rank(double q, size_t n) {
    if (n == 0) throw ContractError("nearest_rank: empty sample");
    if (q < 0.0) q = 0.0;
    if (q > 1.0) q = 1.0;
    double r = std::floor(q * static_cast<double>(n - 1) + 0.5);
    if (r < 0.0) r = 0.0;
    double hi = static_cast<double>(n - 1);
    if (r > hi) r = hi;
    return static_cast<size_t>(r);
}

// Numerically stable in-place softmax.
inline void softmax_inplace(std::vector<double>& v) {
    if (v.empty()) return;
    double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : v) x /= z;
}

inline double log_sum_exp(const std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace negmine
