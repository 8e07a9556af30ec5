#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "negmine/common.hpp"

namespace negmine {

// Dense row-major matrix of doubles. Deliberately minimal: the model is small
// enough that naive loops dominate nothing, and keeping every reduction order
// explicit in our own code is what makes runs bit-reproducible.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(size_t i, size_t j) { return a[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return a[i * cols + j]; }

    double* row(size_t i) { return a.data() + i * cols; }
    const double* row(size_t i) const { return a.data() + i * cols; }

    size_t size() const { return a.size(); }
    void zero() { a.assign(a.size(), 0.0); }

    Mat& operator+=(const Mat& o) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += o.a[i];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& x : a) x *= s;
        return *this;
    }
};

// y = W x + b, W is (out x in), x has length in.
inline void affine(const Mat& w, const std::vector<double>& b, const double* x,
                   double* y) {
    for (size_t i = 0; i < w.rows; ++i) {
        double s = b[i];
        const double* wr = w.row(i);
        for (size_t j = 0; j < w.cols; ++j) s += wr[j] * x[j];
        y[i] = s;
    }
}

// y += W^T g (backprop through affine into the input).
inline void affine_backprop_input(const Mat& w, const double* g, double* y) {
    for (size_t i = 0; i < w.rows; ++i) {
        const double* wr = w.row(i);
        for (size_t j = 0; j < w.cols; ++j) y[j] += wr[j] * g[i];
    }
}

// dW += g x^T, db += g (accumulate parameter grads of affine).
inline void affine_accumulate_grads(Mat& dw, std::vector<double>& db, const double* g,
                                    const double* x) {
    for (size_t i = 0; i < dw.rows; ++i) {
        double* dr = dw.row(i);
        for (size_t j = 0; j < dw.cols; ++j) dr[j] += g[i] * x[j];
        db[i] += g[i];
    }
}

inline double dot(const double* x, const double* y, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const double* x, size_t n) { return std::sqrt(dot(x, x, n)); }

// Cosine similarity with an epsilon floor on the norms so zero vectors give 0.
inline double cosine(const double* x, const double* y, size_t n) {
    double nx = norm2(x, n);
    double ny = norm2(y, n);
    double denom = nx * ny;
    if (denom < 1e-12) return 0.0;
    return dot(x, y, n) / denom;
}

inline bool all_finite(const Mat& m) {
    for (double x : m.a)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace negmine
