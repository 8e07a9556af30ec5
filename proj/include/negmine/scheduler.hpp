#pragma once

#include <cstdint>
#include <vector>

#include "negmine/config.hpp"
#include "negmine/linalg.hpp"
#include "negmine/optim.hpp"
#include "negmine/rng.hpp"

namespace negmine::sched {

// Residual-MLP policy applied row-wise with shared weights: each normalized
// quantile row maps to a Beta(alpha, beta) hardness-quantile distribution.
// Row-wise weight sharing makes the map permutation-equivariant over anchors.
struct SchedulerPolicy {
    int64_t m = 100;        // input quantile count
    int64_t h = 256;        // hidden width
    int64_t n_blocks = 2;   // residual blocks, 2 weight layers each
    double eps_floor = 1e-3;
    bool global_context = false;  // append the column-mean row to every input

    Mat in_w, in_b;
    std::vector<Mat> blk;  // per block: w1, b1, w2, b2
    Mat head_w, head_b;    // 2 raw outputs; zero-initialized so alpha=beta~0.694

    static SchedulerPolicy init(const SchedulerConfig& cfg, RngStream& rng);

    std::vector<ParamBlock> blocks();
    std::vector<Mat> zero_grads() const;
    int64_t input_dim() const { return global_context ? 2 * m : m; }
};

// Forward activations for every row, kept for the backward pass.
struct PolicyForward {
    Mat input;   // n x input_dim (rows as fed, incl. optional context half)
    Mat x0;      // n x h, tanh of input projection
    std::vector<Mat> blk_in;    // per block: n x h input x_k
    std::vector<Mat> blk_tanh;  // per block: n x h tanh(w1 x_k + b1)
    Mat xfinal;  // n x h
    Mat raw;     // n x 2
    std::vector<double> alpha, beta;  // n, softplus(raw) + eps_floor
};

// Row-wise forward over a summary matrix (n x m). Throws NumericalError on
// non-finite activations.
PolicyForward forward(const SchedulerPolicy& policy, const Mat& rows);

// Accumulate parameter gradients from an upstream gradient w.r.t. the raw
// head outputs. `row_filter` limits work to the listed rows (nullptr = all);
// `dinput` optionally receives input-space gradients (same filter).
void backward(const SchedulerPolicy& policy, const PolicyForward& fwd, const Mat& draw,
              std::vector<Mat>& grads, const std::vector<size_t>* row_filter = nullptr,
              Mat* dinput = nullptr);

// The sampled per-anchor action. `consumed` is filled by the batcher as
// chaining anchors actually use their quantiles; log_density covers consumed
// entries only.
struct QuantileAction {
    std::vector<double> q;      // in (0,1), one per row
    std::vector<double> alpha;  // snapshot of the heads that produced q
    std::vector<double> beta;
    std::vector<uint8_t> consumed;
    double log_density = 0.0;
    bool trainable = false;  // false for the heuristic baselines

    size_t size() const { return q.size(); }
};

// Forward + one Beta draw per row (two Marsaglia-Tsang gamma draws each, in
// row order). Draws are clamped into the open interval for log-density use.
QuantileAction sample_action(const SchedulerPolicy& policy, const Mat& rows, RngStream& rng);

// ln BetaPDF(q; a, b). Throws ContractError outside the open-interval domain.
double log_prob(double alpha, double beta, double q);

// One consumed (row, quantile) pair in the coordinate system of the matrix
// that was fed to forward().
struct ConsumedQuantile {
    size_t row = 0;
    double q = 0.5;
};

// Single-sample REINFORCE ascent on delta * sum of consumed log-densities,
// applied through the AdamW optimizer (Table-style setup). delta == 0 skips
// the step entirely (moments and weight decay untouched); non-finite delta is
// skipped with a warning.
void reinforce_update(SchedulerPolicy& policy, AdamW& opt, const Mat& rows,
                      const std::vector<ConsumedQuantile>& consumed, double delta);

}  // namespace negmine::sched
