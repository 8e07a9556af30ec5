#include "negmine/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "negmine/mathx.hpp"

namespace negmine::sched {

namespace {

constexpr double kQClampLo = 1e-12;

void gaussian_fill(Mat& m, double std, RngStream& rng) {
    for (double& x : m.a) x = std * rng.normal();
}

}  // namespace

SchedulerPolicy SchedulerPolicy::init(const SchedulerConfig& cfg, RngStream& rng) {
    SchedulerPolicy p;
    p.m = cfg.m;
    p.h = cfg.hidden;
    p.n_blocks = cfg.blocks;
    p.eps_floor = cfg.eps_floor;
    p.global_context = cfg.global_context;

    const auto h = static_cast<size_t>(p.h);
    const auto in = static_cast<size_t>(p.input_dim());
    p.in_w = Mat(h, in);
    gaussian_fill(p.in_w, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    p.in_b = Mat(1, h);
    // Residual blocks: first layer random, second zero, so every block starts
    // as the identity and the net begins well-conditioned.
    for (int64_t b = 0; b < p.n_blocks; ++b) {
        Mat w1(h, h);
        gaussian_fill(w1, 1.0 / std::sqrt(static_cast<double>(h)), rng);
        p.blk.push_back(std::move(w1));
        p.blk.emplace_back(1, h);
        p.blk.emplace_back(h, h);
        p.blk.emplace_back(1, h);
    }
    // Zero head: alpha = beta = softplus(0) + eps for every input, a
    // near-uniform starting policy.
    p.head_w = Mat(2, h);
    p.head_b = Mat(1, 2);
    return p;
}

std::vector<ParamBlock> SchedulerPolicy::blocks() {
    std::vector<ParamBlock> bs;
    bs.push_back({"sched_in_w", &in_w, true});
    bs.push_back({"sched_in_b", &in_b, false});
    for (int64_t b = 0; b < n_blocks; ++b) {
        const std::string tag = "sched_blk" + std::to_string(b);
        bs.push_back({tag + "_w1", &blk[static_cast<size_t>(4 * b + 0)], true});
        bs.push_back({tag + "_b1", &blk[static_cast<size_t>(4 * b + 1)], false});
        bs.push_back({tag + "_w2", &blk[static_cast<size_t>(4 * b + 2)], true});
        bs.push_back({tag + "_b2", &blk[static_cast<size_t>(4 * b + 3)], false});
    }
    bs.push_back({"sched_head_w", &head_w, true});
    bs.push_back({"sched_head_b", &head_b, false});
    return bs;
}

std::vector<Mat> SchedulerPolicy::zero_grads() const {
    auto& self = const_cast<SchedulerPolicy&>(*this);
    std::vector<Mat> g;
    for (const auto& b : self.blocks()) g.emplace_back(b.param->rows, b.param->cols);
    return g;
}

PolicyForward forward(const SchedulerPolicy& policy, const Mat& rows) {
    const size_t n = rows.rows;
    const auto h = static_cast<size_t>(policy.h);
    const auto in = static_cast<size_t>(policy.input_dim());
    if (rows.cols != static_cast<size_t>(policy.m))
        throw ContractError("scheduler forward: row width != m");
    if (n == 0) throw ContractError("scheduler forward: empty input");

    PolicyForward f;
    f.input = Mat(n, in);
    for (size_t i = 0; i < n; ++i) {
        const double* r = rows.row(i);
        std::copy(r, r + rows.cols, f.input.row(i));
    }
    if (policy.global_context) {
        // Column mean of the summary, appended to every row.
        std::vector<double> ctx(rows.cols, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t l = 0; l < rows.cols; ++l) ctx[l] += rows(i, l);
        for (double& c : ctx) c /= static_cast<double>(n);
        for (size_t i = 0; i < n; ++i)
            std::copy(ctx.begin(), ctx.end(), f.input.row(i) + rows.cols);
    }

    f.x0 = Mat(n, h);
    f.blk_in.assign(static_cast<size_t>(policy.n_blocks), Mat(n, h));
    f.blk_tanh.assign(static_cast<size_t>(policy.n_blocks), Mat(n, h));
    f.xfinal = Mat(n, h);
    f.raw = Mat(n, 2);
    f.alpha.resize(n);
    f.beta.resize(n);

    std::vector<double> x(h), t(h), y(h);
    for (size_t i = 0; i < n; ++i) {
        affine(policy.in_w, policy.in_b.a, f.input.row(i), x.data());
        for (size_t j = 0; j < h; ++j) x[j] = std::tanh(x[j]);
        std::copy(x.begin(), x.end(), f.x0.row(i));

        for (int64_t b = 0; b < policy.n_blocks; ++b) {
            const auto bi = static_cast<size_t>(b);
            std::copy(x.begin(), x.end(), f.blk_in[bi].row(i));
            affine(policy.blk[4 * bi + 0], policy.blk[4 * bi + 1].a, x.data(), t.data());
            for (size_t j = 0; j < h; ++j) t[j] = std::tanh(t[j]);
            std::copy(t.begin(), t.end(), f.blk_tanh[bi].row(i));
            affine(policy.blk[4 * bi + 2], policy.blk[4 * bi + 3].a, t.data(), y.data());
            for (size_t j = 0; j < h; ++j) x[j] += y[j];
        }
        std::copy(x.begin(), x.end(), f.xfinal.row(i));

        double raw[2];
        affine(policy.head_w, policy.head_b.a, x.data(), raw);
        if (!std::isfinite(raw[0]) || !std::isfinite(raw[1]))
            throw NumericalError("scheduler forward: non-finite head output");
        f.raw(i, 0) = raw[0];
        f.raw(i, 1) = raw[1];
        f.alpha[i] = softplus(raw[0]) + policy.eps_floor;
        f.beta[i] = softplus(raw[1]) + policy.eps_floor;
    }
    return f;
}

void backward(const SchedulerPolicy& policy, const PolicyForward& fwd, const Mat& draw,
              std::vector<Mat>& grads, const std::vector<size_t>* row_filter, Mat* dinput) {
    const size_t n = fwd.raw.rows;
    const auto h = static_cast<size_t>(policy.h);
    if (draw.rows != n || draw.cols != 2) throw ContractError("scheduler backward: draw shape");

    // Grad layout mirrors blocks(): in_w, in_b, blocks, head_w, head_b.
    const size_t g_in_w = 0, g_in_b = 1;
    auto g_blk = [&](int64_t b, size_t part) { return 2 + static_cast<size_t>(4 * b) + part; };
    const size_t g_head_w = 2 + static_cast<size_t>(4 * policy.n_blocks);
    const size_t g_head_b = g_head_w + 1;

    std::vector<size_t> all_rows;
    if (!row_filter) {
        all_rows.resize(n);
        for (size_t i = 0; i < n; ++i) all_rows[i] = i;
    }
    const std::vector<size_t>& rows_list = row_filter ? *row_filter : all_rows;

    std::vector<double> dx(h), dt(h), dpre(h), dz0(h);
    for (size_t i : rows_list) {
        if (i >= n) throw ContractError("scheduler backward: row filter out of range");
        const double dr[2] = {draw(i, 0), draw(i, 1)};

        affine_accumulate_grads(grads[g_head_w], grads[g_head_b].a, dr, fwd.xfinal.row(i));
        std::fill(dx.begin(), dx.end(), 0.0);
        affine_backprop_input(policy.head_w, dr, dx.data());

        for (int64_t b = policy.n_blocks - 1; b >= 0; --b) {
            const auto bi = static_cast<size_t>(b);
            // x_{k+1} = x_k + w2 tanh(w1 x_k + b1) + b2; dx carries d/dx_{k+1}
            affine_accumulate_grads(grads[g_blk(b, 2)], grads[g_blk(b, 3)].a, dx.data(),
                                    fwd.blk_tanh[bi].row(i));
            std::fill(dt.begin(), dt.end(), 0.0);
            affine_backprop_input(policy.blk[4 * bi + 2], dx.data(), dt.data());
            for (size_t j = 0; j < h; ++j) {
                double t = fwd.blk_tanh[bi](i, j);
                dpre[j] = dt[j] * (1.0 - t * t);
            }
            affine_accumulate_grads(grads[g_blk(b, 0)], grads[g_blk(b, 1)].a, dpre.data(),
                                    fwd.blk_in[bi].row(i));
            // skip connection: dx_k = dx_{k+1} + w1^T dpre
            affine_backprop_input(policy.blk[4 * bi + 0], dpre.data(), dx.data());
        }

        for (size_t j = 0; j < h; ++j) {
            double t = fwd.x0(i, j);
            dz0[j] = dx[j] * (1.0 - t * t);
        }
        affine_accumulate_grads(grads[g_in_w], grads[g_in_b].a, dz0.data(), fwd.input.row(i));
        if (dinput) affine_backprop_input(policy.in_w, dz0.data(), dinput->row(i));
    }
}

QuantileAction sample_action(const SchedulerPolicy& policy, const Mat& rows, RngStream& rng) {
    PolicyForward f = forward(policy, rows);
    const size_t n = rows.rows;
    QuantileAction a;
    a.alpha = f.alpha;
    a.beta = f.beta;
    a.q.resize(n);
    a.consumed.assign(n, 0);
    a.trainable = true;
    for (size_t i = 0; i < n; ++i) {
        double q = rng.beta(a.alpha[i], a.beta[i]);
        a.q[i] = std::clamp(q, kQClampLo, 1.0 - kQClampLo);
    }
    return a;
}

double log_prob(double alpha, double beta, double q) {
    if (!(alpha > 0.0 && beta > 0.0)) throw ContractError("log_prob: alpha, beta must be positive");
    if (!(q > 0.0 && q < 1.0)) throw ContractError("log_prob: q outside (0,1)");
    return beta_log_pdf(q, alpha, beta);
}

void reinforce_update(SchedulerPolicy& policy, AdamW& opt, const Mat& rows,
                      const std::vector<ConsumedQuantile>& consumed, double delta) {
    if (!std::isfinite(delta)) {
        log_warn("reinforce_update: non-finite reward, step skipped");
        return;
    }
    if (delta == 0.0 || consumed.empty()) return;

    // Recompute activations at the current parameters; the caller guarantees
    // the policy has not changed since the action was sampled.
    PolicyForward f = forward(policy, rows);
    Mat draw(rows.rows, 2);
    std::vector<size_t> filter;
    filter.reserve(consumed.size());
    for (const auto& c : consumed) {
        if (c.row >= rows.rows) throw ContractError("reinforce_update: consumed row out of range");
        const double a = f.alpha[c.row];
        const double b = f.beta[c.row];
        if (!(c.q > 0.0 && c.q < 1.0))
            throw ContractError("reinforce_update: consumed q outside (0,1)");
        // d logpdf / d raw = d logpdf / d alpha * sigmoid(raw)
        draw(c.row, 0) += beta_log_pdf_da(c.q, a, b) * sigmoid(f.raw(c.row, 0));
        draw(c.row, 1) += beta_log_pdf_db(c.q, a, b) * sigmoid(f.raw(c.row, 1));
        filter.push_back(c.row);
    }
    std::sort(filter.begin(), filter.end());
    filter.erase(std::unique(filter.begin(), filter.end()), filter.end());

    std::vector<Mat> grads = policy.zero_grads();
    backward(policy, f, draw, grads, &filter);
    // Ascent on delta * log-density == descent on the negated objective.
    opt.step(grads, -delta);
}

}  // namespace negmine::sched
