#include "negmine/batcher.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>

#include "negmine/mathx.hpp"

namespace negmine::batcher {

PolicySpec PolicySpec::parse(const std::string& text) {
    PolicySpec s;
    if (text == "falcon") {
        s.kind = PolicyKind::kFalcon;
    } else if (text == "hardening") {
        s.kind = PolicyKind::kHardening;
    } else if (text == "softening") {
        s.kind = PolicyKind::kSoftening;
    } else if (text == "uniform") {
        s.kind = PolicyKind::kUniform;
    } else if (text.rfind("fixed:", 0) == 0) {
        s.kind = PolicyKind::kFixed;
        const std::string qs = text.substr(6);
        errno = 0;
        char* end = nullptr;
        s.q = std::strtod(qs.c_str(), &end);
        if (errno != 0 || end == qs.c_str() || *end != '\0')
            throw ConfigError("bad fixed policy quantile: '" + qs + "'");
        if (!(s.q >= 0.0 && s.q <= 1.0))
            throw ConfigError("fixed policy quantile must be in [0,1], got " + qs);
    } else {
        throw ConfigError("unknown policy '" + text +
                          "'; expected falcon | fixed:<q> | hardening | softening | uniform");
    }
    return s;
}

std::string PolicySpec::name() const {
    switch (kind) {
        case PolicyKind::kFalcon: return "falcon";
        case PolicyKind::kHardening: return "hardening";
        case PolicyKind::kSoftening: return "softening";
        case PolicyKind::kUniform: return "uniform";
        case PolicyKind::kFixed: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "fixed:%g", q);
            return buf;
        }
    }
    throw ContractError("unreachable policy kind");
}

size_t quantile_select(const double* row, const std::vector<size_t>& unselected, double q) {
    if (unselected.empty()) throw ContractError("quantile_select: empty candidate set");
    if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile_select: q outside [0,1]");
    const size_t n = unselected.size();
    const size_t rank = nearest_rank(q, n);

    // k-th smallest candidate value, then the lowest index holding it.
    std::vector<double> vals(n);
    for (size_t t = 0; t < n; ++t) vals[t] = row[unselected[t]];
    std::nth_element(vals.begin(), vals.begin() + static_cast<ptrdiff_t>(rank), vals.end());
    const double target = vals[rank];

    size_t best = SIZE_MAX;
    for (size_t t = 0; t < n; ++t)
        if (row[unselected[t]] == target) best = std::min(best, unselected[t]);
    return best;
}

BatchPlan compose_batch(const Mat& s, std::vector<size_t>& unselected, size_t B,
                        sched::QuantileAction& action, RngStream& rng) {
    if (B < 1) throw ContractError("compose_batch: B must be >= 1");
    if (unselected.empty()) throw ContractError("compose_batch: empty search space remainder");
    if (action.size() != s.rows) throw ContractError("compose_batch: action size != |M|");

    auto remove_index = [&unselected](size_t idx) {
        auto it = std::find(unselected.begin(), unselected.end(), idx);
        unselected.erase(it);
    };

    BatchPlan plan;
    const size_t take = std::min(B, unselected.size());
    plan.indices.reserve(take);

    size_t first = unselected[rng.uniform_int(unselected.size())];
    plan.indices.push_back(first);
    remove_index(first);

    while (plan.indices.size() < take) {
        const size_t anchor = plan.indices.back();
        const double q = action.q[anchor];
        const size_t next = quantile_select(s.row(anchor), unselected, q);
        plan.indices.push_back(next);
        remove_index(next);
        plan.quantiles_used.emplace_back(anchor, q);
        action.consumed[anchor] = 1;
        if (action.trainable) {
            double lp = sched::log_prob(action.alpha[anchor], action.beta[anchor], q);
            plan.log_density += lp;
            action.log_density += lp;
        }
    }
    return plan;
}

sched::QuantileAction baseline_action(const PolicySpec& spec, int64_t epoch, int64_t total_epochs,
                                      size_t n_rows) {
    if (epoch < 0 || epoch >= total_epochs)
        throw ContractError("baseline_action: epoch outside [0, total_epochs)");
    double q = 0.0;
    switch (spec.kind) {
        case PolicyKind::kFixed: q = spec.q; break;
        case PolicyKind::kHardening:
            q = total_epochs > 1
                    ? static_cast<double>(epoch) / static_cast<double>(total_epochs - 1)
                    : 1.0;
            break;
        case PolicyKind::kSoftening:
            q = total_epochs > 1
                    ? 1.0 - static_cast<double>(epoch) / static_cast<double>(total_epochs - 1)
                    : 0.0;
            break;
        case PolicyKind::kUniform:
            throw ContractError("baseline_action: uniform policy does not chain");
        case PolicyKind::kFalcon:
            throw ContractError("baseline_action: falcon action comes from the scheduler");
    }
    sched::QuantileAction a;
    a.q.assign(n_rows, q);
    a.alpha.assign(n_rows, 0.0);
    a.beta.assign(n_rows, 0.0);
    a.consumed.assign(n_rows, 0);
    a.log_density = 0.0;
    a.trainable = false;
    return a;
}

std::vector<std::vector<int64_t>> chunk_batches(const std::vector<int64_t>& order, size_t B,
                                                bool drop_tail) {
    if (B < 1) throw ContractError("chunk_batches: B must be >= 1");
    std::vector<std::vector<int64_t>> out;
    for (size_t pos = 0; pos < order.size(); pos += B) {
        size_t end = std::min(pos + B, order.size());
        if (end - pos < B && drop_tail) break;
        out.emplace_back(order.begin() + static_cast<ptrdiff_t>(pos),
                         order.begin() + static_cast<ptrdiff_t>(end));
    }
    return out;
}

}  // namespace negmine::batcher
