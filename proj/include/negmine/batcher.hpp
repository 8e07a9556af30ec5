#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "negmine/linalg.hpp"
#include "negmine/rng.hpp"
#include "negmine/scheduler.hpp"

namespace negmine::batcher {

enum class PolicyKind { kFalcon, kFixed, kHardening, kSoftening, kUniform };

struct PolicySpec {
    PolicyKind kind = PolicyKind::kFalcon;
    double q = 0.0;  // fixed-policy quantile

    // Accepts: falcon | fixed:<q> | hardening | softening | uniform.
    static PolicySpec parse(const std::string& text);
    std::string name() const;
    bool chains() const { return kind != PolicyKind::kUniform; }
    bool trainable() const { return kind == PolicyKind::kFalcon; }
};

// Ordered mini-batch index set over a search space (local indices).
struct BatchPlan {
    std::vector<size_t> indices;
    std::vector<std::pair<size_t, double>> quantiles_used;  // (anchor, q), B-1 entries
    double log_density = 0.0;
};

// Among {row[j] : j in unselected}, the index holding the nearest-rank
// q-quantile value: rank = round(q*(n-1)) half-up over the sorted candidate
// values; value ties resolve to the lowest index. q=1 is exactly the greedy
// most-similar pick, q=0 the least similar.
size_t quantile_select(const double* row, const std::vector<size_t>& unselected, double q);

// Chained composition: uniform first pick, then B-1 steps each selecting the
// q_i-quantile neighbor of the most recently chosen anchor i. Selected
// indices are removed from `unselected`; consumed quantiles are recorded on
// the action (and the plan) and, for trainable actions, accumulated into the
// joint log-density.
BatchPlan compose_batch(const Mat& s, std::vector<size_t>& unselected, size_t B,
                        sched::QuantileAction& action, RngStream& rng);

// Constant-vector actions of the heuristic baselines (fixed / progressive).
// Uniform runs never call this: they batch by shuffled chunking instead.
sched::QuantileAction baseline_action(const PolicySpec& spec, int64_t epoch, int64_t total_epochs,
                                      size_t n_rows);

// Shuffle-and-chunk batching shared by the uniform policy and the warm-start
// epoch. `order` is consumed as-is (the caller shuffles it per epoch).
std::vector<std::vector<int64_t>> chunk_batches(const std::vector<int64_t>& order, size_t B,
                                                bool drop_tail);

}  // namespace negmine::batcher
