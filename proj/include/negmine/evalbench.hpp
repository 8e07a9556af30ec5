#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "negmine/synthworld.hpp"
#include "negmine/towers.hpp"

namespace negmine::evalb {

// Probability that a uniformly drawn unlabeled pair is a false negative:
// ((1-kappa) rho) / (1 - kappa rho). Throws ContractError outside the valid
// domain (kappa*rho >= 1 is impossible for real universes).
double fn_probability(double rho, double kappa);

struct FnBucket {
    int64_t step_lo = 0;  // inclusive
    int64_t step_hi = 0;  // exclusive
    int64_t steps = 0;
    int64_t fn_pairs = 0;
    int64_t total_pairs = 0;
    double rate = 0.0;
};

struct FnRiskCurve {
    std::vector<FnBucket> buckets;
};

// Recompute per-bucket false-negative fractions from a run's batch traces
// (batches.jsonl) against the ground-truth relation. Counts ordered in-batch
// cross pairs (image_a, text_b), a != b, that fall in R \ P.
FnRiskCurve measure_fn_rate(const std::string& run_dir, const world::SemanticUniverse& u,
                            int64_t bucket_width);

struct RecallRow {
    int64_t k = 0;
    double strict_t2i = 0.0;  // percent
    double strict_i2t = 0.0;
    double strict_avg = 0.0;
    double compat_t2i = 0.0;  // correct when the hit is R-compatible
    double compat_i2t = 0.0;
    double compat_avg = 0.0;
};

struct RecallReport {
    std::vector<RecallRow> rows;  // one per K, ascending
    const RecallRow& at_k(int64_t k) const;
};

// Rank the held-out split by tower cosine similarity (deterministic
// tie-break: higher score first, then lower id). eval_ids index pairs that
// were never trained on.
RecallReport recall_at_k(const towers::ModelParams& model, const world::SemanticUniverse& u,
                         const std::vector<int64_t>& eval_ids, const std::vector<int64_t>& ks);

// Ranked candidate ids for one query (shared with the sort-oracle test).
std::vector<int64_t> rank_candidates(const std::vector<double>& scores,
                                     const std::vector<int64_t>& ids);

struct PolicySummary {
    std::string policy;
    int64_t n_runs = 0;
    double strict_r1_mean = 0.0, strict_r1_std = 0.0;
    double compat_r1_mean = 0.0, compat_r1_std = 0.0;
    double final_fn_mean = 0.0, final_fn_std = 0.0;  // last 25% of steps
    std::vector<double> strict_r1;  // per run, report order
};

struct PairwiseDiff {
    std::string policy_a;
    std::string policy_b;
    double strict_r1_diff = 0.0;  // mean(a) - mean(b)
    double compat_r1_diff = 0.0;
    double final_fn_diff = 0.0;
};

struct ComparisonTable {
    std::vector<PolicySummary> policies;  // lexicographic by policy name
    std::vector<PairwiseDiff> diffs;
};

// Aggregate completed runs by policy. All runs must share the same world
// (hash check) and eval split; throws DataError otherwise. Recall is
// recomputed from each run's final checkpoint.
ComparisonTable compare_policies(const std::vector<std::string>& run_dirs);

void write_recall_csv(const RecallReport& r, const std::string& path, uint64_t config_hash);
void write_fn_curve_csv(const FnRiskCurve& c, const std::string& path, uint64_t config_hash);
void write_compare_csv(const ComparisonTable& t, const std::string& path, uint64_t config_hash);

// Trailing-quarter false-negative rate of one run's metrics.csv.
double final_fn_rate(const std::string& run_dir);

}  // namespace negmine::evalb
