#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "negmine/config.hpp"
#include "negmine/towers.hpp"

namespace negmine::train {

// One gradient step's telemetry; wall_seconds goes to timing.csv only so that
// metrics.csv stays bit-deterministic.
struct StepRecord {
    int64_t step = 0;
    int64_t epoch = 0;
    int64_t space = 0;
    int64_t batch_size = 0;
    double loss_itc = 0.0;
    double loss_itm = 0.0;
    double loss_mlm = 0.0;
    double loss_total = 0.0;
    double delta = 0.0;
    double q_mean = 0.0;
    double q_std = 0.0;
    int64_t q_count = 0;
    int64_t fn_pairs = 0;     // false negatives among ordered in-batch cross pairs
    int64_t total_pairs = 0;  // B(B-1)
    int64_t fn_chain = 0;     // false negatives among the chained selections
    int64_t chain_count = 0;  // B-1 for chaining policies, 0 for uniform
    double wall_seconds = 0.0;
};

struct EpochRecord {
    int64_t epoch = 0;
    int64_t steps = 0;
    double mean_itc = 0.0;
    double mean_itm = 0.0;
    double mean_mlm = 0.0;
    double mean_delta = 0.0;
    double fn_rate = 0.0;
    double probe_cos = 0.0;  // mean positive cosine on a fixed probe subset
    double lr = 0.0;         // VLP learning rate at epoch end
};

struct TrainOptions {
    std::string world_path;
    std::string out_dir;
    std::string ckpt_in;   // resume from this checkpoint (epoch boundary)
    std::string ckpt_out;  // extra copy of the final checkpoint
};

struct TrainResult {
    int64_t total_steps = 0;
    std::vector<EpochRecord> epochs;
    std::string checkpoint_path;
};

// Full training run: warm-start epoch, then per-epoch search-space
// partitioning, chained batch composition, VLP updates, rewards, scheduler
// ascent, cache refresh, reshuffle. Writes metrics.csv, timing.csv,
// epochs.csv, scheduler_trace.jsonl, batches.jsonl, manifest.json, the
// checkpoint and optional audit / similarity dumps under opts.out_dir.
TrainResult run_training(const RunConfig& cfg, const TrainOptions& opts);

// Reward of one VLP update: mlm loss at `before` minus at `after`, both on
// the identical batch and mask pattern.
double compute_reward(const towers::ModelParams& before, const towers::ModelParams& after,
                      const towers::BatchData& batch, const towers::MaskPattern& mask);

// Guarded variant for callers holding two mask handles: rejects patterns that
// differ (the reward is undefined across masks).
double compute_reward(const towers::ModelParams& before, const towers::ModelParams& after,
                      const towers::BatchData& batch, const towers::MaskPattern& mask_before,
                      const towers::MaskPattern& mask_after);

}  // namespace negmine::train
