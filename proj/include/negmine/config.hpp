#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "negmine/common.hpp"

namespace negmine {

// All run configuration, grouped by module. Field defaults here ARE the
// documented defaults printed by `negmine config --defaults`.
struct WorldConfig {
    int64_t n_concepts = 12;
    int64_t n_images = 1080;
    int64_t n_texts = 1080;
    int64_t d_latent = 32;
    int64_t d_img = 32;
    int64_t k_text = 12;
    int64_t vocab = 64;
    double noise_sigma = 0.1;
    int64_t max_concepts = 3;
};

struct ModelConfig {
    int64_t d_emb = 32;
    int64_t hidden = 64;
    double temperature = 0.07;
    double label_smoothing = 0.1;
};

struct SchedulerConfig {
    int64_t m = 100;
    int64_t hidden = 256;
    int64_t blocks = 2;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double eps_floor = 1e-3;
    // EMA reward baseline decay; 0 disables (raw-reward REINFORCE).
    double baseline_ema = 0.0;
    // Hook for a pooled global-context input variant; off = row-wise policy.
    bool global_context = false;
};

struct TrainConfig {
    int64_t epochs = 20;
    int64_t batch = 32;
    int64_t space = 480;
    double lr = 1e-3;
    int64_t warmup_epochs = 1;
    double weight_decay = 0.02;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double mask_prob = 0.5;
    bool drop_tail = true;
    uint64_t seed = 1;
    std::string policy = "falcon";
    // Every N-th step dumps a reward audit record (0 = off).
    int64_t audit_every = 0;
    bool log_batches = true;
    bool dump_sim = false;
};

struct EvalConfig {
    int64_t count = 120;
    std::string ks = "1,5,10";
    int64_t bucket = 100;
};

struct RunConfig {
    WorldConfig world;
    ModelConfig model;
    SchedulerConfig scheduler;
    TrainConfig train;
    EvalConfig eval;

    // Throws ConfigError on invalid combinations (sizes, ranges).
    void validate() const;
};

// Key registry -----------------------------------------------------------

struct ConfigKey {
    std::string name;
    std::string description;
};

// All known dotted keys, in documentation order.
const std::vector<ConfigKey>& config_keys();

// Get/set one key on a config. Unknown key or unparsable value -> ConfigError.
std::string config_get(const RunConfig& cfg, const std::string& key);
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

// Parse a flat `key = value` file (# comments, blank lines ok). Duplicate or
// unknown keys -> ConfigError naming the key.
void load_config_file(RunConfig& cfg, const std::string& path);

// Apply a list of `key=value` override strings (CLI --set).
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Full dump as `key = value` lines with description comments.
std::string dump_config(const RunConfig& cfg, bool with_descriptions = true);

// Snapshot as an ordered key->value map (for the manifest).
std::map<std::string, std::string> config_snapshot(const RunConfig& cfg);

// FNV-1a hash over the canonical snapshot text (stamped into CSV comments).
uint64_t config_hash(const RunConfig& cfg);

// Parse eval.ks ("1,5,10") into validated ascending ints.
std::vector<int64_t> parse_ks(const std::string& ks);

}  // namespace negmine
