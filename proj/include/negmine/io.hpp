#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "negmine/linalg.hpp"
#include "negmine/scheduler.hpp"
#include "negmine/simgrid.hpp"
#include "negmine/towers.hpp"

namespace negmine::io {

// Numbers in CSVs are printed with %.17g: doubles round-trip exactly, so the
// determinism contract on metrics.csv is a plain byte comparison.
std::string fmt_double(double x);

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header,
              uint64_t config_hash);
    void row(const std::vector<std::string>& cells);
    void flush() { out_.flush(); }

private:
    std::ofstream out_;
    size_t n_cols_;
};

struct CsvData {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Column index by name; throws DataError when absent.
    size_t col(const std::string& name) const;
};

CsvData read_csv(const std::string& path);

class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path);
    void record(const nlohmann::json& j);
    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

std::vector<nlohmann::json> read_jsonl(const std::string& path);

// Manifest: atomically (tmp + rename) replaces <dir>/manifest.json.
void write_manifest(const std::string& run_dir, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::string& run_dir);

std::string iso8601_now();

// --- checkpoints -----------------------------------------------------------

struct OptState {
    int64_t t = 0;
    std::vector<Mat> m;
    std::vector<Mat> v;
};

struct Checkpoint {
    uint64_t world_hash = 0;
    uint64_t config_hash = 0;
    int64_t epochs_completed = 0;
    int64_t global_step = 0;
    std::string policy_name;
    std::vector<int64_t> global_order;
    std::vector<std::pair<std::string, std::string>> rng_states;
    towers::ModelParams model;
    OptState vlp_opt;
    sched::SchedulerPolicy scheduler;
    OptState sched_opt;
    double reward_baseline = 0.0;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// --- reward audit records --------------------------------------------------

// Everything needed to recompute one logged reward offline: the batch, the
// exact mask, and both parameter snapshots around the VLP update.
struct AuditRecord {
    int64_t step = 0;
    int64_t epoch = 0;
    double delta = 0.0;
    double mlm_before = 0.0;
    double mlm_after = 0.0;
    std::vector<int64_t> batch_ids;
    towers::MaskPattern mask;
    towers::ModelParams model_before;
    towers::ModelParams model_after;
};

void save_audit(const AuditRecord& rec, const std::string& path);
AuditRecord load_audit(const std::string& path);

// --- similarity dumps ------------------------------------------------------

struct SimDump {
    int64_t epoch = 0;
    int64_t space = 0;
    Mat raw;
    Mat presoft;
    Mat summary;
};

// gzip-compressed binary array dump (zlib).
void dump_sim(const SimDump& d, const std::string& path);
SimDump load_sim(const std::string& path);

}  // namespace negmine::io
