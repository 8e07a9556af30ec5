#include "negmine/trainloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>

#include "negmine/batcher.hpp"
#include "negmine/io.hpp"
#include "negmine/scheduler.hpp"
#include "negmine/simgrid.hpp"
#include "negmine/synthworld.hpp"

namespace negmine::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kStreamModelInit = "model-init";
const char* const kStreamSchedInit = "scheduler-init";
const char* const kStreamMasking = "masking";
const char* const kStreamBatching = "batching";
const char* const kStreamAction = "action";

struct RunState {
    RunConfig cfg;
    batcher::PolicySpec policy_spec;
    world::SemanticUniverse universe;
    int64_t n_train = 0;

    towers::ModelParams model;
    sched::SchedulerPolicy policy;
    std::optional<AdamW> vlp_opt;
    std::optional<AdamW> sched_opt;

    RngStream rng_mask{0};
    RngStream rng_batch{0};
    RngStream rng_action{0};

    std::vector<int64_t> order;  // current global pair order over the train split
    simgrid::EmbeddingCache cache;

    int64_t global_step = 0;
    int64_t epochs_done = 0;
    double reward_baseline = 0.0;

    uint64_t world_hash = 0;
    uint64_t cfg_hash = 0;
};

double lr_at_step(const RunConfig& cfg, int64_t warmup_steps, int64_t step) {
    if (warmup_steps <= 0 || step + 1 >= warmup_steps) return cfg.train.lr;
    return cfg.train.lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

// Steps in a plain shuffle-and-chunk epoch (warm start / uniform policy).
int64_t uniform_epoch_steps(int64_t n_train, int64_t B, bool drop_tail) {
    if (drop_tail) return n_train / B;
    return (n_train + B - 1) / B;
}

void count_false_negatives(const world::SemanticUniverse& u, const std::vector<int64_t>& ids,
                           StepRecord& rec) {
    const auto B = static_cast<size_t>(ids.size());
    for (size_t a = 0; a < B; ++a)
        for (size_t b = 0; b < B; ++b) {
            if (a == b) continue;
            if (world::is_compatible(u.images[static_cast<size_t>(ids[a])],
                                     u.texts[static_cast<size_t>(ids[b])]))
                ++rec.fn_pairs;
        }
    rec.total_pairs = static_cast<int64_t>(B * (B - 1));
    for (size_t t = 1; t < B; ++t) {
        const auto& prev_img = u.images[static_cast<size_t>(ids[t - 1])];
        const auto& prev_txt = u.texts[static_cast<size_t>(ids[t - 1])];
        const auto& next_img = u.images[static_cast<size_t>(ids[t])];
        const auto& next_txt = u.texts[static_cast<size_t>(ids[t])];
        if (world::is_compatible(prev_img, next_txt) || world::is_compatible(next_img, prev_txt))
            ++rec.fn_chain;
    }
}

// Full-sweep cache refresh at the current parameters: the next epoch's
// similarity structure comes from these (soon-to-be previous-epoch)
// embeddings. Chunk size only groups forward passes; per-item outputs do not
// depend on it.
void refresh_cache(RunState& st, int64_t epoch_tag) {
    const int64_t chunk = 128;
    const auto d = static_cast<size_t>(st.cfg.model.d_emb);
    if (st.cache.img.rows != static_cast<size_t>(st.n_train)) {
        st.cache.img = Mat(static_cast<size_t>(st.n_train), d);
        st.cache.txt = Mat(static_cast<size_t>(st.n_train), d);
    }
    for (int64_t lo = 0; lo < st.n_train; lo += chunk) {
        const int64_t hi = std::min(st.n_train, lo + chunk);
        std::vector<int64_t> ids;
        ids.reserve(static_cast<size_t>(hi - lo));
        for (int64_t i = lo; i < hi; ++i) ids.push_back(i);
        towers::BatchData batch = towers::make_batch(st.universe, ids);
        towers::EmbedResult emb = towers::embed(st.model, batch);
        for (size_t r = 0; r < ids.size(); ++r) {
            const auto g = static_cast<size_t>(ids[r]);
            std::copy(emb.u.row(r), emb.u.row(r) + d, st.cache.img.row(g));
            std::copy(emb.v.row(r), emb.v.row(r) + d, st.cache.txt.row(g));
        }
    }
    st.cache.epoch_tag = epoch_tag;
}

double probe_cosine(const RunState& st) {
    const auto n = static_cast<size_t>(std::min<int64_t>(64, st.n_train));
    const size_t d = st.cache.img.cols;
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += dot(st.cache.img.row(i), st.cache.txt.row(i), d);
    return s / static_cast<double>(n);
}

std::vector<std::pair<std::string, std::string>> rng_snapshot(const RunState& st) {
    return {{kStreamMasking, st.rng_mask.save_state()},
            {kStreamBatching, st.rng_batch.save_state()},
            {kStreamAction, st.rng_action.save_state()}};
}

void rng_restore(RunState& st, const std::vector<std::pair<std::string, std::string>>& states) {
    for (const auto& [name, state] : states) {
        if (name == kStreamMasking)
            st.rng_mask.load_state(state);
        else if (name == kStreamBatching)
            st.rng_batch.load_state(state);
        else if (name == kStreamAction)
            st.rng_action.load_state(state);
        else
            throw DataError("checkpoint names unknown rng stream '" + name + "'");
    }
}

io::OptState opt_snapshot(const AdamW& opt) {
    return {opt.t(), opt.m(), opt.v()};
}

void opt_restore(AdamW& opt, const io::OptState& s) {
    if (s.m.size() != opt.m().size()) throw DataError("optimizer state block count mismatch");
    opt.set_t(s.t);
    opt.m() = s.m;
    opt.v() = s.v;
}

io::Checkpoint make_checkpoint(const RunState& st) {
    io::Checkpoint ck;
    ck.world_hash = st.world_hash;
    ck.config_hash = st.cfg_hash;
    ck.epochs_completed = st.epochs_done;
    ck.global_step = st.global_step;
    ck.policy_name = st.policy_spec.name();
    ck.global_order = st.order;
    ck.rng_states = rng_snapshot(st);
    ck.model = st.model;
    ck.vlp_opt = opt_snapshot(*st.vlp_opt);
    ck.scheduler = st.policy;
    ck.sched_opt = opt_snapshot(*st.sched_opt);
    ck.reward_baseline = st.reward_baseline;
    return ck;
}

struct Writers {
    std::unique_ptr<io::CsvWriter> metrics;
    std::unique_ptr<io::CsvWriter> timing;
    std::unique_ptr<io::CsvWriter> epochs;
    std::unique_ptr<io::JsonlWriter> sched_trace;
    std::unique_ptr<io::JsonlWriter> batches;
};

void write_step(Writers& w, const StepRecord& r) {
    using io::fmt_double;
    w.metrics->row({std::to_string(r.step), std::to_string(r.epoch), std::to_string(r.space),
                    std::to_string(r.batch_size), fmt_double(r.loss_itc), fmt_double(r.loss_itm),
                    fmt_double(r.loss_mlm), fmt_double(r.loss_total), fmt_double(r.delta),
                    fmt_double(r.q_mean), fmt_double(r.q_std), std::to_string(r.q_count),
                    std::to_string(r.fn_pairs), std::to_string(r.total_pairs),
                    std::to_string(r.fn_chain), std::to_string(r.chain_count)});
    w.timing->row({std::to_string(r.step), fmt_double(r.wall_seconds)});
}

void write_epoch(Writers& w, const EpochRecord& e) {
    using io::fmt_double;
    w.epochs->row({std::to_string(e.epoch), std::to_string(e.steps), fmt_double(e.mean_itc),
                   fmt_double(e.mean_itm), fmt_double(e.mean_mlm), fmt_double(e.mean_delta),
                   fmt_double(e.fn_rate), fmt_double(e.probe_cos), fmt_double(e.lr)});
}

// Shared per-step core: losses, VLP update, reward. Returns the StepRecord
// with loss/delta fields filled; batching-related fields are the caller's.
StepRecord vlp_step(RunState& st, const std::vector<int64_t>& batch_ids, int64_t epoch,
                    int64_t warmup_steps, const std::string& audit_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = st.global_step;
    rec.epoch = epoch;
    rec.batch_size = static_cast<int64_t>(batch_ids.size());

    towers::BatchData batch = towers::make_batch(st.universe, batch_ids);
    towers::MaskPattern mask =
        towers::sample_mask(batch.size(), static_cast<size_t>(st.cfg.world.k_text),
                            st.cfg.train.mask_prob, st.rng_mask);

    towers::EmbedResult emb = towers::embed(st.model, batch);
    towers::EmbGrad eg(batch.size(), static_cast<size_t>(st.cfg.model.d_emb));
    std::vector<Mat> grads = st.model.zero_grads();

    rec.loss_itc = towers::loss_itc_fwd(st.model, emb, &eg);
    Mat fused = towers::fused_similarity(emb);
    rec.loss_itm = towers::loss_itm_fwd(st.model, emb, fused, &eg, &grads);
    rec.loss_mlm = towers::loss_mlm_fwd(st.model, batch, mask, emb, &eg, &grads);
    towers::backward_embed(st.model, batch, emb, eg, grads);
    rec.loss_total = rec.loss_itc + rec.loss_itm + rec.loss_mlm;

    const bool audit = st.cfg.train.audit_every > 0 &&
                       st.global_step % st.cfg.train.audit_every == 0;
    towers::ModelParams model_before;
    if (audit) model_before = st.model;

    st.vlp_opt->config().lr = lr_at_step(st.cfg, warmup_steps, st.global_step);
    st.vlp_opt->step(grads);

    towers::EmbedResult emb_after = towers::embed(st.model, batch);
    const double after = towers::loss_mlm_fwd(st.model, batch, mask, emb_after, nullptr, nullptr);
    rec.delta = rec.loss_mlm - after;
    if (!std::isfinite(rec.delta)) throw NumericalError("non-finite reward at step " +
                                                        std::to_string(st.global_step));

    if (audit) {
        io::AuditRecord ar;
        ar.step = st.global_step;
        ar.epoch = rec.epoch;
        ar.delta = rec.delta;
        ar.mlm_before = rec.loss_mlm;
        ar.mlm_after = after;
        ar.batch_ids = batch_ids;
        ar.mask = mask;
        ar.model_before = std::move(model_before);
        ar.model_after = st.model;
        char name[64];
        std::snprintf(name, sizeof(name), "step_%06lld.bin",
                      static_cast<long long>(st.global_step));
        io::save_audit(ar, (fs::path(audit_dir) / name).string());
    }

    count_false_negatives(st.universe, batch_ids, rec);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

void accumulate_epoch(EpochRecord& e, const StepRecord& r) {
    e.steps += 1;
    e.mean_itc += r.loss_itc;
    e.mean_itm += r.loss_itm;
    e.mean_mlm += r.loss_mlm;
    e.mean_delta += r.delta;
}

void finalize_epoch(EpochRecord& e, int64_t fn_pairs, int64_t total_pairs) {
    if (e.steps > 0) {
        e.mean_itc /= static_cast<double>(e.steps);
        e.mean_itm /= static_cast<double>(e.steps);
        e.mean_mlm /= static_cast<double>(e.steps);
        e.mean_delta /= static_cast<double>(e.steps);
    }
    e.fn_rate = total_pairs > 0 ? static_cast<double>(fn_pairs) / static_cast<double>(total_pairs)
                                : 0.0;
}

}  // namespace

double compute_reward(const towers::ModelParams& before, const towers::ModelParams& after,
                      const towers::BatchData& batch, const towers::MaskPattern& mask) {
    const double b = towers::loss_mlm(before, batch, mask).value;
    const double a = towers::loss_mlm(after, batch, mask).value;
    const double d = b - a;
    if (!std::isfinite(d)) throw NumericalError("compute_reward: non-finite loss");
    return d;
}

double compute_reward(const towers::ModelParams& before, const towers::ModelParams& after,
                      const towers::BatchData& batch, const towers::MaskPattern& mask_before,
                      const towers::MaskPattern& mask_after) {
    if (mask_before.fingerprint() != mask_after.fingerprint())
        throw ContractError("compute_reward: mask changed between evaluations");
    return compute_reward(before, after, batch, mask_before);
}

TrainResult run_training(const RunConfig& cfg_in, const TrainOptions& opts) {
    RunState st;
    st.universe = world::load_world(opts.world_path);
    st.world_hash = world::world_file_hash(opts.world_path);

    // The world file is authoritative for the world.* block: adopt its
    // generating config so the manifest describes the data actually used.
    RunConfig cfg = cfg_in;
    cfg.world = st.universe.config;
    {
        const auto passed = config_snapshot(cfg_in);
        for (const auto& [k, v] : config_snapshot(cfg))
            if (k.starts_with("world.") && passed.at(k) != v) {
                log_info("adopting world.* config from " + opts.world_path);
                break;
            }
    }
    cfg.validate();

    st.cfg = cfg;
    st.policy_spec = batcher::PolicySpec::parse(cfg.train.policy);
    st.cfg_hash = config_hash(cfg);

    st.n_train = cfg.world.n_images - cfg.eval.count;
    if (st.n_train < cfg.train.batch)
        throw ConfigError("train split smaller than one batch");

    world::RelationStats stats = relation_stats(st.universe);

    fs::create_directories(opts.out_dir);
    const std::string audit_dir = (fs::path(opts.out_dir) / "audit").string();
    if (cfg.train.audit_every > 0) fs::create_directories(audit_dir);
    const std::string sim_dir = (fs::path(opts.out_dir) / "sim").string();
    if (cfg.train.dump_sim) fs::create_directories(sim_dir);

    json manifest = {
        {"version", 1},
        {"kind", "train"},
        {"build_id", kBuildId},
        {"config", config_snapshot(cfg)},
        {"config_hash", st.cfg_hash},
        {"world_path", fs::absolute(opts.world_path).string()},
        {"world_hash", st.world_hash},
        {"rho", stats.rho},
        {"kappa", stats.kappa},
        {"n_relation", stats.n_relation},
        {"n_positives", stats.n_positives},
        {"master_seed", cfg.train.seed},
        {"policy", st.policy_spec.name()},
        {"n_train", st.n_train},
        {"started_at", io::iso8601_now()},
        {"finished_at", nullptr},
        {"status", "running"},
    };
    if (!opts.ckpt_in.empty()) manifest["resumed_from"] = fs::absolute(opts.ckpt_in).string();
    io::write_manifest(opts.out_dir, manifest);

    // Seed substreams, then model/policy init (their streams are one-shot).
    const uint64_t seed = cfg.train.seed;
    st.rng_mask = RngStream(seed, kStreamMasking);
    st.rng_batch = RngStream(seed, kStreamBatching);
    st.rng_action = RngStream(seed, kStreamAction);
    {
        RngStream rng_model(seed, kStreamModelInit);
        towers::TowerDims dims{cfg.world.d_img, cfg.model.d_emb, cfg.model.hidden,
                               cfg.world.k_text, cfg.world.vocab};
        st.model = towers::ModelParams::init(dims, cfg.model.temperature,
                                             cfg.model.label_smoothing, rng_model);
        RngStream rng_sched(seed, kStreamSchedInit);
        st.policy = sched::SchedulerPolicy::init(cfg.scheduler, rng_sched);
    }

    st.order.resize(static_cast<size_t>(st.n_train));
    for (int64_t i = 0; i < st.n_train; ++i) st.order[static_cast<size_t>(i)] = i;
    st.rng_batch.shuffle(st.order);

    if (!opts.ckpt_in.empty()) {
        io::Checkpoint ck = io::load_checkpoint(opts.ckpt_in);
        if (ck.world_hash != st.world_hash)
            throw DataError("checkpoint was trained on a different world file");
        if (ck.policy_name != st.policy_spec.name())
            throw DataError("checkpoint policy '" + ck.policy_name + "' != configured policy");
        st.model = std::move(ck.model);
        st.policy = std::move(ck.scheduler);
        st.order = std::move(ck.global_order);
        if (static_cast<int64_t>(st.order.size()) != st.n_train)
            throw DataError("checkpoint train split size mismatch");
        rng_restore(st, ck.rng_states);
        st.global_step = ck.global_step;
        st.epochs_done = ck.epochs_completed;
        st.reward_baseline = ck.reward_baseline;
        st.vlp_opt.emplace(st.model.blocks(),
                           AdamWConfig{cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2,
                                       1e-8, cfg.train.weight_decay});
        st.sched_opt.emplace(st.policy.blocks(),
                             AdamWConfig{cfg.scheduler.lr, cfg.train.adam_beta1,
                                         cfg.train.adam_beta2, 1e-8, cfg.scheduler.weight_decay});
        opt_restore(*st.vlp_opt, ck.vlp_opt);
        opt_restore(*st.sched_opt, ck.sched_opt);
        if (st.epochs_done >= cfg.train.epochs)
            throw ConfigError("checkpoint already has " + std::to_string(st.epochs_done) +
                              " epochs; raise train.epochs to resume");
    } else {
        st.vlp_opt.emplace(st.model.blocks(),
                           AdamWConfig{cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2,
                                       1e-8, cfg.train.weight_decay});
        st.sched_opt.emplace(st.policy.blocks(),
                             AdamWConfig{cfg.scheduler.lr, cfg.train.adam_beta1,
                                         cfg.train.adam_beta2, 1e-8, cfg.scheduler.weight_decay});
    }

    // Resume rebuilds the cache from the checkpointed parameters; identical to
    // the sweep that closed the checkpointed epoch.
    if (st.epochs_done > 0) refresh_cache(st, st.epochs_done - 1);

    Writers w;
    w.metrics = std::make_unique<io::CsvWriter>(
        (fs::path(opts.out_dir) / "metrics.csv").string(),
        std::vector<std::string>{"step", "epoch", "space", "batch_size", "loss_itc", "loss_itm",
                                 "loss_mlm", "loss_total", "delta", "q_mean", "q_std", "q_count",
                                 "fn_pairs", "total_pairs", "fn_chain", "chain_count"},
        st.cfg_hash);
    w.timing = std::make_unique<io::CsvWriter>(
        (fs::path(opts.out_dir) / "timing.csv").string(),
        std::vector<std::string>{"step", "wall_seconds"}, st.cfg_hash);
    w.epochs = std::make_unique<io::CsvWriter>(
        (fs::path(opts.out_dir) / "epochs.csv").string(),
        std::vector<std::string>{"epoch", "steps", "mean_itc", "mean_itm", "mean_mlm",
                                 "mean_delta", "fn_rate", "probe_cos", "lr"},
        st.cfg_hash);
    if (st.policy_spec.trainable())
        w.sched_trace = std::make_unique<io::JsonlWriter>(
            (fs::path(opts.out_dir) / "scheduler_trace.jsonl").string());
    if (cfg.train.log_batches)
        w.batches =
            std::make_unique<io::JsonlWriter>((fs::path(opts.out_dir) / "batches.jsonl").string());

    const int64_t warmup_steps =
        cfg.train.warmup_epochs *
        uniform_epoch_steps(st.n_train, cfg.train.batch, cfg.train.drop_tail);

    TrainResult result;
    const std::string ckpt_path = (fs::path(opts.out_dir) / "checkpoint.bin").string();

    for (int64_t epoch = st.epochs_done; epoch < cfg.train.epochs; ++epoch) {
        EpochRecord erec;
        erec.epoch = epoch;
        int64_t epoch_fn = 0, epoch_pairs = 0;

        const bool uniform_epoch = (epoch == 0) || !st.policy_spec.chains();
        if (uniform_epoch) {
            // Warm start / uniform policy: shuffled chunking over the whole
            // train split; no similarity structure, no scheduler involvement.
            auto batches = batcher::chunk_batches(st.order, static_cast<size_t>(cfg.train.batch),
                                                  cfg.train.drop_tail);
            for (const auto& ids : batches) {
                StepRecord rec = vlp_step(st, ids, epoch, warmup_steps, audit_dir);
                rec.space = -1;
                rec.chain_count = 0;
                rec.fn_chain = 0;
                write_step(w, rec);
                if (w.batches)
                    w.batches->record(json{{"step", rec.step},
                                           {"epoch", epoch},
                                           {"space", -1},
                                           {"indices", ids},
                                           {"fn_pairs", rec.fn_pairs},
                                           {"fn_chain", rec.fn_chain}});
                accumulate_epoch(erec, rec);
                epoch_fn += rec.fn_pairs;
                epoch_pairs += rec.total_pairs;
                ++st.global_step;
            }
        } else {
            // Partition the epoch's order into search spaces of |M|.
            std::vector<simgrid::SearchSpace> spaces;
            for (size_t pos = 0; pos < st.order.size();
                 pos += static_cast<size_t>(cfg.train.space)) {
                size_t end = std::min(st.order.size(), pos + static_cast<size_t>(cfg.train.space));
                simgrid::SearchSpace sp;
                sp.indices.assign(st.order.begin() + static_cast<ptrdiff_t>(pos),
                                  st.order.begin() + static_cast<ptrdiff_t>(end));
                spaces.push_back(std::move(sp));
            }

            for (size_t si = 0; si < spaces.size(); ++si) {
                const auto& space = spaces[si];
                const auto msize = space.size();
                if (msize < static_cast<size_t>(cfg.train.batch)) {
                    log_info("skipping short tail space of size " + std::to_string(msize));
                    continue;
                }
                if (st.policy_spec.trainable() && msize < static_cast<size_t>(cfg.scheduler.m)) {
                    log_warn("tail space smaller than scheduler.m, skipped for falcon");
                    continue;
                }

                Mat s = simgrid::build_similarity(st.cache, space);
                std::optional<simgrid::SimilaritySummary> summary;
                std::optional<simgrid::SortedSummary> sorted;
                if (st.policy_spec.trainable()) {
                    summary = simgrid::summarize(s, cfg.scheduler.m);
                    sorted = simgrid::sort_rows(*summary);
                    if (cfg.train.dump_sim) {
                        char nm[64];
                        std::snprintf(nm, sizeof(nm), "epoch_%03lld_space_%02lld.bin.gz",
                                      static_cast<long long>(epoch), static_cast<long long>(si));
                        io::dump_sim({epoch, static_cast<int64_t>(si), s, summary->presoft,
                                      summary->summary},
                                     (fs::path(sim_dir) / nm).string());
                    }
                } else if (cfg.train.dump_sim) {
                    // Baselines have no quantile summary to dump; the raw
                    // matrix is what the replay tooling needs.
                    char nm[64];
                    std::snprintf(nm, sizeof(nm), "epoch_%03lld_space_%02lld.bin.gz",
                                  static_cast<long long>(epoch), static_cast<long long>(si));
                    io::dump_sim({epoch, static_cast<int64_t>(si), s, Mat(), Mat()},
                                 (fs::path(sim_dir) / nm).string());
                }

                std::vector<size_t> unselected(msize);
                for (size_t i = 0; i < msize; ++i) unselected[i] = i;
                const int64_t space_steps =
                    cfg.train.drop_tail
                        ? static_cast<int64_t>(msize) / cfg.train.batch
                        : (static_cast<int64_t>(msize) + cfg.train.batch - 1) / cfg.train.batch;

                for (int64_t k = 0; k < space_steps; ++k) {
                    sched::QuantileAction action;
                    if (st.policy_spec.trainable()) {
                        sched::QuantileAction sorted_action =
                            sched::sample_action(st.policy, sorted->rows, st.rng_action);
                        // Map sampled heads back to original anchor order.
                        action.q.resize(msize);
                        action.alpha.resize(msize);
                        action.beta.resize(msize);
                        action.consumed.assign(msize, 0);
                        action.trainable = true;
                        for (size_t r = 0; r < msize; ++r) {
                            const size_t orig = sorted->perm[r];
                            action.q[orig] = sorted_action.q[r];
                            action.alpha[orig] = sorted_action.alpha[r];
                            action.beta[orig] = sorted_action.beta[r];
                        }
                    } else {
                        action = batcher::baseline_action(st.policy_spec, epoch,
                                                          cfg.train.epochs, msize);
                    }

                    batcher::BatchPlan plan = batcher::compose_batch(
                        s, unselected, static_cast<size_t>(cfg.train.batch), action, st.rng_batch);
                    std::vector<int64_t> ids;
                    ids.reserve(plan.indices.size());
                    for (size_t local : plan.indices) ids.push_back(space.indices[local]);

                    StepRecord rec = vlp_step(st, ids, epoch, warmup_steps, audit_dir);
                    rec.space = static_cast<int64_t>(si);
                    rec.chain_count = static_cast<int64_t>(plan.quantiles_used.size());
                    rec.q_count = rec.chain_count;
                    if (!plan.quantiles_used.empty()) {
                        double s1 = 0.0, s2 = 0.0;
                        for (const auto& [anchor, q] : plan.quantiles_used) {
                            s1 += q;
                            s2 += q * q;
                        }
                        const double n = static_cast<double>(plan.quantiles_used.size());
                        rec.q_mean = s1 / n;
                        const double var = std::max(0.0, s2 / n - rec.q_mean * rec.q_mean);
                        rec.q_std = std::sqrt(var);
                    }

                    double advantage = rec.delta;
                    if (st.policy_spec.trainable()) {
                        if (cfg.scheduler.baseline_ema > 0.0) {
                            advantage = rec.delta - st.reward_baseline;
                            st.reward_baseline = cfg.scheduler.baseline_ema * st.reward_baseline +
                                                 (1.0 - cfg.scheduler.baseline_ema) * rec.delta;
                        }
                        std::vector<sched::ConsumedQuantile> consumed;
                        consumed.reserve(plan.quantiles_used.size());
                        for (const auto& [anchor, q] : plan.quantiles_used)
                            consumed.push_back({sorted->inv[anchor], q});
                        sched::reinforce_update(st.policy, *st.sched_opt, sorted->rows, consumed,
                                                advantage);
                        if (w.sched_trace) {
                            json cons = json::array();
                            for (const auto& [anchor, q] : plan.quantiles_used)
                                cons.push_back(json{{"anchor", anchor},
                                                    {"alpha", action.alpha[anchor]},
                                                    {"beta", action.beta[anchor]},
                                                    {"q", q}});
                            w.sched_trace->record(json{{"step", rec.step},
                                                       {"epoch", epoch},
                                                       {"space", static_cast<int64_t>(si)},
                                                       {"delta", rec.delta},
                                                       {"advantage", advantage},
                                                       {"log_density", plan.log_density},
                                                       {"consumed", cons}});
                        }
                    }

                    write_step(w, rec);
                    if (w.batches)
                        w.batches->record(json{{"step", rec.step},
                                               {"epoch", epoch},
                                               {"space", static_cast<int64_t>(si)},
                                               {"indices", ids},
                                               {"fn_pairs", rec.fn_pairs},
                                               {"fn_chain", rec.fn_chain}});
                    accumulate_epoch(erec, rec);
                    epoch_fn += rec.fn_pairs;
                    epoch_pairs += rec.total_pairs;
                    ++st.global_step;
                }
            }
        }

        refresh_cache(st, epoch);
        st.rng_batch.shuffle(st.order);
        st.epochs_done = epoch + 1;

        finalize_epoch(erec, epoch_fn, epoch_pairs);
        erec.probe_cos = probe_cosine(st);
        erec.lr = lr_at_step(cfg, warmup_steps, st.global_step > 0 ? st.global_step - 1 : 0);
        write_epoch(w, erec);
        result.epochs.push_back(erec);

        io::save_checkpoint(make_checkpoint(st), ckpt_path);
        w.metrics->flush();
        w.timing->flush();
        w.epochs->flush();
        if (w.sched_trace) w.sched_trace->flush();
        if (w.batches) w.batches->flush();
        log_info("epoch " + std::to_string(epoch) + " done, mean mlm " +
                 std::to_string(erec.mean_mlm));
    }

    result.total_steps = st.global_step;
    result.checkpoint_path = ckpt_path;
    if (!opts.ckpt_out.empty()) {
        fs::create_directories(fs::path(opts.ckpt_out).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(opts.ckpt_out).parent_path());
        io::save_checkpoint(make_checkpoint(st), opts.ckpt_out);
    }

    manifest["finished_at"] = io::iso8601_now();
    manifest["status"] = "complete";
    manifest["total_steps"] = result.total_steps;
    io::write_manifest(opts.out_dir, manifest);
    return result;
}

}  // namespace negmine::train
