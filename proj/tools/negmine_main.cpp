// negmine: data-centric batch construction workbench.
//
//   gen-world   synthesize a ground-truth universe and write world.jsonl
//   train       run the simulator training loop into an output directory
//   eval        compute recall + false-negative curve for a finished run
//   compare     aggregate several runs into a policy comparison table
//   config      print the documented default configuration
//
// Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "negmine/common.hpp"
#include "negmine/config.hpp"
#include "negmine/evalbench.hpp"
#include "negmine/io.hpp"
#include "negmine/synthworld.hpp"
#include "negmine/trainloop.hpp"

namespace fs = std::filesystem;
using namespace negmine;

namespace {

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& sets) {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    apply_overrides(cfg, sets);
    return cfg;
}

RunConfig config_from_manifest(const nlohmann::json& man) {
    RunConfig cfg;
    for (const auto& [k, v] : man.at("config").get<std::map<std::string, std::string>>())
        config_set(cfg, k, v);
    return cfg;
}

void cmd_gen_world(const std::string& world_out, uint64_t seed,
                   const std::string& config_path, const std::vector<std::string>& sets) {
    RunConfig cfg = resolve_config(config_path, sets);
    cfg.validate();
    world::SemanticUniverse u = world::generate_universe(cfg.world, seed);
    world::RelationStats st = world::relation_stats(u);
    world::save_world(u, world_out);
    std::printf("wrote %s: %lld images, %lld texts, rho=%.6f kappa=%.6f\n", world_out.c_str(),
                static_cast<long long>(u.n_images()), static_cast<long long>(u.n_texts()),
                st.rho, st.kappa);
}

void cmd_train(const train::TrainOptions& opts, RunConfig cfg) {
    train::TrainResult res = train::run_training(cfg, opts);
    const train::EpochRecord& last = res.epochs.back();
    std::printf("run complete: %lld steps over %zu epochs\n",
                static_cast<long long>(res.total_steps), res.epochs.size());
    std::printf("final epoch: mlm %.6f, fn rate %.6f, probe cos %.6f\n", last.mean_mlm,
                last.fn_rate, last.probe_cos);
    std::printf("checkpoint: %s\n", res.checkpoint_path.c_str());
}

void cmd_eval(const std::string& run_dir, const std::string& world_override) {
    nlohmann::json man = io::read_manifest(run_dir);
    if (man.value("status", "") != "complete")
        throw DataError("run not complete: " + run_dir);
    RunConfig cfg = config_from_manifest(man);
    const uint64_t cfg_hash = config_hash(cfg);

    const std::string world_path =
        world_override.empty() ? man.at("world_path").get<std::string>() : world_override;
    const uint64_t want_hash = man.at("world_hash").get<uint64_t>();
    if (world::world_file_hash(world_path) != want_hash)
        throw DataError("world file " + world_path + " does not match the run's world hash");
    world::SemanticUniverse u = world::load_world(world_path);

    const int64_t n_train = man.at("n_train").get<int64_t>();
    std::vector<int64_t> eval_ids;
    for (int64_t i = n_train; i < static_cast<int64_t>(u.n_images()); ++i) eval_ids.push_back(i);
    if (eval_ids.empty()) throw DataError("run has no held-out eval split");

    io::Checkpoint ck = io::load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string());
    evalb::RecallReport rep = evalb::recall_at_k(ck.model, u, eval_ids, parse_ks(cfg.eval.ks));
    evalb::write_recall_csv(rep, (fs::path(run_dir) / "recall.csv").string(), cfg_hash);
    for (const auto& r : rep.rows)
        std::printf("R@%-3lld strict %6.2f (t2i %6.2f / i2t %6.2f)  compat %6.2f\n",
                    static_cast<long long>(r.k), r.strict_avg, r.strict_t2i, r.strict_i2t,
                    r.compat_avg);

    evalb::FnRiskCurve curve = evalb::measure_fn_rate(run_dir, u, cfg.eval.bucket);
    evalb::write_fn_curve_csv(curve, (fs::path(run_dir) / "fn_curve.csv").string(), cfg_hash);
    std::printf("fn rate: first bucket %.6f, last bucket %.6f (%zu buckets)\n",
                curve.buckets.front().rate, curve.buckets.back().rate, curve.buckets.size());
    std::printf("wrote recall.csv and fn_curve.csv under %s\n", run_dir.c_str());
}

void cmd_compare(const std::vector<std::string>& runs, const std::string& out_path) {
    if (runs.size() < 2) throw ConfigError("compare needs at least two --runs directories");
    evalb::ComparisonTable table = evalb::compare_policies(runs);

    // Stamp the comparison with a hash over the per-run config hashes so the
    // output is tied to the exact set of runs it summarizes.
    std::vector<uint64_t> hashes;
    for (const auto& dir : runs)
        hashes.push_back(io::read_manifest(dir).at("config_hash").get<uint64_t>());
    std::sort(hashes.begin(), hashes.end());
    std::string blob;
    for (uint64_t h : hashes) blob += std::to_string(h) + "\n";
    evalb::write_compare_csv(table, out_path, fnv1a(blob.data(), blob.size()));

    for (const auto& p : table.policies)
        std::printf("%-12s n=%lld  strict R@1 %6.2f ± %.2f  compat R@1 %6.2f ± %.2f  fn %.4f\n",
                    p.policy.c_str(), static_cast<long long>(p.n_runs), p.strict_r1_mean,
                    p.strict_r1_std, p.compat_r1_mean, p.compat_r1_std, p.final_fn_mean);
    std::printf("wrote %s\n", out_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"negmine: batch-construction policies for contrastive pretraining, desk scale"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    // gen-world ----------------------------------------------------------
    auto* gw = app.add_subcommand("gen-world", "Synthesize a universe and write world.jsonl");
    std::string gw_out;
    uint64_t gw_seed = 7;
    std::string gw_config;
    std::vector<std::string> gw_sets;
    gw->add_option("--world-out", gw_out, "Output world file")->required();
    gw->add_option("--seed", gw_seed, "World generation seed")->capture_default_str();
    gw->add_option("--config", gw_config, "Flat key=value config file");
    gw->add_option("--set", gw_sets, "Override one config key (key=value), repeatable");

    // train --------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train on a generated world");
    train::TrainOptions topts;
    std::string tr_config, tr_policy;
    uint64_t tr_seed = 0;
    bool tr_dump_sim = false;
    std::vector<std::string> tr_sets;
    tr->add_option("--world", topts.world_path, "Path to world.jsonl")->required();
    tr->add_option("--out", topts.out_dir, "Run output directory")->required();
    tr->add_option("--config", tr_config, "Flat key=value config file");
    CLI::Option* tr_policy_opt = tr->add_option(
        "--policy", tr_policy, "Batch policy: falcon|uniform|hardening|softening|fixed:<q>");
    CLI::Option* tr_seed_opt = tr->add_option("--seed", tr_seed, "Master training seed");
    tr->add_option("--ckpt-in", topts.ckpt_in, "Resume from this checkpoint");
    tr->add_option("--ckpt-out", topts.ckpt_out, "Copy the final checkpoint here");
    tr->add_flag("--dump-sim", tr_dump_sim, "Dump per-space similarity matrices");
    tr->add_option("--set", tr_sets, "Override one config key (key=value), repeatable");

    // eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Recall and FN curve for a finished run");
    std::string ev_run, ev_world;
    ev->add_option("--run", ev_run, "Run directory (with manifest.json)")->required();
    ev->add_option("--world", ev_world, "World file (defaults to the manifest's path)");

    // compare ------------------------------------------------------------
    auto* cp = app.add_subcommand("compare", "Aggregate runs into a policy table");
    std::vector<std::string> cp_runs;
    std::string cp_out = "compare.csv";
    cp->add_option("--runs", cp_runs, "Run directories (two or more)")->required();
    cp->add_option("--out", cp_out, "Output CSV path")->capture_default_str();

    // config -------------------------------------------------------------
    auto* cf = app.add_subcommand("config", "Print configuration");
    bool cf_defaults = false;
    std::string cf_config;
    std::vector<std::string> cf_sets;
    cf->add_flag("--defaults", cf_defaults, "Print the full default config");
    cf->add_option("--config", cf_config, "Resolve and print this config file");
    cf->add_option("--set", cf_sets, "Override one config key (key=value), repeatable");

    try {
        app.parse(argc, argv);

        if (gw->parsed()) {
            cmd_gen_world(gw_out, gw_seed, gw_config, gw_sets);
        } else if (tr->parsed()) {
            RunConfig cfg = resolve_config(tr_config, tr_sets);
            if (*tr_policy_opt) cfg.train.policy = tr_policy;
            if (*tr_seed_opt) cfg.train.seed = tr_seed;
            if (tr_dump_sim) cfg.train.dump_sim = true;
            cmd_train(topts, cfg);
        } else if (ev->parsed()) {
            cmd_eval(ev_run, ev_world);
        } else if (cp->parsed()) {
            cmd_compare(cp_runs, cp_out);
        } else if (cf->parsed()) {
            RunConfig cfg = resolve_config(cf_config, cf_sets);
            (void)cf_defaults;  // `config` with no flags also prints defaults
            std::fputs(dump_config(cfg).c_str(), stdout);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // normalize usage errors; help stays 0
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 1;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 2;
    }
}
