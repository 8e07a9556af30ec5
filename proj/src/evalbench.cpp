#include "negmine/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "negmine/io.hpp"

namespace negmine::evalb {

namespace fs = std::filesystem;
using nlohmann::json;

double fn_probability(double rho, double kappa) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ContractError("fn_probability: rho outside [0,1]");
    if (!(kappa > 0.0 && kappa <= 1.0)) throw ContractError("fn_probability: kappa outside (0,1]");
    if (kappa * rho >= 1.0) throw ContractError("fn_probability: kappa*rho must be < 1");
    return ((1.0 - kappa) * rho) / (1.0 - kappa * rho);
}

FnRiskCurve measure_fn_rate(const std::string& run_dir, const world::SemanticUniverse& u,
                            int64_t bucket_width) {
    if (bucket_width < 1) throw ContractError("measure_fn_rate: bucket width must be >= 1");
    const std::string traces = (fs::path(run_dir) / "batches.jsonl").string();
    if (!fs::exists(traces))
        throw DataError("incomplete logs: " + traces +
                        " missing (run trained with train.log_batches=false?)");

    std::map<int64_t, FnBucket> buckets;
    for (const json& rec : io::read_jsonl(traces)) {
        const int64_t step = rec.at("step").get<int64_t>();
        const auto ids = rec.at("indices").get<std::vector<int64_t>>();
        int64_t fn = 0;
        for (size_t a = 0; a < ids.size(); ++a)
            for (size_t b = 0; b < ids.size(); ++b) {
                if (a == b) continue;
                if (world::is_compatible(u.images[static_cast<size_t>(ids[a])],
                                         u.texts[static_cast<size_t>(ids[b])]))
                    ++fn;
            }
        const int64_t key = step / bucket_width;
        FnBucket& bk = buckets[key];
        bk.step_lo = key * bucket_width;
        bk.step_hi = (key + 1) * bucket_width;
        bk.steps += 1;
        bk.fn_pairs += fn;
        bk.total_pairs += static_cast<int64_t>(ids.size() * (ids.size() - 1));
    }
    if (buckets.empty()) throw DataError("incomplete logs: no batch records in " + traces);

    FnRiskCurve curve;
    for (auto& [key, bk] : buckets) {
        bk.rate = bk.total_pairs > 0
                      ? static_cast<double>(bk.fn_pairs) / static_cast<double>(bk.total_pairs)
                      : 0.0;
        curve.buckets.push_back(bk);
    }
    return curve;
}

std::vector<int64_t> rank_candidates(const std::vector<double>& scores,
                                     const std::vector<int64_t>& ids) {
    if (scores.size() != ids.size()) throw ContractError("rank_candidates: length mismatch");
    std::vector<size_t> ord(ids.size());
    std::iota(ord.begin(), ord.end(), size_t{0});
    std::sort(ord.begin(), ord.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<int64_t> out(ids.size());
    for (size_t i = 0; i < ord.size(); ++i) out[i] = ids[ord[i]];
    return out;
}

const RecallRow& RecallReport::at_k(int64_t k) const {
    for (const auto& r : rows)
        if (r.k == k) return r;
    throw ContractError("recall report has no row for k=" + std::to_string(k));
}

RecallReport recall_at_k(const towers::ModelParams& model, const world::SemanticUniverse& u,
                         const std::vector<int64_t>& eval_ids, const std::vector<int64_t>& ks) {
    if (eval_ids.empty()) throw ContractError("recall_at_k: empty eval split");
    if (ks.empty()) throw ContractError("recall_at_k: no recall levels requested");
    const size_t n = eval_ids.size();
    const auto d = static_cast<size_t>(model.dims.d_emb);

    // Embed the split in fixed chunks (per-item outputs are chunk-invariant).
    Mat img(n, d), txt(n, d);
    const size_t chunk = 128;
    for (size_t lo = 0; lo < n; lo += chunk) {
        const size_t hi = std::min(n, lo + chunk);
        std::vector<int64_t> ids(eval_ids.begin() + static_cast<ptrdiff_t>(lo),
                                 eval_ids.begin() + static_cast<ptrdiff_t>(hi));
        towers::BatchData batch = towers::make_batch(u, ids);
        towers::EmbedResult emb = towers::embed(model, batch);
        for (size_t r = 0; r < ids.size(); ++r) {
            std::copy(emb.u.row(r), emb.u.row(r) + d, img.row(lo + r));
            std::copy(emb.v.row(r), emb.v.row(r) + d, txt.row(lo + r));
        }
    }

    RecallReport report;
    const int64_t max_k = ks.back();
    std::vector<double> scores(n);

    // hits[direction][criterion][k index]
    std::vector<std::vector<int64_t>> hits_strict(2, std::vector<int64_t>(ks.size(), 0));
    std::vector<std::vector<int64_t>> hits_compat(2, std::vector<int64_t>(ks.size(), 0));

    for (size_t qi = 0; qi < n; ++qi) {
        for (int dir = 0; dir < 2; ++dir) {
            // dir 0: T2I (text query over images); dir 1: I2T.
            for (size_t c = 0; c < n; ++c)
                scores[c] = dir == 0 ? dot(img.row(c), txt.row(qi), d)
                                     : dot(img.row(qi), txt.row(c), d);
            std::vector<int64_t> ranked = rank_candidates(scores, eval_ids);

            const int64_t query_id = eval_ids[qi];
            for (size_t kidx = 0; kidx < ks.size(); ++kidx) {
                const auto kk = static_cast<size_t>(std::min<int64_t>(ks[kidx], max_k));
                bool strict = false, compat = false;
                for (size_t r = 0; r < std::min(kk, ranked.size()); ++r) {
                    const int64_t cand = ranked[r];
                    if (cand == query_id) strict = true;
                    const bool ok =
                        dir == 0 ? world::is_compatible(u.images[static_cast<size_t>(cand)],
                                                        u.texts[static_cast<size_t>(query_id)])
                                 : world::is_compatible(u.images[static_cast<size_t>(query_id)],
                                                        u.texts[static_cast<size_t>(cand)]);
                    if (ok) compat = true;
                }
                hits_strict[static_cast<size_t>(dir)][kidx] += strict ? 1 : 0;
                hits_compat[static_cast<size_t>(dir)][kidx] += compat ? 1 : 0;
            }
        }
    }

    for (size_t kidx = 0; kidx < ks.size(); ++kidx) {
        RecallRow row;
        row.k = ks[kidx];
        const double denom = static_cast<double>(n) / 100.0;
        row.strict_t2i = static_cast<double>(hits_strict[0][kidx]) / denom;
        row.strict_i2t = static_cast<double>(hits_strict[1][kidx]) / denom;
        row.strict_avg = 0.5 * (row.strict_t2i + row.strict_i2t);
        row.compat_t2i = static_cast<double>(hits_compat[0][kidx]) / denom;
        row.compat_i2t = static_cast<double>(hits_compat[1][kidx]) / denom;
        row.compat_avg = 0.5 * (row.compat_t2i + row.compat_i2t);
        report.rows.push_back(row);
    }
    return report;
}

double final_fn_rate(const std::string& run_dir) {
    io::CsvData m = io::read_csv((fs::path(run_dir) / "metrics.csv").string());
    if (m.rows.empty()) throw DataError("metrics.csv has no rows in " + run_dir);
    const size_t c_fn = m.col("fn_pairs");
    const size_t c_tot = m.col("total_pairs");
    const size_t start = m.rows.size() - m.rows.size() / 4;
    int64_t fn = 0, tot = 0;
    for (size_t i = start; i < m.rows.size(); ++i) {
        fn += std::stoll(m.rows[i][c_fn]);
        tot += std::stoll(m.rows[i][c_tot]);
    }
    if (tot == 0) throw DataError("no pairs counted in the final quarter of " + run_dir);
    return static_cast<double>(fn) / static_cast<double>(tot);
}

namespace {

struct RunInfo {
    std::string dir;
    std::string policy;
    uint64_t world_hash = 0;
    std::string world_path;
    int64_t n_train = 0;
    double strict_r1 = 0.0;
    double compat_r1 = 0.0;
    double final_fn = 0.0;
};

void mean_std(const std::vector<double>& xs, double& mean, double& std) {
    mean = 0.0;
    std = 0.0;
    if (xs.empty()) return;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return;
    double s2 = 0.0;
    for (double x : xs) s2 += (x - mean) * (x - mean);
    std = std::sqrt(s2 / static_cast<double>(xs.size() - 1));
}

}  // namespace

ComparisonTable compare_policies(const std::vector<std::string>& run_dirs) {
    if (run_dirs.size() < 2) throw ContractError("compare_policies: need at least 2 runs");

    std::vector<RunInfo> runs;
    for (const auto& dir : run_dirs) {
        json man = io::read_manifest(dir);
        if (man.value("status", "") != "complete")
            throw DataError("run not complete: " + dir);
        RunInfo ri;
        ri.dir = dir;
        ri.policy = man.at("policy").get<std::string>();
        ri.world_hash = man.at("world_hash").get<uint64_t>();
        ri.world_path = man.at("world_path").get<std::string>();
        ri.n_train = man.at("n_train").get<int64_t>();
        runs.push_back(std::move(ri));
    }
    for (const auto& r : runs)
        if (r.world_hash != runs[0].world_hash)
            throw DataError("incomparable runs: world hash differs between " + runs[0].dir +
                            " and " + r.dir);

    // One world load serves every run (hashes match).
    world::SemanticUniverse u = world::load_world(runs[0].world_path);
    const int64_t n_pairs = static_cast<int64_t>(u.n_images());

    for (auto& r : runs) {
        json man = io::read_manifest(r.dir);
        const auto cfg_map = man.at("config").get<std::map<std::string, std::string>>();
        RunConfig cfg;
        for (const auto& [k, v] : cfg_map) config_set(cfg, k, v);
        const std::vector<int64_t> ks = parse_ks(cfg.eval.ks);

        std::vector<int64_t> eval_ids;
        for (int64_t i = r.n_train; i < n_pairs; ++i) eval_ids.push_back(i);
        if (eval_ids.empty()) throw DataError("run has no eval split: " + r.dir);

        io::Checkpoint ck =
            io::load_checkpoint((fs::path(r.dir) / "checkpoint.bin").string());
        RecallReport rep = recall_at_k(ck.model, u, eval_ids, ks);
        r.strict_r1 = rep.at_k(1).strict_avg;
        r.compat_r1 = rep.at_k(1).compat_avg;
        r.final_fn = final_fn_rate(r.dir);
    }

    std::map<std::string, std::vector<const RunInfo*>> by_policy;
    for (const auto& r : runs) by_policy[r.policy].push_back(&r);

    ComparisonTable table;
    for (const auto& [policy, rs] : by_policy) {
        PolicySummary ps;
        ps.policy = policy;
        ps.n_runs = static_cast<int64_t>(rs.size());
        std::vector<double> strict, compat, fn;
        for (const auto* r : rs) {
            strict.push_back(r->strict_r1);
            compat.push_back(r->compat_r1);
            fn.push_back(r->final_fn);
        }
        ps.strict_r1 = strict;
        mean_std(strict, ps.strict_r1_mean, ps.strict_r1_std);
        mean_std(compat, ps.compat_r1_mean, ps.compat_r1_std);
        mean_std(fn, ps.final_fn_mean, ps.final_fn_std);
        table.policies.push_back(std::move(ps));
    }
    // std::map iteration is already lexicographic; keep the explicit contract.
    std::sort(table.policies.begin(), table.policies.end(),
              [](const PolicySummary& a, const PolicySummary& b) { return a.policy < b.policy; });

    for (size_t a = 0; a < table.policies.size(); ++a)
        for (size_t b = a + 1; b < table.policies.size(); ++b) {
            PairwiseDiff d;
            d.policy_a = table.policies[a].policy;
            d.policy_b = table.policies[b].policy;
            d.strict_r1_diff = table.policies[a].strict_r1_mean - table.policies[b].strict_r1_mean;
            d.compat_r1_diff = table.policies[a].compat_r1_mean - table.policies[b].compat_r1_mean;
            d.final_fn_diff = table.policies[a].final_fn_mean - table.policies[b].final_fn_mean;
            table.diffs.push_back(std::move(d));
        }
    return table;
}

void write_recall_csv(const RecallReport& r, const std::string& path, uint64_t config_hash) {
    io::CsvWriter w(path,
                    {"k", "strict_t2i", "strict_i2t", "strict_avg", "compat_t2i", "compat_i2t",
                     "compat_avg"},
                    config_hash);
    for (const auto& row : r.rows)
        w.row({std::to_string(row.k), io::fmt_double(row.strict_t2i),
               io::fmt_double(row.strict_i2t), io::fmt_double(row.strict_avg),
               io::fmt_double(row.compat_t2i), io::fmt_double(row.compat_i2t),
               io::fmt_double(row.compat_avg)});
}

void write_fn_curve_csv(const FnRiskCurve& c, const std::string& path, uint64_t config_hash) {
    io::CsvWriter w(path, {"step_lo", "step_hi", "steps", "fn_pairs", "total_pairs", "fn_rate"},
                    config_hash);
    for (const auto& b : c.buckets)
        w.row({std::to_string(b.step_lo), std::to_string(b.step_hi), std::to_string(b.steps),
               std::to_string(b.fn_pairs), std::to_string(b.total_pairs),
               io::fmt_double(b.rate)});
}

void write_compare_csv(const ComparisonTable& t, const std::string& path, uint64_t config_hash) {
    io::CsvWriter w(path,
                    {"row", "policy", "n_runs", "strict_r1_mean", "strict_r1_std",
                     "compat_r1_mean", "compat_r1_std", "final_fn_mean", "final_fn_std"},
                    config_hash);
    for (const auto& p : t.policies)
        w.row({"policy", p.policy, std::to_string(p.n_runs), io::fmt_double(p.strict_r1_mean),
               io::fmt_double(p.strict_r1_std), io::fmt_double(p.compat_r1_mean),
               io::fmt_double(p.compat_r1_std), io::fmt_double(p.final_fn_mean),
               io::fmt_double(p.final_fn_std)});
    for (const auto& d : t.diffs)
        w.row({"diff", d.policy_a + " vs " + d.policy_b, "", io::fmt_double(d.strict_r1_diff), "",
               io::fmt_double(d.compat_r1_diff), "", io::fmt_double(d.final_fn_diff), ""});
}

}  // namespace negmine::evalb
