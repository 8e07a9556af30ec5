#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "negmine/io.hpp"
#include "negmine/rng.hpp"

using namespace negmine;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& leaf) {
    const fs::path dir = fs::path("io_scratch");
    fs::create_directories(dir);
    return dir / leaf;
}

towers::ModelParams tiny_model(uint64_t seed) {
    towers::TowerDims dims;
    dims.d_img = 4;
    dims.d_emb = 3;
    dims.hidden = 5;
    dims.k_text = 4;
    dims.vocab = 8;
    RngStream rng(seed);
    return towers::ModelParams::init(dims, 0.07, 0.1, rng);
}

sched::SchedulerPolicy tiny_policy(uint64_t seed) {
    SchedulerConfig cfg;
    cfg.m = 4;
    cfg.hidden = 6;
    cfg.blocks = 1;
    RngStream rng(seed);
    return sched::SchedulerPolicy::init(cfg, rng);
}

bool same_mat(const Mat& a, const Mat& b) {
    return a.rows == b.rows && a.cols == b.cols && a.a == b.a;
}

bool same_model(towers::ModelParams& a, towers::ModelParams& b) {
    auto ba = a.blocks();
    auto bb = b.blocks();
    if (ba.size() != bb.size()) return false;
    for (size_t i = 0; i < ba.size(); ++i)
        if (ba[i].name != bb[i].name || !same_mat(*ba[i].param, *bb[i].param)) return false;
    return a.temperature == b.temperature && a.label_smoothing == b.label_smoothing;
}

Mat random_mat(size_t r, size_t c, RngStream& rng) {
    Mat m(r, c);
    for (double& x : m.a) x = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("fmt_double survives a parse round trip bit-for-bit") {
    RngStream rng(71);
    std::vector<double> probes = {0.0,    1.0,       -1.0,     1.0 / 3.0, 0.1,  1e-300,
                                  1e300,  2.2250738585072014e-308,        M_PI, 6.02e23,
                                  -7.25e-12};
    for (int i = 0; i < 200; ++i) probes.push_back(std::exp(40.0 * (rng.uniform() - 0.5)));
    for (double x : probes) {
        const double back = std::strtod(io::fmt_double(x).c_str(), nullptr);
        CHECK(back == x);
    }
    CHECK(io::fmt_double(1.0) == "1");
    CHECK(io::fmt_double(0.5) == "0.5");
}

TEST_CASE("CsvWriter stamps the config hash and enforces row width") {
    const auto path = scratch("w.csv");
    {
        io::CsvWriter w(path.string(), {"a", "b", "c"}, 0xdeadbeefULL);
        w.row({"1", "2", "3"});
        w.row({"x", "", "z"});
        CHECK_THROWS_AS(w.row({"1", "2"}), ContractError);
        w.flush();
    }
    std::ifstream in(path);
    std::string l0, l1, l2, l3;
    std::getline(in, l0);
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l0 == "# config_hash=00000000deadbeef");
    CHECK(l1 == "a,b,c");
    CHECK(l2 == "1,2,3");
    CHECK(l3 == "x,,z");

    const auto d = io::read_csv(path.string());
    CHECK(d.header == std::vector<std::string>({"a", "b", "c"}));
    REQUIRE(d.rows.size() == 2);
    CHECK(d.rows[1][1] == "");
    CHECK(d.col("b") == 1);
    CHECK_THROWS_AS(d.col("nope"), DataError);
    CHECK_THROWS_AS(io::read_csv(scratch("absent.csv").string()), IoError);
}

TEST_CASE("jsonl round trip keeps order and content") {
    const auto path = scratch("r.jsonl");
    {
        io::JsonlWriter w(path.string());
        w.record({{"step", 1}, {"ids", {3, 1, 2}}});
        w.record({{"step", 2}, {"note", "x,y\nz"}});
        w.flush();
    }
    const auto rows = io::read_jsonl(path.string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["ids"] == json({3, 1, 2}));
    CHECK(rows[1]["note"] == "x,y\nz");

    std::ofstream(path, std::ios::app) << "{broken\n";
    CHECK_THROWS_AS(io::read_jsonl(path.string()), DataError);
}

TEST_CASE("manifest writes are atomic replacements") {
    const auto dir = scratch("runA");
    io::write_manifest(dir.string(), {{"status", "running"}, {"seed", 7}});
    io::write_manifest(dir.string(), {{"status", "complete"}, {"seed", 7}});
    const auto m = io::read_manifest(dir.string());
    CHECK(m["status"] == "complete");
    CHECK(m["seed"] == 7);
    CHECK(!fs::exists(dir / "manifest.json.tmp"));
    CHECK_THROWS_AS(io::read_manifest(scratch("no_such_run").string()), IoError);
}

TEST_CASE("checkpoint save/load is bit-exact across every field") {
    RngStream rng(72);
    io::Checkpoint ck;
    ck.world_hash = 0x1122334455667788ULL;
    ck.config_hash = 0x99aabbccddeeff00ULL;
    ck.epochs_completed = 3;
    ck.global_step = 217;
    ck.policy_name = "fixed:0.7";
    ck.global_order = {5, 0, 3, 1, 4, 2};
    ck.rng_states = {{"batching", "0a0b0c"}, {"masking", "ffee"}};
    ck.model = tiny_model(73);
    ck.scheduler = tiny_policy(74);
    ck.reward_baseline = -0.0625;

    for (auto& b : ck.model.blocks()) {
        ck.vlp_opt.m.push_back(random_mat(b.param->rows, b.param->cols, rng));
        ck.vlp_opt.v.push_back(random_mat(b.param->rows, b.param->cols, rng));
    }
    ck.vlp_opt.t = 217;
    for (auto& b : ck.scheduler.blocks()) {
        ck.sched_opt.m.push_back(random_mat(b.param->rows, b.param->cols, rng));
        ck.sched_opt.v.push_back(random_mat(b.param->rows, b.param->cols, rng));
    }
    ck.sched_opt.t = 31;

    const auto path = scratch("ck.bin");
    io::save_checkpoint(ck, path.string());
    auto back = io::load_checkpoint(path.string());

    CHECK(back.world_hash == ck.world_hash);
    CHECK(back.config_hash == ck.config_hash);
    CHECK(back.epochs_completed == 3);
    CHECK(back.global_step == 217);
    CHECK(back.policy_name == "fixed:0.7");
    CHECK(back.global_order == ck.global_order);
    CHECK(back.rng_states == ck.rng_states);
    CHECK(back.reward_baseline == ck.reward_baseline);
    CHECK(same_model(back.model, ck.model));

    CHECK(back.vlp_opt.t == 217);
    REQUIRE(back.vlp_opt.m.size() == ck.vlp_opt.m.size());
    for (size_t i = 0; i < ck.vlp_opt.m.size(); ++i) {
        CHECK(same_mat(back.vlp_opt.m[i], ck.vlp_opt.m[i]));
        CHECK(same_mat(back.vlp_opt.v[i], ck.vlp_opt.v[i]));
    }

    CHECK(back.scheduler.m == 4);
    CHECK(back.scheduler.h == 6);
    CHECK(back.scheduler.n_blocks == 1);
    auto sa = back.scheduler.blocks();
    auto sb = ck.scheduler.blocks();
    for (size_t i = 0; i < sa.size(); ++i) CHECK(same_mat(*sa[i].param, *sb[i].param));
    CHECK(back.sched_opt.t == 31);

    // A foreign file is rejected, a truncated one detected.
    const auto junk = scratch("junk.bin");
    std::ofstream(junk, std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_AS(io::load_checkpoint(junk.string()), DataError);
    {
        std::ifstream full(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(full)), {});
        std::ofstream cut(scratch("cut.bin"), std::ios::binary);
        cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(io::load_checkpoint(scratch("cut.bin").string()), DataError);
}

TEST_CASE("audit records round trip, mask included") {
    io::AuditRecord rec;
    rec.step = 42;
    rec.epoch = 2;
    rec.delta = 0.015625;
    rec.mlm_before = 2.5;
    rec.mlm_after = 2.484375;
    rec.batch_ids = {9, 4, 17, 3};
    rec.mask.batch = 4;
    rec.mask.k = 4;
    rec.mask.p_mask = 0.5;
    rec.mask.flags = {1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1};
    rec.model_before = tiny_model(75);
    rec.model_after = tiny_model(76);

    const auto path = scratch("audit.bin");
    io::save_audit(rec, path.string());
    auto back = io::load_audit(path.string());
    CHECK(back.step == 42);
    CHECK(back.epoch == 2);
    CHECK(back.delta == rec.delta);
    CHECK(back.mlm_before == rec.mlm_before);
    CHECK(back.mlm_after == rec.mlm_after);
    CHECK(back.batch_ids == rec.batch_ids);
    CHECK(back.mask.flags == rec.mask.flags);
    CHECK(back.mask.fingerprint() == rec.mask.fingerprint());
    CHECK(same_model(back.model_before, rec.model_before));
    CHECK(same_model(back.model_after, rec.model_after));
}

TEST_CASE("similarity dumps survive gzip round trips") {
    RngStream rng(77);
    io::SimDump d;
    d.epoch = 5;
    d.space = 2;
    d.raw = random_mat(9, 9, rng);
    d.presoft = random_mat(9, 4, rng);
    d.summary = random_mat(9, 4, rng);

    const auto path = scratch("sim.bin.gz");
    io::dump_sim(d, path.string());
    const auto back = io::load_sim(path.string());
    CHECK(back.epoch == 5);
    CHECK(back.space == 2);
    CHECK(same_mat(back.raw, d.raw));
    CHECK(same_mat(back.presoft, d.presoft));
    CHECK(same_mat(back.summary, d.summary));

    // Baseline dumps carry an empty summary; that must round trip too.
    io::SimDump plain;
    plain.raw = random_mat(5, 5, rng);
    const auto p2 = scratch("sim_plain.bin.gz");
    io::dump_sim(plain, p2.string());
    const auto back2 = io::load_sim(p2.string());
    CHECK(same_mat(back2.raw, plain.raw));
    CHECK(back2.presoft.size() == 0);

    // Truncation is caught, not silently zero-filled.
    {
        std::ifstream full(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(full)), {});
        std::ofstream cut(scratch("sim_cut.bin.gz"), std::ios::binary);
        cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 20));
    }
    CHECK_THROWS_AS(io::load_sim(scratch("sim_cut.bin.gz").string()), DataError);
    CHECK_THROWS_AS(io::load_sim(scratch("absent.bin.gz").string()), IoError);
}

TEST_CASE("iso8601_now looks like a UTC timestamp") {
    const auto t = io::iso8601_now();
    REQUIRE(t.size() == 20);
    CHECK(t[4] == '-');
    CHECK(t[7] == '-');
    CHECK(t[10] == 'T');
    CHECK(t[13] == ':');
    CHECK(t[16] == ':');
    CHECK(t.back() == 'Z');
}
