#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "negmine/config.hpp"

using namespace negmine;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& text) {
    const auto path = fs::temp_directory_path() / "negmine_cfg_test.txt";
    std::ofstream out(path);
    out << text;
    return path.string();
}

}  // namespace

TEST_CASE("defaults validate and round-trip through the registry") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    for (const auto& key : config_keys()) {
        const std::string v = config_get(cfg, key.name);
        RunConfig other;
        config_set(other, key.name, v);
        CHECK(config_get(other, key.name) == v);
    }
}

TEST_CASE("get/set unknown key lists valid keys") {
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(config_set(cfg, "nope", "1"),
                         doctest::Contains("valid keys"), ConfigError);
    CHECK_THROWS_AS(config_get(cfg, "nope"), ConfigError);
}

TEST_CASE("typed parsing is strict") {
    RunConfig cfg;
    CHECK_THROWS_AS(config_set(cfg, "train.epochs", "abc"), ConfigError);
    CHECK_THROWS_AS(config_set(cfg, "train.epochs", "3.5"), ConfigError);
    CHECK_THROWS_AS(config_set(cfg, "train.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(config_set(cfg, "train.drop_tail", "maybe"), ConfigError);
    config_set(cfg, "train.drop_tail", "false");
    CHECK(cfg.train.drop_tail == false);
    config_set(cfg, "scheduler.lr", "1e-4");
    CHECK(cfg.scheduler.lr == 1e-4);
}

TEST_CASE("config file parsing: comments, blanks, duplicates") {
    RunConfig cfg;
    load_config_file(cfg, write_temp("# comment\n\ntrain.epochs = 7\n  model.hidden=128 \n"));
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.model.hidden == 128);

    RunConfig dup;
    CHECK_THROWS_WITH_AS(
        load_config_file(dup, write_temp("train.epochs = 7\ntrain.epochs = 8\n")),
        doctest::Contains("train.epochs"), ConfigError);

    RunConfig empty;
    load_config_file(empty, write_temp(""));
    CHECK(config_hash(empty) == config_hash(RunConfig{}));
}

TEST_CASE("dump_config parses back to an identical config") {
    RunConfig cfg;
    cfg.train.epochs = 9;
    cfg.world.noise_sigma = 0.25;
    cfg.train.policy = "fixed:0.75";
    const std::string path = write_temp(dump_config(cfg));
    RunConfig back;
    load_config_file(back, path);
    CHECK(config_hash(back) == config_hash(cfg));
}

TEST_CASE("apply_overrides and hash sensitivity") {
    RunConfig cfg;
    apply_overrides(cfg, {"train.epochs=3", "eval.ks=1,2"});
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.eval.ks == "1,2");
    CHECK_THROWS_AS(apply_overrides(cfg, {"no-equals-sign"}), ConfigError);

    RunConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.train.seed = 2;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("validation rejects bad combinations") {
    RunConfig cfg;
    cfg.world.d_img = 16;  // != d_latent
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    RunConfig small;
    small.world.vocab = small.world.n_concepts + 1;  // no filler room
    CHECK_THROWS_AS(small.validate(), ConfigError);

    RunConfig space;
    space.train.space = 16;  // < batch
    CHECK_THROWS_AS(space.validate(), ConfigError);

    RunConfig m;
    m.scheduler.m = 1000;  // > space
    CHECK_THROWS_AS(m.validate(), ConfigError);

    RunConfig split;
    split.eval.count = split.world.n_images;  // nothing left to train on
    CHECK_THROWS_AS(split.validate(), ConfigError);
}

TEST_CASE("parse_ks demands strictly increasing positives") {
    CHECK(parse_ks("1,5,10") == std::vector<int64_t>{1, 5, 10});
    CHECK(parse_ks("3") == std::vector<int64_t>{3});
    CHECK_THROWS_AS(parse_ks(""), ConfigError);
    CHECK_THROWS_AS(parse_ks("5,5"), ConfigError);
    CHECK_THROWS_AS(parse_ks("5,1"), ConfigError);
    CHECK_THROWS_AS(parse_ks("0,5"), ConfigError);
    CHECK_THROWS_AS(parse_ks("1,x"), ConfigError);
}

TEST_CASE("snapshot covers every registered key exactly once") {
    RunConfig cfg;
    const auto snap = config_snapshot(cfg);
    CHECK(snap.size() == config_keys().size());
    for (const auto& key : config_keys()) CHECK(snap.count(key.name) == 1);
}
