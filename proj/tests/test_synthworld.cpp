#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "negmine/synthworld.hpp"
#include "oracles.hpp"

using namespace negmine;
namespace fs = std::filesystem;

namespace {

WorldConfig small_world() {
    WorldConfig w;
    w.n_concepts = 6;
    w.n_images = 40;
    w.n_texts = 40;
    w.d_latent = 8;
    w.d_img = 8;
    w.k_text = 6;
    w.vocab = 16;
    w.noise_sigma = 0.1;
    w.max_concepts = 3;
    return w;
}

}  // namespace

TEST_CASE("generation is deterministic in (config, seed)") {
    const WorldConfig w = small_world();
    const auto a = world::generate_universe(w, 9);
    const auto b = world::generate_universe(w, 9);
    const auto c = world::generate_universe(w, 10);
    REQUIRE(a.n_images() == 40);
    CHECK(a.images[5].feature == b.images[5].feature);
    CHECK(a.texts[17].tokens == b.texts[17].tokens);
    CHECK(a.images[5].feature != c.images[5].feature);
}

TEST_CASE("structural invariants of generated worlds") {
    const WorldConfig w = small_world();
    const auto u = world::generate_universe(w, 4);

    for (const auto& img : u.images) {
        CHECK(!img.concept_set.empty());
        CHECK(img.concept_set.size() <= static_cast<size_t>(w.max_concepts));
        CHECK(std::is_sorted(img.concept_set.begin(), img.concept_set.end()));
        CHECK(std::set<int64_t>(img.concept_set.begin(), img.concept_set.end()).size() ==
              img.concept_set.size());
        CHECK(img.feature.size() == static_cast<size_t>(w.d_img));
    }
    for (const auto& txt : u.texts) {
        CHECK(!txt.concept_subset.empty());
        CHECK(txt.tokens.size() == static_cast<size_t>(w.k_text));
        // Subset of the labeled positive image's concepts.
        const auto& pos = u.images[static_cast<size_t>(txt.positive_image)];
        CHECK(std::includes(pos.concept_set.begin(), pos.concept_set.end(),
                            txt.concept_subset.begin(), txt.concept_subset.end()));
        // No token is the mask token; concept tokens decode back exactly.
        for (int64_t tok : txt.tokens) {
            CHECK(tok != world::kMaskToken);
            CHECK(tok < w.vocab);
        }
        CHECK(world::decode_concepts(txt.tokens, w.n_concepts) == txt.concept_subset);
    }
}

TEST_CASE("every labeled positive is compatible (P subset of R)") {
    const auto u = world::generate_universe(small_world(), 21);
    for (const auto& txt : u.texts)
        CHECK(world::is_compatible(u.images[static_cast<size_t>(txt.positive_image)], txt));
}

TEST_CASE("is_compatible is pure set inclusion") {
    world::ImageItem img;
    img.concept_set = {1, 3, 5};
    world::TextItem t;
    t.concept_subset = {3, 5};
    CHECK(world::is_compatible(img, t));
    t.concept_subset = {3, 4};
    CHECK(!world::is_compatible(img, t));
    t.concept_subset = {};
    CHECK(world::is_compatible(img, t));  // empty subset matches everything
}

TEST_CASE("relation_stats equals brute-force enumeration") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        const auto u = world::generate_universe(small_world(), seed);
        const auto st = world::relation_stats(u);
        const auto rc = oracle::enumerate_relation(u);
        CHECK(st.n_relation == rc.n_relation);
        CHECK(st.n_positives == rc.n_positive);
        CHECK(st.n_positives == static_cast<int64_t>(u.n_texts()));
        CHECK(st.rho ==
              doctest::Approx(static_cast<double>(rc.n_relation) / rc.n_cells).epsilon(1e-15));
        CHECK(st.kappa ==
              doctest::Approx(static_cast<double>(rc.n_positive) / rc.n_relation).epsilon(1e-15));
    }
}

TEST_CASE("save/load round-trips the whole universe") {
    const auto u = world::generate_universe(small_world(), 31);
    const auto path = (fs::temp_directory_path() / "negmine_world_test.jsonl").string();
    world::save_world(u, path);
    const auto v = world::load_world(path);

    CHECK(v.seed == u.seed);
    CHECK(v.config.n_concepts == u.config.n_concepts);
    REQUIRE(v.n_images() == u.n_images());
    REQUIRE(v.n_texts() == u.n_texts());
    for (size_t i = 0; i < u.n_images(); ++i) {
        CHECK(v.images[i].concept_set == u.images[i].concept_set);
        CHECK(v.images[i].feature == u.images[i].feature);  // %.17g exactness
    }
    for (size_t t = 0; t < u.n_texts(); ++t) {
        CHECK(v.texts[t].tokens == u.texts[t].tokens);
        CHECK(v.texts[t].positive_image == u.texts[t].positive_image);
    }
    for (size_t c = 0; c < u.concepts.size(); ++c)
        CHECK(v.concepts[c].prototype == u.concepts[c].prototype);

    // Hash is stable across reads and changes with content.
    CHECK(world::world_file_hash(path) == world::world_file_hash(path));
    world::save_world(world::generate_universe(small_world(), 32), path);
    CHECK(world::world_file_hash(path) != 0);
}

TEST_CASE("load_world rejects missing files") {
    CHECK_THROWS_AS(world::load_world("/nonexistent/world.jsonl"), IoError);
}

TEST_CASE("infeasible configs are rejected") {
    WorldConfig w = small_world();
    w.k_text = 1;       // texts can need up to max_concepts=3 concept tokens
    w.max_concepts = 3;
    CHECK_THROWS_AS(world::generate_universe(w, 1), ConfigError);
}
