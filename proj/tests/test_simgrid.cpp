#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "negmine/rng.hpp"
#include "negmine/simgrid.hpp"
#include "oracles.hpp"

using namespace negmine;

namespace {

simgrid::EmbeddingCache random_cache(size_t n, size_t d, uint64_t seed) {
    RngStream rng(seed);
    simgrid::EmbeddingCache c;
    c.img = Mat(n, d);
    c.txt = Mat(n, d);
    for (Mat* m : {&c.img, &c.txt})
        for (size_t i = 0; i < n; ++i) {
            double* row = m->row(i);
            double nn = 0.0;
            for (size_t j = 0; j < d; ++j) {
                row[j] = rng.normal();
                nn += row[j] * row[j];
            }
            nn = std::sqrt(nn);
            for (size_t j = 0; j < d; ++j) row[j] /= nn;
        }
    return c;
}

simgrid::SearchSpace identity_space(size_t n) {
    simgrid::SearchSpace sp;
    sp.indices.resize(n);
    std::iota(sp.indices.begin(), sp.indices.end(), int64_t{0});
    return sp;
}

}  // namespace

TEST_CASE("build_similarity matches the brute-force double loop") {
    const auto cache = random_cache(8, 5, 41);
    const auto sp = identity_space(8);
    const Mat s = simgrid::build_similarity(cache, sp);
    const Mat ref = oracle::brute_fused_similarity(cache.img, cache.txt, sp.indices);
    REQUIRE(s.rows == 8);
    for (size_t i = 0; i < 8; ++i)
        for (size_t j = 0; j < 8; ++j) {
            CHECK(std::fabs(s(i, j) - ref(i, j)) < 1e-12);
            CHECK(s(i, j) >= -2.0 - 1e-12);
            CHECK(s(i, j) <= 2.0 + 1e-12);
        }
}

TEST_CASE("identical img/txt caches give a symmetric matrix of 2s on the diagonal") {
    auto cache = random_cache(6, 4, 42);
    cache.txt = cache.img;
    const Mat s = simgrid::build_similarity(cache, identity_space(6));
    for (size_t i = 0; i < 6; ++i) {
        CHECK(s(i, i) == doctest::Approx(2.0).epsilon(1e-12));
        for (size_t j = 0; j < 6; ++j) CHECK(s(i, j) == doctest::Approx(s(j, i)).epsilon(1e-12));
    }
}

TEST_CASE("out-of-range space index is rejected") {
    const auto cache = random_cache(4, 3, 43);
    simgrid::SearchSpace sp;
    sp.indices = {0, 1, 4};
    CHECK_THROWS_AS(simgrid::build_similarity(cache, sp), ContractError);
}

TEST_CASE("summarize: softmax rows, monotone pre-softmax, diagonal excluded") {
    const auto cache = random_cache(12, 6, 44);
    const Mat s = simgrid::build_similarity(cache, identity_space(12));
    const auto sum = simgrid::summarize(s, 7);
    REQUIRE(sum.summary.rows == 12);
    REQUIRE(sum.summary.cols == 7);

    for (size_t i = 0; i < 12; ++i) {
        double total = 0.0;
        for (size_t l = 0; l < 7; ++l) {
            CHECK(sum.summary(i, l) >= 0.0);
            total += sum.summary(i, l);
            if (l > 0) CHECK(sum.presoft(i, l) >= sum.presoft(i, l - 1));
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

        // Level 0 is the row minimum, level m-1 the maximum, sans diagonal.
        double mn = 1e300, mx = -1e300;
        for (size_t j = 0; j < 12; ++j) {
            if (j == i) continue;
            mn = std::min(mn, s(i, j));
            mx = std::max(mx, s(i, j));
        }
        CHECK(sum.presoft(i, 0) == mn);
        CHECK(sum.presoft(i, 6) == mx);
    }
}

TEST_CASE("summarize with m = |M|-1 on distinct values is the sorted off-diagonal row") {
    const auto cache = random_cache(9, 6, 45);
    const Mat s = simgrid::build_similarity(cache, identity_space(9));
    const auto sum = simgrid::summarize(s, 8);
    for (size_t i = 0; i < 9; ++i) {
        std::vector<double> row;
        for (size_t j = 0; j < 9; ++j)
            if (j != i) row.push_back(s(i, j));
        std::sort(row.begin(), row.end());
        for (size_t l = 0; l < 8; ++l) CHECK(sum.presoft(i, l) == row[l]);
    }
}

TEST_CASE("summarize nearest-rank levels follow the documented rule") {
    // One row plus a dummy: values 10,20,30,40 against m=3 -> levels 0, .5, 1
    // -> ranks 0, round(1.5)=2, 3.
    Mat s(5, 5);
    const double vals[4] = {10.0, 20.0, 30.0, 40.0};
    for (size_t j = 1; j < 5; ++j) s(0, j) = vals[j - 1];
    const auto sum = simgrid::summarize(s, 3);
    CHECK(sum.presoft(0, 0) == 10.0);
    CHECK(sum.presoft(0, 1) == 30.0);
    CHECK(sum.presoft(0, 2) == 40.0);
}

TEST_CASE("constant rows summarize to the uniform distribution") {
    Mat s(6, 6, 0.37);
    const auto sum = simgrid::summarize(s, 5);
    for (size_t l = 0; l < 5; ++l) CHECK(sum.summary(0, l) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("summarize validates its preconditions") {
    Mat tiny(1, 1);
    CHECK_THROWS_AS(simgrid::summarize(tiny, 2), ContractError);
    Mat s(4, 4);
    CHECK_THROWS_AS(simgrid::summarize(s, 1), ContractError);
    CHECK_THROWS_AS(simgrid::summarize(s, 5), ContractError);  // m > |M|
}

TEST_CASE("scaled inputs keep the summary bounded and smooth") {
    const auto cache = random_cache(10, 5, 46);
    const Mat s = simgrid::build_similarity(cache, identity_space(10));
    for (double scale : {0.1, 1.0, 10.0}) {
        Mat scaled = s;
        scaled *= scale;
        const auto sum = simgrid::summarize(scaled, 6);
        for (double x : sum.summary.a) {
            CHECK(std::isfinite(x));
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
    }
}

TEST_CASE("sort_rows: ordering, permutation round-trip, input-permutation invariance") {
    const auto cache = random_cache(10, 5, 47);
    const Mat s = simgrid::build_similarity(cache, identity_space(10));
    const auto sum = simgrid::summarize(s, 6);
    const auto sorted = simgrid::sort_rows(sum);

    // Lexicographic non-decreasing over pre-softmax keys; perm/inv inverse pair.
    for (size_t r = 0; r + 1 < 10; ++r) {
        const double* a = sum.presoft.row(sorted.perm[r]);
        const double* b = sum.presoft.row(sorted.perm[r + 1]);
        CHECK(std::lexicographical_compare(b, b + 6, a, a + 6) == false);
    }
    for (size_t r = 0; r < 10; ++r) {
        CHECK(sorted.inv[sorted.perm[r]] == r);
        for (size_t l = 0; l < 6; ++l) CHECK(sorted.rows(r, l) == sum.summary(sorted.perm[r], l));
    }

    // Row-permuting the input leaves the sorted matrix unchanged.
    RngStream rng(48);
    std::vector<size_t> shuffle_map(10);
    std::iota(shuffle_map.begin(), shuffle_map.end(), size_t{0});
    rng.shuffle(shuffle_map);
    simgrid::SimilaritySummary permuted;
    permuted.m = sum.m;
    permuted.raw = sum.raw;
    permuted.summary = Mat(10, 6);
    permuted.presoft = Mat(10, 6);
    for (size_t r = 0; r < 10; ++r)
        for (size_t l = 0; l < 6; ++l) {
            permuted.summary(r, l) = sum.summary(shuffle_map[r], l);
            permuted.presoft(r, l) = sum.presoft(shuffle_map[r], l);
        }
    const auto sorted2 = simgrid::sort_rows(permuted);
    CHECK(sorted2.rows.a == sorted.rows.a);
}

TEST_CASE("sort_rows on already-sorted distinct input is the identity") {
    simgrid::SimilaritySummary sum;
    sum.m = 3;
    sum.presoft = Mat(3, 3);
    sum.summary = Mat(3, 3);
    for (size_t r = 0; r < 3; ++r)
        for (size_t l = 0; l < 3; ++l) {
            sum.presoft(r, l) = static_cast<double>(r) + 0.1 * static_cast<double>(l);
            sum.summary(r, l) = sum.presoft(r, l);
        }
    const auto sorted = simgrid::sort_rows(sum);
    for (size_t r = 0; r < 3; ++r) CHECK(sorted.perm[r] == r);
}
