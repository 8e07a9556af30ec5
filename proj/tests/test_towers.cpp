#include <doctest.h>

#include <cmath>

#include "negmine/mathx.hpp"
#include "negmine/towers.hpp"
#include "oracles.hpp"

using namespace negmine;

namespace {

struct Tiny {
    world::SemanticUniverse u;
    towers::ModelParams p;
    towers::BatchData batch;
};

Tiny make_tiny(uint64_t seed, size_t B = 5) {
    WorldConfig w;
    w.n_concepts = 5;
    w.n_images = 24;
    w.n_texts = 24;
    w.d_latent = 6;
    w.d_img = 6;
    w.k_text = 5;
    w.vocab = 12;
    w.noise_sigma = 0.1;
    w.max_concepts = 3;

    Tiny t;
    t.u = world::generate_universe(w, seed);
    RngStream rng(seed, "towers-test-init");
    t.p = towers::ModelParams::init({6, 8, 10, 5, 12}, 0.07, 0.1, rng);
    std::vector<int64_t> ids;
    for (size_t i = 0; i < B; ++i) ids.push_back(static_cast<int64_t>(i * 3 % 24));
    t.batch = towers::make_batch(t.u, ids);
    return t;
}

// Check analytic gradients of `loss` against central differences at random
// parameter coordinates.
template <typename LossFn>
void gradcheck(towers::ModelParams& p, LossFn&& loss, int n_coords, uint64_t seed,
               double tol = 1e-4) {
    const towers::LossOutput out = loss();
    auto blocks = p.blocks();
    RngStream rng(seed);
    for (int c = 0; c < n_coords; ++c) {
        const size_t bi = rng.uniform_int(blocks.size());
        Mat* m = blocks[bi].param;
        const size_t k = rng.uniform_int(m->size());
        const double fd = oracle::fd_slope([&] { return loss().value; }, &m->a[k]);
        INFO("block ", blocks[bi].name, " coord ", k);
        CHECK(oracle::rel_err(out.grads[bi].a[k], fd) < tol);
    }
}

// Label-smoothed symmetric InfoNCE recomputed from first principles.
double brute_itc(const towers::ModelParams& p, const Mat& u, const Mat& v) {
    const size_t B = u.rows;
    const double eps = p.label_smoothing;
    double total = 0.0;
    for (int dir = 0; dir < 2; ++dir) {
        for (size_t i = 0; i < B; ++i) {
            std::vector<double> logits(B);
            for (size_t j = 0; j < B; ++j)
                logits[j] = (dir == 0 ? dot(u.row(i), v.row(j), u.cols)
                                      : dot(v.row(i), u.row(j), u.cols)) /
                            p.temperature;
            const double lse = log_sum_exp(logits);
            for (size_t j = 0; j < B; ++j) {
                const double target =
                    eps / static_cast<double>(B) + (i == j ? 1.0 - eps : 0.0);
                total -= target * (logits[j] - lse);
            }
        }
    }
    return total / (2.0 * static_cast<double>(B));
}

}  // namespace

TEST_CASE("embed emits unit rows and is deterministic per item") {
    Tiny t = make_tiny(1);
    const auto emb = towers::embed(t.p, t.batch);
    for (size_t i = 0; i < t.batch.size(); ++i) {
        CHECK(std::fabs(norm2(emb.u.row(i), emb.u.cols) - 1.0) < 1e-9);
        CHECK(std::fabs(norm2(emb.v.row(i), emb.v.cols) - 1.0) < 1e-9);
    }
    // Duplicated item gives identical rows.
    auto dup = towers::make_batch(t.u, {3, 3});
    const auto demb = towers::embed(t.p, dup);
    for (size_t c = 0; c < demb.u.cols; ++c) {
        CHECK(demb.u(0, c) == demb.u(1, c));
        CHECK(demb.v(0, c) == demb.v(1, c));
    }
}

TEST_CASE("make_batch validates ids") {
    Tiny t = make_tiny(2);
    CHECK_THROWS_AS(towers::make_batch(t.u, {}), ContractError);
    CHECK_THROWS_AS(towers::make_batch(t.u, {24}), ContractError);
    CHECK_THROWS_AS(towers::make_batch(t.u, {-1}), ContractError);
}

TEST_CASE("ITC equals the brute-force smoothed InfoNCE") {
    for (uint64_t seed : {3ull, 4ull, 5ull}) {
        Tiny t = make_tiny(seed);
        const auto emb = towers::embed(t.p, t.batch);
        const double val = towers::loss_itc_fwd(t.p, emb, nullptr);
        CHECK(val == doctest::Approx(brute_itc(t.p, emb.u, emb.v)).epsilon(1e-12));
        CHECK(val >= 0.0);
    }
}

TEST_CASE("ITC with zero similarity everywhere gives ln B") {
    // Orthogonal embeddings in d=4: every logit 0, smoothing off -> ln 2.
    towers::ModelParams p;
    p.temperature = 0.07;
    p.label_smoothing = 0.0;
    towers::EmbedResult emb;
    emb.u = Mat(2, 4);
    emb.v = Mat(2, 4);
    emb.u(0, 0) = 1.0;
    emb.u(1, 1) = 1.0;
    emb.v(0, 2) = 1.0;
    emb.v(1, 3) = 1.0;
    CHECK(towers::loss_itc_fwd(p, emb, nullptr) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("ITC gradients match finite differences") {
    Tiny t = make_tiny(6);
    gradcheck(t.p, [&] { return towers::loss_itc(t.p, t.batch); }, 40, 1006);
}

TEST_CASE("hardest_negative is the masked argmax with low-index ties") {
    Mat sim(3, 3);
    // Row 0: diagonal must be excluded even when maximal.
    sim(0, 0) = 9.0;
    sim(0, 1) = 0.4;
    sim(0, 2) = 0.7;
    CHECK(towers::hardest_negative(sim, 0) == 2);
    // Row 1: tie between columns 0 and 2 -> lowest index.
    sim(1, 0) = 0.5;
    sim(1, 1) = 0.0;
    sim(1, 2) = 0.5;
    CHECK(towers::hardest_negative(sim, 1) == 0);

    RngStream rng(8);
    Mat rnd(7, 7);
    for (double& x : rnd.a) x = rng.uniform();
    for (size_t i = 0; i < 7; ++i) {
        size_t best = SIZE_MAX;
        double bv = -1e300;
        for (size_t j = 0; j < 7; ++j) {
            if (j == i) continue;
            if (rnd(i, j) > bv) {
                bv = rnd(i, j);
                best = j;
            }
        }
        CHECK(towers::hardest_negative(rnd, i) == best);
    }
}

TEST_CASE("ITM with B=2 is a forced choice and gradients check out") {
    Tiny t = make_tiny(9, 2);
    const auto emb = towers::embed(t.p, t.batch);
    const Mat sim = towers::fused_similarity(emb);
    CHECK(towers::hardest_negative(sim, 0) == 1);
    CHECK(towers::hardest_negative(sim, 1) == 0);
    const auto out = towers::loss_itm(t.p, t.batch);
    CHECK(out.value > 0.0);
    CHECK(std::isfinite(out.value));

    Tiny g = make_tiny(10);
    gradcheck(g.p, [&] { return towers::loss_itm(g.p, g.batch); }, 40, 1010);
}

TEST_CASE("MLM: empty mask is exactly free") {
    Tiny t = make_tiny(11);
    towers::MaskPattern none;
    none.batch = t.batch.size();
    none.k = 5;
    none.p_mask = 0.0;
    none.flags.assign(none.batch * none.k, 0);
    const auto out = towers::loss_mlm(t.p, t.batch, none);
    CHECK(out.value == 0.0);
    for (const auto& g : out.grads)
        for (double x : g.a) CHECK(x == 0.0);
}

TEST_CASE("MLM: zeroed prediction head prices every token at ln W") {
    Tiny t = make_tiny(12);
    t.p.fus_w2.zero();
    t.p.fus_b2.zero();
    RngStream rng(12);
    const auto mask = towers::sample_mask(t.batch.size(), 5, 0.5, rng);
    const auto out = towers::loss_mlm(t.p, t.batch, mask);
    CHECK(out.value == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("MLM gradients match finite differences") {
    Tiny t = make_tiny(13);
    RngStream rng(13);
    const auto mask = towers::sample_mask(t.batch.size(), 5, 0.5, rng);
    gradcheck(t.p, [&] { return towers::loss_mlm(t.p, t.batch, mask); }, 40, 1013);
}

TEST_CASE("identical mask gives bit-identical MLM values") {
    Tiny t = make_tiny(14);
    RngStream rng(14);
    const auto mask = towers::sample_mask(t.batch.size(), 5, 0.5, rng);
    const double a = towers::loss_mlm(t.p, t.batch, mask).value;
    const double b = towers::loss_mlm(t.p, t.batch, mask).value;
    CHECK(a == b);

    // The value ignores whether gradients are requested.
    const auto emb = towers::embed(t.p, t.batch);
    towers::EmbGrad eg(t.batch.size(), static_cast<size_t>(t.p.dims.d_emb));
    auto grads = t.p.zero_grads();
    const double with_grads = towers::loss_mlm_fwd(t.p, t.batch, mask, emb, &eg, &grads);
    const double value_only = towers::loss_mlm_fwd(t.p, t.batch, mask, emb, nullptr, nullptr);
    CHECK(with_grads == value_only);
    CHECK(with_grads == a);
}

TEST_CASE("sample_mask respects probability endpoints and fingerprints") {
    RngStream rng(15);
    const auto all = towers::sample_mask(4, 6, 1.0, rng);
    for (uint8_t f : all.flags) CHECK(f == 1);
    const auto none = towers::sample_mask(4, 6, 0.0, rng);
    for (uint8_t f : none.flags) CHECK(f == 0);

    RngStream r1(16), r2(16);
    auto a = towers::sample_mask(4, 6, 0.5, r1);
    const auto b = towers::sample_mask(4, 6, 0.5, r2);
    CHECK(a.flags == b.flags);
    CHECK(a.fingerprint() == b.fingerprint());
    a.flags[7] ^= 1;
    CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("sgd_step: zero lr is the identity, NaN gradients are named") {
    Tiny t = make_tiny(17);
    auto grads = t.p.zero_grads();
    for (auto& g : grads)
        for (double& x : g.a) x = 0.25;
    const Mat before = t.p.img_w1;
    towers::sgd_step(t.p, grads, 0.0);
    CHECK(t.p.img_w1.a == before.a);

    grads[towers::kTxtW2](0, 0) = std::nan("");
    CHECK_THROWS_WITH_AS(towers::sgd_step(t.p, grads, 0.1), doctest::Contains("txt_w2"),
                         NumericalError);
}

TEST_CASE("100 SGD steps overfit a fixed tiny batch") {
    Tiny t = make_tiny(18, 4);
    RngStream rng(18);
    const auto mask = towers::sample_mask(t.batch.size(), 5, 0.5, rng);
    auto total = [&] {
        const auto a = towers::loss_itc(t.p, t.batch);
        const auto b = towers::loss_itm(t.p, t.batch);
        const auto c = towers::loss_mlm(t.p, t.batch, mask);
        return std::make_tuple(a.value + b.value + c.value, a, b, c);
    };
    const double start = std::get<0>(total());
    for (int it = 0; it < 100; ++it) {
        auto [val, a, b, c] = total();
        (void)val;
        auto grads = t.p.zero_grads();
        for (size_t i = 0; i < grads.size(); ++i) {
            grads[i] += a.grads[i];
            grads[i] += b.grads[i];
            grads[i] += c.grads[i];
        }
        towers::sgd_step(t.p, grads, 0.05);
    }
    const double end = std::get<0>(total());
    CHECK(end < start);
}

TEST_CASE("AdamW single step matches the hand-computed update") {
    Mat x(1, 1);
    x(0, 0) = 2.0;
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    AdamW opt({{"x", &x, true}}, cfg);
    std::vector<Mat> g{Mat(1, 1)};
    g[0](0, 0) = 0.5;
    opt.step(g);

    // t=1: mhat = g, vhat = g^2 -> param step = lr * g/(|g|+eps), then decay.
    const double expect =
        (2.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8)) - 0.1 * 0.01 * 2.0;
    CHECK(x(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(opt.t() == 1);

    // Bias decay only applies to decay-enabled blocks.
    Mat b(1, 1);
    b(0, 0) = 1.0;
    AdamW opt2({{"b", &b, false}}, cfg);
    std::vector<Mat> zg{Mat(1, 1)};
    opt2.step(zg);
    CHECK(b(0, 0) == 1.0);  // zero grad + no decay -> untouched
}

TEST_CASE("AdamW converges on a quadratic") {
    Mat x(1, 1);
    x(0, 0) = 3.0;
    AdamWConfig cfg;
    cfg.lr = 0.05;
    AdamW opt({{"x", &x, true}}, cfg);
    std::vector<Mat> g{Mat(1, 1)};
    for (int i = 0; i < 500; ++i) {
        g[0](0, 0) = x(0, 0);  // d/dx (x^2/2)
        opt.step(g);
    }
    CHECK(std::fabs(x(0, 0)) < 1e-2);
}
