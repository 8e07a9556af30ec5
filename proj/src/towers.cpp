#include "negmine/towers.hpp"

#include <cmath>

#include "negmine/mathx.hpp"

namespace negmine::towers {

namespace {

void gaussian_fill(Mat& m, double std, RngStream& rng) {
    for (double& x : m.a) x = std * rng.normal();
}

// y = x / ||x||; safeguards tiny norms (cannot occur after init, but keeps
// the contract total).
void normalize_row(const double* e, double* u, size_t d, double& norm_out) {
    double n = norm2(e, d);
    if (n < 1e-12) throw NumericalError("embedding norm underflow");
    for (size_t j = 0; j < d; ++j) u[j] = e[j] / n;
    norm_out = n;
}

// de = (g - u (u.g)) / ||e||   for u = e/||e||.
void normalize_backward(const double* u, const double* g, double norm, double* de, size_t d) {
    double ug = dot(u, g, d);
    for (size_t j = 0; j < d; ++j) de[j] += (g[j] - u[j] * ug) / norm;
}

}  // namespace

ModelParams ModelParams::init(const TowerDims& dims, double temperature, double label_smoothing,
                              RngStream& rng) {
    ModelParams p;
    p.dims = dims;
    p.temperature = temperature;
    p.label_smoothing = label_smoothing;
    const auto h = static_cast<size_t>(dims.hidden);
    const auto di = static_cast<size_t>(dims.d_img);
    const auto de = static_cast<size_t>(dims.d_emb);
    const auto w = static_cast<size_t>(dims.vocab);
    const auto fin = static_cast<size_t>(2 * dims.d_emb + dims.k_text);

    p.img_w1 = Mat(h, di);
    gaussian_fill(p.img_w1, 1.0 / std::sqrt(static_cast<double>(di)), rng);
    p.img_b1 = Mat(1, h);
    p.img_w2 = Mat(de, h);
    gaussian_fill(p.img_w2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    p.img_b2 = Mat(1, de);

    p.tok_emb = Mat(w, de);
    gaussian_fill(p.tok_emb, 1.0 / std::sqrt(static_cast<double>(de)), rng);

    p.txt_w1 = Mat(h, de);
    gaussian_fill(p.txt_w1, 1.0 / std::sqrt(static_cast<double>(de)), rng);
    p.txt_b1 = Mat(1, h);
    p.txt_w2 = Mat(de, h);
    gaussian_fill(p.txt_w2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    p.txt_b2 = Mat(1, de);

    p.fus_w1 = Mat(h, fin);
    gaussian_fill(p.fus_w1, 1.0 / std::sqrt(static_cast<double>(fin)), rng);
    p.fus_b1 = Mat(1, h);
    p.fus_w2 = Mat(w, h);
    gaussian_fill(p.fus_w2, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    p.fus_b2 = Mat(1, w);

    p.itm_w = Mat(de, de);
    gaussian_fill(p.itm_w, 1.0 / std::sqrt(static_cast<double>(de)), rng);
    p.itm_b = Mat(1, 1);
    return p;
}

std::vector<ParamBlock> ModelParams::blocks() {
    return {
        {"img_w1", &img_w1, true},   {"img_b1", &img_b1, false}, {"img_w2", &img_w2, true},
        {"img_b2", &img_b2, false},  {"tok_emb", &tok_emb, true}, {"txt_w1", &txt_w1, true},
        {"txt_b1", &txt_b1, false},  {"txt_w2", &txt_w2, true},  {"txt_b2", &txt_b2, false},
        {"fus_w1", &fus_w1, true},   {"fus_b1", &fus_b1, false}, {"fus_w2", &fus_w2, true},
        {"fus_b2", &fus_b2, false},  {"itm_w", &itm_w, true},    {"itm_b", &itm_b, false},
    };
}

std::vector<Mat> ModelParams::zero_grads() const {
    auto& self = const_cast<ModelParams&>(*this);
    std::vector<Mat> g;
    for (const auto& b : self.blocks()) g.emplace_back(b.param->rows, b.param->cols);
    return g;
}

BatchData make_batch(const world::SemanticUniverse& u, const std::vector<int64_t>& pair_ids) {
    if (pair_ids.empty()) throw ContractError("make_batch: empty batch");
    const auto d = static_cast<size_t>(u.config.d_img);
    BatchData b;
    b.img = Mat(pair_ids.size(), d);
    b.tokens.reserve(pair_ids.size());
    b.pair_ids = pair_ids;
    for (size_t i = 0; i < pair_ids.size(); ++i) {
        int64_t id = pair_ids[i];
        if (id < 0 || id >= static_cast<int64_t>(u.n_images()) ||
            id >= static_cast<int64_t>(u.n_texts()))
            throw ContractError("make_batch: pair id out of range");
        const auto& feat = u.images[id].feature;
        for (size_t j = 0; j < d; ++j) b.img(i, j) = feat[j];
        b.tokens.push_back(u.texts[id].tokens);
    }
    return b;
}

uint64_t MaskPattern::fingerprint() const {
    uint64_t h = fnv1a(&batch, sizeof(batch));
    h = fnv1a(&k, sizeof(k), h);
    h = fnv1a(flags.data(), flags.size(), h);
    return h;
}

MaskPattern sample_mask(size_t batch, size_t k, double p_mask, RngStream& rng) {
    MaskPattern m;
    m.batch = batch;
    m.k = k;
    m.p_mask = p_mask;
    m.flags.resize(batch * k);
    for (auto& f : m.flags) f = (rng.uniform() < p_mask) ? 1 : 0;
    return m;
}

EmbedResult embed(const ModelParams& p, const BatchData& batch) {
    const size_t B = batch.size();
    if (B == 0) throw ContractError("embed: empty batch");
    const auto h = static_cast<size_t>(p.dims.hidden);
    const auto de = static_cast<size_t>(p.dims.d_emb);
    const auto k = static_cast<size_t>(p.dims.k_text);

    EmbedResult r;
    r.u = Mat(B, de);
    r.v = Mat(B, de);
    r.img_h1 = Mat(B, h);
    r.img_e = Mat(B, de);
    r.txt_mean = Mat(B, de);
    r.txt_h1 = Mat(B, h);
    r.txt_e = Mat(B, de);

    double norm;
    for (size_t i = 0; i < B; ++i) {
        affine(p.img_w1, p.img_b1.a, batch.img.row(i), r.img_h1.row(i));
        for (size_t j = 0; j < h; ++j) r.img_h1(i, j) = std::tanh(r.img_h1(i, j));
        affine(p.img_w2, p.img_b2.a, r.img_h1.row(i), r.img_e.row(i));
        normalize_row(r.img_e.row(i), r.u.row(i), de, norm);

        const auto& toks = batch.tokens[i];
        if (toks.size() != k) throw ContractError("embed: token length mismatch");
        double* tm = r.txt_mean.row(i);
        for (int64_t tok : toks) {
            if (tok < 0 || tok >= p.dims.vocab) throw ContractError("embed: token out of vocab");
            const double* row = p.tok_emb.row(static_cast<size_t>(tok));
            for (size_t j = 0; j < de; ++j) tm[j] += row[j];
        }
        for (size_t j = 0; j < de; ++j) tm[j] /= static_cast<double>(k);
        affine(p.txt_w1, p.txt_b1.a, tm, r.txt_h1.row(i));
        for (size_t j = 0; j < h; ++j) r.txt_h1(i, j) = std::tanh(r.txt_h1(i, j));
        affine(p.txt_w2, p.txt_b2.a, r.txt_h1.row(i), r.txt_e.row(i));
        normalize_row(r.txt_e.row(i), r.v.row(i), de, norm);
    }
    return r;
}

void backward_embed(const ModelParams& p, const BatchData& batch, const EmbedResult& emb,
                    const EmbGrad& eg, std::vector<Mat>& grads) {
    const size_t B = batch.size();
    const auto h = static_cast<size_t>(p.dims.hidden);
    const auto de = static_cast<size_t>(p.dims.d_emb);
    const auto k = static_cast<size_t>(p.dims.k_text);

    std::vector<double> de_buf(de), dh(h), da(h), dmean(de);
    for (size_t i = 0; i < B; ++i) {
        // image tower
        double n = norm2(emb.img_e.row(i), de);
        std::fill(de_buf.begin(), de_buf.end(), 0.0);
        normalize_backward(emb.u.row(i), eg.du.row(i), n, de_buf.data(), de);
        affine_accumulate_grads(grads[kImgW2], grads[kImgB2].a, de_buf.data(), emb.img_h1.row(i));
        std::fill(dh.begin(), dh.end(), 0.0);
        affine_backprop_input(p.img_w2, de_buf.data(), dh.data());
        for (size_t j = 0; j < h; ++j) {
            double t = emb.img_h1(i, j);
            da[j] = dh[j] * (1.0 - t * t);
        }
        affine_accumulate_grads(grads[kImgW1], grads[kImgB1].a, da.data(), batch.img.row(i));

        // text tower
        n = norm2(emb.txt_e.row(i), de);
        std::fill(de_buf.begin(), de_buf.end(), 0.0);
        normalize_backward(emb.v.row(i), eg.dv.row(i), n, de_buf.data(), de);
        affine_accumulate_grads(grads[kTxtW2], grads[kTxtB2].a, de_buf.data(), emb.txt_h1.row(i));
        std::fill(dh.begin(), dh.end(), 0.0);
        affine_backprop_input(p.txt_w2, de_buf.data(), dh.data());
        for (size_t j = 0; j < h; ++j) {
            double t = emb.txt_h1(i, j);
            da[j] = dh[j] * (1.0 - t * t);
        }
        affine_accumulate_grads(grads[kTxtW1], grads[kTxtB1].a, da.data(), emb.txt_mean.row(i));
        std::fill(dmean.begin(), dmean.end(), 0.0);
        affine_backprop_input(p.txt_w1, da.data(), dmean.data());
        for (int64_t tok : batch.tokens[i]) {
            double* row = grads[kTokEmb].row(static_cast<size_t>(tok));
            for (size_t j = 0; j < de; ++j) row[j] += dmean[j] / static_cast<double>(k);
        }
    }
}

Mat fused_similarity(const EmbedResult& emb) {
    const size_t B = emb.u.rows;
    const size_t d = emb.u.cols;
    Mat s(B, B);
    for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < B; ++j)
            s(i, j) = dot(emb.u.row(i), emb.v.row(j), d) + dot(emb.v.row(i), emb.u.row(j), d);
    return s;
}

double loss_itc_fwd(const ModelParams& p, const EmbedResult& emb, EmbGrad* eg) {
    const size_t B = emb.u.rows;
    if (B < 2) throw ContractError("loss_itc: batch size must be >= 2");
    const size_t d = emb.u.cols;
    const double tau = p.temperature;
    const double eps = p.label_smoothing;

    Mat logits(B, B);
    for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < B; ++j) logits(i, j) = dot(emb.u.row(i), emb.v.row(j), d) / tau;

    // Row softmax = image anchor (I2T); column softmax = text anchor (T2I).
    Mat p_i2t(B, B), p_t2i(B, B);
    double loss = 0.0;
    std::vector<double> buf(B);
    for (size_t i = 0; i < B; ++i) {
        for (size_t j = 0; j < B; ++j) buf[j] = logits(i, j);
        double lse = log_sum_exp(buf);
        double ce = 0.0;
        for (size_t j = 0; j < B; ++j) {
            double logp = logits(i, j) - lse;
            p_i2t(i, j) = std::exp(logp);
            double target = eps / static_cast<double>(B) + (j == i ? 1.0 - eps : 0.0);
            ce -= target * logp;
        }
        loss += ce;
    }
    for (size_t j = 0; j < B; ++j) {
        for (size_t i = 0; i < B; ++i) buf[i] = logits(i, j);
        double lse = log_sum_exp(buf);
        double ce = 0.0;
        for (size_t i = 0; i < B; ++i) {
            double logp = logits(i, j) - lse;
            p_t2i(i, j) = std::exp(logp);
            double target = eps / static_cast<double>(B) + (i == j ? 1.0 - eps : 0.0);
            ce -= target * logp;
        }
        loss += ce;
    }
    loss /= 2.0 * static_cast<double>(B);

    if (eg) {
        const double inv = 1.0 / (2.0 * static_cast<double>(B));
        for (size_t i = 0; i < B; ++i) {
            for (size_t j = 0; j < B; ++j) {
                double target = eps / static_cast<double>(B) + (j == i ? 1.0 - eps : 0.0);
                double g = ((p_i2t(i, j) - target) + (p_t2i(i, j) - target)) * inv / tau;
                // d logit_ij / du_i = v_j, / dv_j = u_i
                const double* vj = emb.v.row(j);
                const double* ui = emb.u.row(i);
                double* dui = eg->du.row(i);
                double* dvj = eg->dv.row(j);
                for (size_t t = 0; t < d; ++t) {
                    dui[t] += g * vj[t];
                    dvj[t] += g * ui[t];
                }
            }
        }
    }
    return loss;
}

size_t hardest_negative(const Mat& sim, size_t i) {
    const size_t B = sim.rows;
    if (B < 2) throw ContractError("hardest_negative: batch size must be >= 2");
    size_t best = (i == 0) ? 1 : 0;
    double best_v = sim(i, best);
    for (size_t j = 0; j < B; ++j) {
        if (j == i) continue;
        if (sim(i, j) > best_v) {
            best = j;
            best_v = sim(i, j);
        }
    }
    return best;
}

double loss_itm_fwd(const ModelParams& p, const EmbedResult& emb, const Mat& sim, EmbGrad* eg,
                    std::vector<Mat>* grads) {
    const size_t B = emb.u.rows;
    if (B < 2) throw ContractError("loss_itm: batch size must be >= 2");
    if (sim.rows != B || sim.cols != B) throw ContractError("loss_itm: sim shape mismatch");
    const size_t d = emb.u.cols;
    const double inv = 1.0 / (3.0 * static_cast<double>(B));

    // score(a, b) = u_a . (W v_b) + bias; BCE in the stable softplus form.
    std::vector<double> wv(d);
    const std::vector<double> zero_bias(d, 0.0);
    double loss = 0.0;
    auto term = [&](size_t a, size_t b, double label) {
        affine(p.itm_w, zero_bias, emb.v.row(b), wv.data());
        double s = dot(emb.u.row(a), wv.data(), d) + p.itm_b(0, 0);
        loss += (softplus(s) - label * s) * inv;
        if (eg && grads) {
            double gs = (sigmoid(s) - label) * inv;
            double* dua = eg->du.row(a);
            double* dvb = eg->dv.row(b);
            const double* ua = emb.u.row(a);
            const double* vb = emb.v.row(b);
            for (size_t t = 0; t < d; ++t) dua[t] += gs * wv[t];
            // dv_b += W^T u_a * gs; dW += gs * u_a v_b^T
            for (size_t r = 0; r < d; ++r) {
                const double* wr = p.itm_w.row(r);
                double* gwr = (*grads)[kItmW].row(r);
                for (size_t c = 0; c < d; ++c) {
                    dvb[c] += gs * ua[r] * wr[c];
                    gwr[c] += gs * ua[r] * vb[c];
                }
            }
            (*grads)[kItmB](0, 0) += gs;
        }
    };

    for (size_t i = 0; i < B; ++i) {
        size_t j = hardest_negative(sim, i);
        term(i, i, 1.0);  // labeled positive pair
        term(i, j, 0.0);  // image anchor, hardest text negative
        term(j, i, 0.0);  // text anchor, hardest image negative
    }
    return loss;
}

double loss_mlm_fwd(const ModelParams& p, const BatchData& batch, const MaskPattern& mask,
                    const EmbedResult& emb, EmbGrad* eg, std::vector<Mat>* grads) {
    const size_t B = batch.size();
    const auto k = static_cast<size_t>(p.dims.k_text);
    const auto de = static_cast<size_t>(p.dims.d_emb);
    const auto h = static_cast<size_t>(p.dims.hidden);
    const auto w = static_cast<size_t>(p.dims.vocab);
    if (mask.batch != B || mask.k != k) throw ContractError("loss_mlm: mask shape mismatch");

    size_t total_masked = 0;
    for (uint8_t f : mask.flags) total_masked += f;
    if (total_masked == 0) return 0.0;
    const double inv = 1.0 / static_cast<double>(total_masked);

    const size_t fin = static_cast<size_t>(p.fusion_input_dim());
    std::vector<double> tbar(de), z(fin), a(h), hf(h), logits(w), probs(w);
    std::vector<double> dlog(w), dhf(h), da(h), dz(fin);
    double loss = 0.0;

    for (size_t i = 0; i < B; ++i) {
        // masked token summary: table mean with masked slots replaced by the
        // mask token row
        std::fill(tbar.begin(), tbar.end(), 0.0);
        for (size_t pos = 0; pos < k; ++pos) {
            int64_t tok = mask.at(i, pos) ? world::kMaskToken : batch.tokens[i][pos];
            const double* row = p.tok_emb.row(static_cast<size_t>(tok));
            for (size_t j = 0; j < de; ++j) tbar[j] += row[j];
        }
        for (size_t j = 0; j < de; ++j) tbar[j] /= static_cast<double>(k);

        for (size_t pos = 0; pos < k; ++pos) {
            if (!mask.at(i, pos)) continue;
            const double* ui = emb.u.row(i);
            for (size_t j = 0; j < de; ++j) z[j] = ui[j];
            for (size_t j = 0; j < de; ++j) z[de + j] = tbar[j];
            for (size_t j = 0; j < k; ++j) z[2 * de + j] = (j == pos) ? 1.0 : 0.0;

            affine(p.fus_w1, p.fus_b1.a, z.data(), a.data());
            for (size_t j = 0; j < h; ++j) hf[j] = std::tanh(a[j]);
            affine(p.fus_w2, p.fus_b2.a, hf.data(), logits.data());

            double mx = logits[0];
            for (size_t j = 1; j < w; ++j) mx = std::max(mx, logits[j]);
            double zsum = 0.0;
            for (size_t j = 0; j < w; ++j) {
                probs[j] = std::exp(logits[j] - mx);
                zsum += probs[j];
            }
            for (size_t j = 0; j < w; ++j) probs[j] /= zsum;
            const auto target = static_cast<size_t>(batch.tokens[i][pos]);
            loss -= std::log(probs[target]) * inv;

            if (eg && grads) {
                for (size_t j = 0; j < w; ++j)
                    dlog[j] = (probs[j] - (j == target ? 1.0 : 0.0)) * inv;
                affine_accumulate_grads((*grads)[kFusW2], (*grads)[kFusB2].a, dlog.data(), hf.data());
                std::fill(dhf.begin(), dhf.end(), 0.0);
                affine_backprop_input(p.fus_w2, dlog.data(), dhf.data());
                for (size_t j = 0; j < h; ++j) da[j] = dhf[j] * (1.0 - hf[j] * hf[j]);
                affine_accumulate_grads((*grads)[kFusW1], (*grads)[kFusB1].a, da.data(), z.data());
                std::fill(dz.begin(), dz.end(), 0.0);
                affine_backprop_input(p.fus_w1, da.data(), dz.data());

                double* dui = eg->du.row(i);
                for (size_t j = 0; j < de; ++j) dui[j] += dz[j];
                // tbar gradient spreads over the masked token sequence rows
                for (size_t pos2 = 0; pos2 < k; ++pos2) {
                    int64_t tok = mask.at(i, pos2) ? world::kMaskToken : batch.tokens[i][pos2];
                    double* row = (*grads)[kTokEmb].row(static_cast<size_t>(tok));
                    for (size_t j = 0; j < de; ++j)
                        row[j] += dz[de + j] / static_cast<double>(k);
                }
            }
        }
    }
    return loss;
}

namespace {

LossOutput finish_standalone(const ModelParams& p, const BatchData& batch, const EmbedResult& emb,
                             EmbGrad& eg, LossOutput out) {
    backward_embed(p, batch, emb, eg, out.grads);
    return out;
}

}  // namespace

LossOutput loss_itc(const ModelParams& p, const BatchData& batch) {
    EmbedResult emb = embed(p, batch);
    EmbGrad eg(batch.size(), static_cast<size_t>(p.dims.d_emb));
    LossOutput out;
    out.grads = p.zero_grads();
    out.value = loss_itc_fwd(p, emb, &eg);
    return finish_standalone(p, batch, emb, eg, std::move(out));
}

LossOutput loss_itm(const ModelParams& p, const BatchData& batch, const Mat& sim) {
    EmbedResult emb = embed(p, batch);
    EmbGrad eg(batch.size(), static_cast<size_t>(p.dims.d_emb));
    LossOutput out;
    out.grads = p.zero_grads();
    out.value = loss_itm_fwd(p, emb, sim, &eg, &out.grads);
    return finish_standalone(p, batch, emb, eg, std::move(out));
}

LossOutput loss_itm(const ModelParams& p, const BatchData& batch) {
    EmbedResult emb = embed(p, batch);
    return loss_itm(p, batch, fused_similarity(emb));
}

LossOutput loss_mlm(const ModelParams& p, const BatchData& batch, const MaskPattern& mask) {
    EmbedResult emb = embed(p, batch);
    EmbGrad eg(batch.size(), static_cast<size_t>(p.dims.d_emb));
    LossOutput out;
    out.grads = p.zero_grads();
    out.value = loss_mlm_fwd(p, batch, mask, emb, &eg, &out.grads);
    return finish_standalone(p, batch, emb, eg, std::move(out));
}

void sgd_step(ModelParams& p, const std::vector<Mat>& grads, double lr) {
    if (lr < 0.0) throw ContractError("sgd_step: negative learning rate");
    auto blocks = p.blocks();
    if (grads.size() != blocks.size()) throw ContractError("sgd_step: gradient count mismatch");
    for (size_t k = 0; k < blocks.size(); ++k) {
        Mat& prm = *blocks[k].param;
        for (size_t i = 0; i < prm.size(); ++i) {
            double g = grads[k].a[i];
            if (!std::isfinite(g))
                throw NumericalError("non-finite gradient in block " + blocks[k].name);
            prm.a[i] -= lr * g;
        }
    }
}

}  // namespace negmine::towers
