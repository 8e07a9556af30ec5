#pragma once

#include <cstdint>
#include <vector>

#include "negmine/config.hpp"
#include "negmine/linalg.hpp"
#include "negmine/optim.hpp"
#include "negmine/rng.hpp"
#include "negmine/synthworld.hpp"

namespace negmine::towers {

struct TowerDims {
    int64_t d_img = 32;
    int64_t d_emb = 32;
    int64_t hidden = 64;
    int64_t k_text = 12;
    int64_t vocab = 64;
};

// Parameter block order is the checkpoint and optimizer layout; append only.
enum BlockIdx : size_t {
    kImgW1 = 0,
    kImgB1,
    kImgW2,
    kImgB2,
    kTokEmb,
    kTxtW1,
    kTxtB1,
    kTxtW2,
    kTxtB2,
    kFusW1,
    kFusB1,
    kFusW2,
    kFusB2,
    kItmW,
    kItmB,
    kNumBlocks
};

// Toy VLP model: image MLP tower, token-table + MLP text tower, MLM fusion
// head, bilinear ITM head. Tower outputs are L2-normalized; cosine similarity
// is a plain dot product downstream.
struct ModelParams {
    TowerDims dims;
    double temperature = 0.07;     // ITC logit scale, fixed (not learned)
    double label_smoothing = 0.1;  // ITC target smoothing

    Mat img_w1, img_b1, img_w2, img_b2;
    Mat tok_emb;
    Mat txt_w1, txt_b1, txt_w2, txt_b2;
    Mat fus_w1, fus_b1, fus_w2, fus_b2;
    Mat itm_w, itm_b;

    static ModelParams init(const TowerDims& dims, double temperature, double label_smoothing,
                            RngStream& rng);

    std::vector<ParamBlock> blocks();
    // Shapes without mutation (for gradient allocation on a const model).
    std::vector<Mat> zero_grads() const;
    int64_t fusion_input_dim() const { return 2 * dims.d_emb + dims.k_text; }
};

// One mini-batch's raw inputs, materialized from the universe.
struct BatchData {
    Mat img;                                   // B x d_img
    std::vector<std::vector<int64_t>> tokens;  // B x k_text
    std::vector<int64_t> pair_ids;             // global pair ids
    size_t size() const { return pair_ids.size(); }
};

BatchData make_batch(const world::SemanticUniverse& u, const std::vector<int64_t>& pair_ids);

// Per-(text, position) mask flags; regenerated per step, reusable verbatim so
// the before/after reward evaluations see the identical pattern.
struct MaskPattern {
    size_t batch = 0;
    size_t k = 0;
    double p_mask = 0.0;
    std::vector<uint8_t> flags;  // batch*k, row-major

    bool at(size_t i, size_t pos) const { return flags[i * k + pos] != 0; }
    uint64_t fingerprint() const;
};

MaskPattern sample_mask(size_t batch, size_t k, double p_mask, RngStream& rng);

// Forward activations kept for the backward pass.
struct EmbedResult {
    Mat u;  // B x d_emb, unit rows (image)
    Mat v;  // B x d_emb, unit rows (text)
    Mat img_h1, img_e;
    Mat txt_mean, txt_h1, txt_e;
};

EmbedResult embed(const ModelParams& p, const BatchData& batch);

// Embedding-space gradient accumulator shared by the three losses.
struct EmbGrad {
    Mat du;  // B x d_emb
    Mat dv;
    EmbGrad(size_t b, size_t d) : du(b, d), dv(b, d) {}
};

// Push accumulated (du, dv) through normalization and both towers into grads.
void backward_embed(const ModelParams& p, const BatchData& batch, const EmbedResult& emb,
                    const EmbGrad& eg, std::vector<Mat>& grads);

// Fused in-batch similarity S'[i][j] = u_i.v_j + v_i.u_j (symmetric).
Mat fused_similarity(const EmbedResult& emb);

// Loss forward passes. Each returns the loss value; if eg/grads are non-null
// they accumulate embedding-space and direct parameter gradients. The value
// computation is identical whether or not gradients are requested.
double loss_itc_fwd(const ModelParams& p, const EmbedResult& emb, EmbGrad* eg);
double loss_itm_fwd(const ModelParams& p, const EmbedResult& emb, const Mat& sim, EmbGrad* eg,
                    std::vector<Mat>* grads);
double loss_mlm_fwd(const ModelParams& p, const BatchData& batch, const MaskPattern& mask,
                    const EmbedResult& emb, EmbGrad* eg, std::vector<Mat>* grads);

// Standalone (value, full gradient) entry points: embed internally, run one
// loss, and complete the tower backward. Used by tests and gradient checks;
// the training loop composes the *_fwd parts to share one embedding pass.
struct LossOutput {
    double value = 0.0;
    std::vector<Mat> grads;
};

LossOutput loss_itc(const ModelParams& p, const BatchData& batch);
LossOutput loss_itm(const ModelParams& p, const BatchData& batch, const Mat& sim);
LossOutput loss_itm(const ModelParams& p, const BatchData& batch);  // sim from current emb
LossOutput loss_mlm(const ModelParams& p, const BatchData& batch, const MaskPattern& mask);

// Plain SGD step; AdamW lives in optim.hpp behind the same grads layout.
// Throws NumericalError naming the block on non-finite gradient entries.
void sgd_step(ModelParams& p, const std::vector<Mat>& grads, double lr);

// Hardest in-batch negative for anchor i: argmax_{j != i} sim[i][j], ties to
// the lowest index. Exposed for the oracle test.
size_t hardest_negative(const Mat& sim, size_t i);

}  // namespace negmine::towers
