#include "negmine/optim.hpp"

namespace negmine {

AdamW::AdamW(std::vector<ParamBlock> blocks, AdamWConfig cfg)
    : blocks_(std::move(blocks)), cfg_(cfg) {
    m_.reserve(blocks_.size());
    v_.reserve(blocks_.size());
    for (const auto& b : blocks_) {
        if (!b.param) throw ContractError("AdamW: null param in block " + b.name);
        m_.emplace_back(b.param->rows, b.param->cols);
        v_.emplace_back(b.param->rows, b.param->cols);
    }
}

void AdamW::step(const std::vector<Mat>& grads, double scale) {
    if (grads.size() != blocks_.size())
        throw ContractError("AdamW::step: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < blocks_.size(); ++k) {
        Mat& p = *blocks_[k].param;
        const Mat& g = grads[k];
        if (g.rows != p.rows || g.cols != p.cols)
            throw ContractError("AdamW::step: shape mismatch in block " + blocks_[k].name);
        Mat& mk = m_[k];
        Mat& vk = v_[k];
        const double wd = blocks_[k].decay ? cfg_.weight_decay : 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            double gi = g.a[i] * scale;
            if (!std::isfinite(gi))
                throw NumericalError("non-finite gradient in block " + blocks_[k].name);
            mk.a[i] = cfg_.beta1 * mk.a[i] + (1.0 - cfg_.beta1) * gi;
            vk.a[i] = cfg_.beta2 * vk.a[i] + (1.0 - cfg_.beta2) * gi * gi;
            double mhat = mk.a[i] / bc1;
            double vhat = vk.a[i] / bc2;
            p.a[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * p.a[i]);
        }
    }
}

std::vector<Mat> make_grads_like(const std::vector<ParamBlock>& blocks) {
    std::vector<Mat> g;
    g.reserve(blocks.size());
    for (const auto& b : blocks) g.emplace_back(b.param->rows, b.param->cols);
    return g;
}

void zero_grads(std::vector<Mat>& grads) {
    for (auto& g : grads) g.zero();
}

}  // namespace negmine
