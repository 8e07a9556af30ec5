#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "negmine/common.hpp"
#include "negmine/linalg.hpp"

namespace negmine {

// A named view onto one parameter matrix. Registration order defines the
// (fixed) iteration order of the optimizer, which in turn fixes the floating
// point reduction order; never reorder registrations on a live checkpoint.
struct ParamBlock {
    std::string name;
    Mat* param = nullptr;
    bool decay = true;  // biases and gains opt out of weight decay
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam over a registry of ParamBlocks. Gradients are
// supplied as a parallel vector of Mats (same shapes, same order).
class AdamW {
public:
    AdamW(std::vector<ParamBlock> blocks, AdamWConfig cfg);

    // One update. Throws NumericalError naming the offending block if any
    // gradient entry is non-finite. `scale` multiplies every gradient (used
    // for the REINFORCE reward weighting).
    void step(const std::vector<Mat>& grads, double scale = 1.0);

    int64_t t() const { return t_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    const AdamWConfig& config() const { return cfg_; }
    AdamWConfig& config() { return cfg_; }

    // Moment access for checkpointing.
    std::vector<Mat>& m() { return m_; }
    std::vector<Mat>& v() { return v_; }
    const std::vector<Mat>& m() const { return m_; }
    const std::vector<Mat>& v() const { return v_; }
    void set_t(int64_t t) { t_ = t; }

private:
    std::vector<ParamBlock> blocks_;
    AdamWConfig cfg_;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
    int64_t t_ = 0;
};

// Convenience: allocate gradient Mats matching a block registry.
std::vector<Mat> make_grads_like(const std::vector<ParamBlock>& blocks);

void zero_grads(std::vector<Mat>& grads);

}  // namespace negmine
