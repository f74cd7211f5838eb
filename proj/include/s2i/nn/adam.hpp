#pragma once

#include "s2i/nn/module.hpp"

namespace s2i::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
};

// Adam with bias correction. Parameters without a gradient are skipped.
class Adam {
public:
    Adam(NamedTensors params, AdamConfig cfg);

    void step();
    void zero_grad();

    const AdamConfig& config() const { return cfg_; }
    int64_t steps() const { return t_; }
    // Moments as "m.<name>" / "v.<name>" plus "t"; restorable with load_state.
    NamedTensors state() const;
    void load_state(const NamedTensors& state);

private:
    NamedTensors params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// One Adam update of a single tensor in place; exposed for oracle tests.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t t, const AdamConfig& cfg);

} // namespace s2i::nn
