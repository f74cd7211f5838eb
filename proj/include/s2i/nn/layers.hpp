#pragma once

#include "s2i/core/ops.hpp"
#include "s2i/core/rng.hpp"
#include "s2i/nn/module.hpp"

namespace s2i::nn {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
Tensor fan_in_uniform(Rng& rng, const Shape& shape, int64_t fan_in);

class Linear : public Module {
public:
    Linear(int64_t in, int64_t out, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const { return dense(x, weight, bias); }

    Tensor weight, bias;
};

class Conv2d : public Module {
public:
    Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride_, pad_); }

    Tensor weight, bias;

private:
    int64_t stride_, pad_;
};

class Conv1d : public Module {
public:
    Conv1d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad, Rng& rng, bool bias = true);
    Tensor forward(const Tensor& x) const { return conv1d(x, weight, bias, stride_, pad_); }

    Tensor weight, bias;

private:
    int64_t stride_, pad_;
};

class BatchNorm : public Module {
public:
    explicit BatchNorm(int64_t channels, double momentum = 0.1, double eps = 1e-5);
    Tensor forward(const Tensor& x);

    Tensor gamma, beta, running_mean, running_var;
    double momentum, eps;
};

// Single-direction GRU with gates ordered (reset, update, candidate):
//   r = sig(Wir x + bir + Whr h + bhr)
//   z = sig(Wiz x + biz + Whz h + bhz)
//   n = tanh(Win x + bin + r * (Whn h + bhn))
//   h' = (1 - z) * n + z * h
class GRU : public Module {
public:
    GRU(int64_t input, int64_t hidden, Rng& rng);
    // x [N,T,F] -> [N,T,H]; reverse runs from t = T-1 down to 0.
    Tensor forward(const Tensor& x, bool reverse = false) const;
    int64_t hidden() const { return hidden_; }

    Tensor w_ih, w_hh, b_ih, b_hh;

private:
    int64_t hidden_;
};

class BiGRU : public Module {
public:
    BiGRU(int64_t input, int64_t hidden, Rng& rng);
    // [N,T,F] -> [N,T,2H], forward states first.
    Tensor forward(const Tensor& x) const;

    std::shared_ptr<GRU> fwd, bwd;
};

// Additive single-head attention pooling over time:
// score_t = softmax_t(v . tanh(W h_t + b)), out = sum_t score_t h_t.
class AttentionPool : public Module {
public:
    AttentionPool(int64_t dim, int64_t attn_dim, Rng& rng);
    // h [N,T,D] -> [N,D]; `scores` receives [N,T] when non-null.
    Tensor forward(const Tensor& h, Tensor* scores = nullptr) const;

    Tensor w, b, v;
};

} // namespace s2i::nn
