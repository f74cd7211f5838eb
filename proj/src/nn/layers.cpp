#include "s2i/nn/layers.hpp"

#include <cmath>

namespace s2i::nn {

Tensor fan_in_uniform(Rng& rng, const Shape& shape, int64_t fan_in)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
    return rng.uniform_tensor(shape, -bound, bound);
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, bool with_bias)
{
    weight = register_parameter("weight", fan_in_uniform(rng, {out, in}, in));
    if (with_bias)
        bias = register_parameter("bias", fan_in_uniform(rng, {out}, in));
}

Conv2d::Conv2d(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad, Rng& rng, bool with_bias)
    : stride_(stride), pad_(pad)
{
    weight = register_parameter("weight", fan_in_uniform(rng, {out, in, k, k}, in * k * k));
    if (with_bias)
        bias = register_parameter("bias", fan_in_uniform(rng, {out}, in * k * k));
}

Conv1d::Conv1d(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad, Rng& rng, bool with_bias)
    : stride_(stride), pad_(pad)
{
    weight = register_parameter("weight", fan_in_uniform(rng, {out, in, k}, in * k));
    if (with_bias)
        bias = register_parameter("bias", fan_in_uniform(rng, {out}, in * k));
}

BatchNorm::BatchNorm(int64_t channels, double momentum_, double eps_) : momentum(momentum_), eps(eps_)
{
    gamma = register_parameter("gamma", Tensor::ones({channels}));
    beta = register_parameter("beta", Tensor::zeros({channels}));
    running_mean = register_buffer("running_mean", Tensor::zeros({channels}));
    running_var = register_buffer("running_var", Tensor::ones({channels}));
}

Tensor BatchNorm::forward(const Tensor& x)
{
    return batch_norm(x, gamma, beta, running_mean, running_var, is_training(), momentum, eps);
}

GRU::GRU(int64_t input, int64_t hidden, Rng& rng) : hidden_(hidden)
{
    w_ih = register_parameter("w_ih", fan_in_uniform(rng, {3 * hidden, input}, hidden));
    w_hh = register_parameter("w_hh", fan_in_uniform(rng, {3 * hidden, hidden}, hidden));
    b_ih = register_parameter("b_ih", fan_in_uniform(rng, {3 * hidden}, hidden));
    b_hh = register_parameter("b_hh", fan_in_uniform(rng, {3 * hidden}, hidden));
}

Tensor GRU::forward(const Tensor& x, bool reverse) const
{
    if (x.dim() != 3)
        throw DimensionError("GRU expects [N,T,F], got " + x.shape_str());
    const int64_t N = x.size(0), T = x.size(1), H = hidden_;
    if (T < 1)
        throw ContractError("GRU needs at least one step");
    // Input projections for every step at once.
    Tensor gi = dense(x, w_ih, b_ih);
    Tensor h = Tensor::zeros({N, H}, x.dtype());
    std::vector<Tensor> outs(T);
    for (int64_t k = 0; k < T; ++k) {
        const int64_t t = reverse ? T - 1 - k : k;
        Tensor git = reshape(narrow(gi, 1, t, 1), {N, 3 * H});
        Tensor ght = dense(h, w_hh, b_hh);
        Tensor r = sigmoid(narrow(git, 1, 0, H) + narrow(ght, 1, 0, H));
        Tensor z = sigmoid(narrow(git, 1, H, H) + narrow(ght, 1, H, H));
        Tensor n = tanh(narrow(git, 1, 2 * H, H) + r * narrow(ght, 1, 2 * H, H));
        h = (1.0 - z) * n + z * h;
        outs[t] = reshape(h, {N, 1, H});
    }
    return concat(outs, 1);
}

BiGRU::BiGRU(int64_t input, int64_t hidden, Rng& rng)
{
    fwd = register_module("fwd", std::make_shared<GRU>(input, hidden, rng));
    bwd = register_module("bwd", std::make_shared<GRU>(input, hidden, rng));
}

Tensor BiGRU::forward(const Tensor& x) const
{
    return concat({fwd->forward(x, false), bwd->forward(x, true)}, 2);
}

AttentionPool::AttentionPool(int64_t dim, int64_t attn_dim, Rng& rng)
{
    w = register_parameter("w", fan_in_uniform(rng, {attn_dim, dim}, dim));
    b = register_parameter("b", fan_in_uniform(rng, {attn_dim}, dim));
    v = register_parameter("v", fan_in_uniform(rng, {1, attn_dim}, attn_dim));
}

Tensor AttentionPool::forward(const Tensor& h, Tensor* scores) const
{
    if (h.dim() != 3)
        throw DimensionError("attention pooling expects [N,T,D], got " + h.shape_str());
    const int64_t N = h.size(0), T = h.size(1);
    Tensor e = reshape(dense(tanh(dense(h, w, b)), v, Tensor()), {N, T});
    Tensor a = softmax(e, 1);
    if (scores)
        *scores = a;
    return sum(h * reshape(a, {N, T, 1}), 1);
}

} // namespace s2i::nn
