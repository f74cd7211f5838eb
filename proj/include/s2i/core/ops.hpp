#pragma once

#include <cstdint>
#include <vector>

#include "s2i/core/tensor.hpp"

// Differentiable tensor operations. Every op participates in the tape when
// grad mode is enabled. Ops whose backward is itself built from taped ops
// support second-order differentiation (needed by the gradient penalty);
// the remainder raise UnsupportedOpError under create_graph.
namespace s2i {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double c);
Tensor operator+(double c, const Tensor& a);
Tensor operator-(const Tensor& a, double c);
Tensor operator-(double c, const Tensor& a);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);
Tensor operator-(const Tensor& a);

// Reduces a broadcast result back to `shape` by summation.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// Unary maps.
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double p);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))
Tensor gelu(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);

enum class Activation { ReLU, LeakyReLU, GELU, Sigmoid, Tanh };
Tensor activation(const Tensor& x, Activation kind, double slope = 0.2);

// g * d/dx leaky_relu(x); slope 0 gives the relu case.
Tensor leaky_relu_backward(const Tensor& g, const Tensor& x, double slope);

// Reductions.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int64_t axis, bool keepdim = false);
// Euclidean norm of each row of a 2-D tensor; the subgradient at 0 is 0.
Tensor row_norm(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8);

// Shape manipulation.
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor flatten_rows(const Tensor& x);
Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length);
// Adjoint of narrow: zeros of `full` shape with x placed at [start, start+len).
Tensor narrow_backward(const Tensor& x, const Shape& full, int64_t axis, int64_t start);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor index_select(const Tensor& x, const std::vector<int64_t>& rows);
Tensor transpose(const Tensor& x);
// Swaps the last two axes of a tensor of rank >= 2.
Tensor swap_last_axes(const Tensor& x);

// 2-D products. op(a) = a^T when trans_a.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// y = x W^T + b over the trailing dim of x; bias may be undefined.
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dGeometry {
    int64_t stride_h = 1, stride_w = 1;
    int64_t pad_h = 0, pad_w = 0;
};

// Cross-correlation; x [N,C,H,W], w [O,C,kh,kw], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry g);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w, const Shape& input_shape, Conv2dGeometry g);
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, Conv2dGeometry g);
// x [N,C,T], w [O,C,k].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);
int64_t conv_out_size(int64_t in, int64_t kernel, int64_t stride, int64_t pad);

// Spatial resampling on [N,C,H,W]; pool_sum and upsample_nearest are adjoint.
Tensor pool_sum(const Tensor& x, int64_t factor);
Tensor avg_pool2d(const Tensor& x, int64_t factor);
Tensor upsample_nearest(const Tensor& x, int64_t factor);
Tensor global_avg_pool(const Tensor& x);

Tensor softmax(const Tensor& x, int64_t axis);
Tensor log_softmax(const Tensor& x, int64_t axis);
// Mean negative log-likelihood of rows of log-probabilities [N,K].
Tensor nll_loss(const Tensor& log_probs, const std::vector<int64_t>& targets);

// Batch normalisation over all axes but 1. In training mode normalises with
// batch statistics and updates the running buffers in place.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps);

} // namespace s2i
