#pragma once

// Shared helpers for the test binaries: finite-difference gradient checks
// and naive reference implementations used as oracles.

#include <cmath>
#include <cstdio>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "s2i/core/autograd.hpp"
#include "s2i/core/ops.hpp"
#include "s2i/core/rng.hpp"

namespace s2i::testing {

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst;
    int64_t checked = 0;
};

inline double rel_err(double a, double n, double floor = 1e-6)
{
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline std::string fmt_g(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4e", v);
    return buf;
}

// Compares tape gradients of L = sum(f() * R) (R fixed random) against
// central differences. All `inputs` must be float64 tensors read by f; they
// are perturbed in place. At most max_per_input entries are probed per input.
// The relative-error denominator never drops below 1e4 times the rounding
// noise of a central difference on L, so structurally zero gradients (a bias
// feeding batch norm) compare against that noise instead of against 1e-6.
inline GradCheck gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double eps = 1e-3,
                           int64_t max_per_input = 64, uint64_t seed = 7)
{
    Rng rng(seed);
    Tensor out = f();
    Tensor R = rng.normal_tensor(out.shape(), 1.0, out.dtype());
    auto loss_of = [&](const Tensor& y) { return sum(y * R); };
    std::vector<Tensor> analytic = grad({loss_of(out)}, inputs);
    const Tensor terms = out * R;
    double mass = 0.0;
    for (int64_t i = 0; i < terms.numel(); ++i)
        mass += std::abs(terms.at(i));
    const double noise = std::numeric_limits<double>::epsilon() * mass / eps;
    const double floor = std::max(1e-6, 1e4 * noise);

    GradCheck res;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor x = inputs[k];
        if (x.dtype() != DType::F64)
            throw ContractError("gradcheck needs float64 inputs");
        double* d = x.data<double>();
        const int64_t n = x.numel();
        std::vector<int64_t> idx;
        if (n <= max_per_input) {
            for (int64_t i = 0; i < n; ++i)
                idx.push_back(i);
        } else {
            for (int64_t i = 0; i < max_per_input; ++i)
                idx.push_back(rng.randint(0, n));
        }
        for (int64_t i : idx) {
            const double orig = d[i];
            d[i] = orig + eps;
            const double lp = loss_of(f()).item();
            d[i] = orig - eps;
            const double lm = loss_of(f()).item();
            d[i] = orig;
            const double num = (lp - lm) / (2.0 * eps);
            const double ana = analytic[k].at(i);
            const double e = rel_err(ana, num, floor);
            ++res.checked;
            if (e > res.max_rel_err) {
                res.max_rel_err = e;
                res.worst = "input " + std::to_string(k) + " elem " + std::to_string(i) + ": tape " + fmt_g(ana) +
                            " numeric " + fmt_g(num);
            }
        }
    }
    return res;
}

// Random float64 tensor with entries kept at least `margin` away from 0, so
// relu-type kinks are not straddled by finite differences.
inline Tensor away_from_zero(Rng& rng, const Shape& shape, double margin = 0.05, DType dt = DType::F64)
{
    Tensor t = Tensor::zeros(shape, dt);
    dispatch(dt, [&]<class T>() {
        for (int64_t i = 0; i < t.numel(); ++i) {
            double v = rng.uniform(margin, 1.0);
            t.data<T>()[i] = static_cast<T>(rng.uniform() < 0.5 ? -v : v);
        }
    });
    return t;
}

inline Tensor leaf(Tensor t)
{
    t.requires_grad_(true);
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw DimensionError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

// y[m][n] = sum_k a[m][k] b[k][n]
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int64_t M,
                                        int64_t K, int64_t N)
{
    std::vector<double> y(M * N, 0.0);
    for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < K; ++k)
                y[m * N + n] += a[m * K + k] * b[k * N + n];
    return y;
}

// Direct nested-loop cross-correlation for one image [C,H,W].
inline std::vector<double> naive_conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                        const std::vector<double>& bias, int64_t C, int64_t H, int64_t W, int64_t O,
                                        int64_t kh, int64_t kw, int64_t sh, int64_t sw, int64_t ph, int64_t pw,
                                        int64_t& OH, int64_t& OW)
{
    OH = (H + 2 * ph - kh) / sh + 1;
    OW = (W + 2 * pw - kw) / sw + 1;
    std::vector<double> y(O * OH * OW, 0.0);
    for (int64_t o = 0; o < O; ++o)
        for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
                double acc = bias.empty() ? 0.0 : bias[o];
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < kh; ++i)
                        for (int64_t j = 0; j < kw; ++j) {
                            int64_t ih = oh * sh - ph + i, iw = ow * sw - pw + j;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W)
                                continue;
                            acc += w[((o * C + c) * kh + i) * kw + j] * x[(c * H + ih) * W + iw];
                        }
                y[(o * OH + oh) * OW + ow] = acc;
            }
    return y;
}

} // namespace s2i::testing
