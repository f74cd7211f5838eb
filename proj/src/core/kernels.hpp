#pragma once

// Internal numeric kernels shared by the op library. Not installed.

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "s2i/core/ops.hpp"
#include "s2i/core/tensor.hpp"

namespace s2i::kernels {

// C[M,N] = op(A) op(B) (+ C when accumulate). Row-major; A is [M,K]
// ([K,M] when trans_a), B is [K,N] ([N,K] when trans_b).
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate)
{
    using RM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RM> a(A, trans_a ? K : M, trans_a ? M : K);
    Eigen::Map<const RM> b(B, trans_b ? N : K, trans_b ? K : N);
    Eigen::Map<RM> c(C, M, N);
    if (!accumulate)
        c.setZero();
    if (!trans_a && !trans_b)
        c.noalias() += a * b;
    else if (!trans_a && trans_b)
        c.noalias() += a * b.transpose();
    else if (trans_a && !trans_b)
        c.noalias() += a.transpose() * b;
    else
        c.noalias() += a.transpose() * b.transpose();
}

// Coalesced strided iteration over a broadcast of two operands.
struct BroadcastPlan {
    Shape out;
    std::vector<int64_t> dims;
    std::vector<int64_t> stride_a, stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b);

// Calls f(out_offset, a_offset, b_offset, length, a_stride, b_stride) for
// each innermost run; output is contiguous within a run.
template <class F>
void for_each_run(const BroadcastPlan& p, F&& f)
{
    const int64_t nd = static_cast<int64_t>(p.dims.size());
    if (nd == 0) {
        f(int64_t{0}, int64_t{0}, int64_t{0}, int64_t{1}, int64_t{0}, int64_t{0});
        return;
    }
    const int64_t inner = p.dims[nd - 1];
    const int64_t sa = p.stride_a[nd - 1], sb = p.stride_b[nd - 1];
    std::vector<int64_t> idx(nd, 0);
    int64_t outer = 1;
    for (int64_t i = 0; i < nd - 1; ++i)
        outer *= p.dims[i];
    int64_t oa = 0, ob = 0;
    for (int64_t r = 0; r < outer; ++r) {
        f(r * inner, oa, ob, inner, sa, sb);
        for (int64_t d = nd - 2; d >= 0; --d) {
            ++idx[d];
            oa += p.stride_a[d];
            ob += p.stride_b[d];
            if (idx[d] < p.dims[d])
                break;
            oa -= p.stride_a[d] * p.dims[d];
            ob -= p.stride_b[d] * p.dims[d];
            idx[d] = 0;
        }
    }
}

template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, const Conv2dGeometry& g,
            int64_t OH, int64_t OW, T* cols, int64_t ld)
{
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
                T* row = cols + ((c * kh + i) * kw + j) * ld;
                const T* xc = x + c * H * W;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * g.stride_h - g.pad_h + i;
                    T* dst = row + oh * OW;
                    if (ih < 0 || ih >= H) {
                        for (int64_t ow = 0; ow < OW; ++ow)
                            dst[ow] = T(0);
                        continue;
                    }
                    const T* src = xc + ih * W;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * g.stride_w - g.pad_w + j;
                        dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
}

template <class T>
void col2im(const T* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, const Conv2dGeometry& g,
            int64_t OH, int64_t OW, T* x, int64_t ld)
{
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
                const T* row = cols + ((c * kh + i) * kw + j) * ld;
                T* xc = x + c * H * W;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * g.stride_h - g.pad_h + i;
                    if (ih < 0 || ih >= H)
                        continue;
                    const T* src = row + oh * OW;
                    T* dst = xc + ih * W;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * g.stride_w - g.pad_w + j;
                        if (iw >= 0 && iw < W)
                            dst[iw] += src[ow];
                    }
                }
            }
}

} // namespace s2i::kernels
