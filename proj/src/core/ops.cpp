#include "s2i/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "kernels.hpp"
#include "s2i/core/autograd.hpp"

namespace s2i {

namespace kernels {

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b)
{
    const size_t nd = std::max(a.size(), b.size());
    std::vector<int64_t> da(nd, 1), db(nd, 1);
    std::copy(a.begin(), a.end(), da.begin() + (nd - a.size()));
    std::copy(b.begin(), b.end(), db.begin() + (nd - b.size()));
    Shape out(nd);
    for (size_t i = 0; i < nd; ++i) {
        if (da[i] == db[i])
            out[i] = da[i];
        else if (da[i] == 1)
            out[i] = db[i];
        else if (db[i] == 1)
            out[i] = da[i];
        else
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    std::vector<int64_t> ca(nd), cb(nd);
    int64_t acc_a = 1, acc_b = 1;
    for (size_t k = nd; k-- > 0;) {
        ca[k] = da[k] == 1 ? 0 : acc_a;
        cb[k] = db[k] == 1 ? 0 : acc_b;
        acc_a *= da[k];
        acc_b *= db[k];
    }
    BroadcastPlan p;
    p.out = out;
    for (size_t i = 0; i < nd; ++i) {
        if (out[i] == 1)
            continue;
        if (!p.dims.empty()) {
            int64_t last = p.dims.back();
            // Merge with the previous kept dim when both operands walk it contiguously.
            size_t j = p.dims.size() - 1;
            if (p.stride_a[j] == ca[i] * out[i] && p.stride_b[j] == cb[i] * out[i]) {
                p.dims[j] = last * out[i];
                p.stride_a[j] = ca[i];
                p.stride_b[j] = cb[i];
                continue;
            }
        }
        p.dims.push_back(out[i]);
        p.stride_a.push_back(ca[i]);
        p.stride_b.push_back(cb[i]);
    }
    return p;
}

} // namespace kernels

namespace {

using kernels::BroadcastPlan;
using kernels::for_each_run;
using kernels::plan_broadcast;

void check_dtypes(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.dtype() != b.dtype())
        throw ContractError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " and " +
                            dtype_name(b.dtype()));
}

int64_t norm_axis(int64_t axis, int64_t nd)
{
    if (axis < 0)
        axis += nd;
    if (axis < 0 || axis >= nd)
        throw DimensionError("axis out of range for rank " + std::to_string(nd));
    return axis;
}

struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int64_t axis)
{
    AxisSplit r;
    for (int64_t i = 0; i < static_cast<int64_t>(s.size()); ++i) {
        if (i < axis)
            r.outer *= s[i];
        else if (i == axis)
            r.len = s[i];
        else
            r.inner *= s[i];
    }
    return r;
}

template <class Op>
Tensor binary_kernel(const Tensor& a, const Tensor& b, Op op)
{
    BroadcastPlan p = plan_broadcast(a.shape(), b.shape());
    Tensor out = Tensor::zeros(p.out, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* o = out.data<T>();
        for_each_run(p, [&](int64_t oo, int64_t ao, int64_t bo, int64_t len, int64_t sa, int64_t sb) {
            T* dst = o + oo;
            const T* x = pa + ao;
            const T* y = pb + bo;
            if (sa == 1 && sb == 1) {
                for (int64_t j = 0; j < len; ++j)
                    dst[j] = op(x[j], y[j]);
            } else if (sa == 1 && sb == 0) {
                const T yv = *y;
                for (int64_t j = 0; j < len; ++j)
                    dst[j] = op(x[j], yv);
            } else if (sa == 0 && sb == 1) {
                const T xv = *x;
                for (int64_t j = 0; j < len; ++j)
                    dst[j] = op(xv, y[j]);
            } else {
                for (int64_t j = 0; j < len; ++j)
                    dst[j] = op(x[j * sa], y[j * sb]);
            }
        });
    });
    return out;
}

template <class F>
Tensor map_kernel(const Tensor& x, F f)
{
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t i = 0, n = x.numel(); i < n; ++i)
            d[i] = static_cast<T>(f(s[i]));
    });
    return out;
}

// out_i = f(a_i, b_i) for same-shape operands.
template <class F>
Tensor zip_kernel(const Tensor& a, const Tensor& b, F f)
{
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        const T* x = a.data<T>();
        const T* y = b.data<T>();
        T* d = out.data<T>();
        for (int64_t i = 0, n = a.numel(); i < n; ++i)
            d[i] = static_cast<T>(f(x[i], y[i]));
    });
    return out;
}

template <class F>
Tensor zip3_kernel(const Tensor& a, const Tensor& b, const Tensor& c, F f)
{
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        const T* x = a.data<T>();
        const T* y = b.data<T>();
        const T* z = c.data<T>();
        T* d = out.data<T>();
        for (int64_t i = 0, n = a.numel(); i < n; ++i)
            d[i] = static_cast<T>(f(x[i], y[i], z[i]));
    });
    return out;
}

Tensor view(const Tensor& x, Shape shape)
{
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = x.dtype();
    impl->buffer = x.impl()->buffer;
    return Tensor(std::move(impl));
}

} // namespace

// ---------------------------------------------------------------------------
// Broadcasting arithmetic

Tensor sum_to(const Tensor& x, const Shape& shape)
{
    if (x.shape() == shape)
        return x;
    BroadcastPlan p = plan_broadcast(shape, x.shape());
    if (p.out != x.shape())
        throw DimensionError("sum_to: " + x.shape_str() + " does not reduce to " + shape_str(shape));
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        std::vector<double> acc(out.numel(), 0.0);
        const T* src = x.data<T>();
        for_each_run(p, [&](int64_t oo, int64_t ao, int64_t, int64_t len, int64_t sa, int64_t) {
            if (sa == 0) {
                double s = 0.0;
                for (int64_t j = 0; j < len; ++j)
                    s += src[oo + j];
                acc[ao] += s;
            } else {
                for (int64_t j = 0; j < len; ++j)
                    acc[ao + j * sa] += src[oo + j];
            }
        });
        T* d = out.data<T>();
        for (size_t i = 0; i < acc.size(); ++i)
            d[i] = static_cast<T>(acc[i]);
    });
    Shape xs = x.shape();
    return record(out, "sum_to", {x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{broadcast_to(g, xs)};
    });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape)
{
    if (x.shape() == shape)
        return x;
    BroadcastPlan p = plan_broadcast(x.shape(), shape);
    if (p.out != shape)
        throw DimensionError("broadcast_to: " + x.shape_str() + " cannot expand to " + shape_str(shape));
    Tensor out = Tensor::zeros(shape, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* src = x.data<T>();
        T* d = out.data<T>();
        for_each_run(p, [&](int64_t oo, int64_t ao, int64_t, int64_t len, int64_t sa, int64_t) {
            for (int64_t j = 0; j < len; ++j)
                d[oo + j] = src[ao + j * sa];
        });
    });
    Shape xs = x.shape();
    return record(out, "broadcast_to", {x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{sum_to(g, xs)};
    });
}

Tensor add(const Tensor& a, const Tensor& b)
{
    check_dtypes(a, b, "add");
    Tensor out = binary_kernel(a, b, [](auto x, auto y) { return x + y; });
    Shape sa = a.shape(), sb = b.shape();
    return record(out, "add", {a, b}, [sa, sb](const Tensor& g, const std::vector<bool>& need) {
        return std::vector<Tensor>{need[0] ? sum_to(g, sa) : Tensor(), need[1] ? sum_to(g, sb) : Tensor()};
    });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    check_dtypes(a, b, "sub");
    Tensor out = binary_kernel(a, b, [](auto x, auto y) { return x - y; });
    Shape sa = a.shape(), sb = b.shape();
    return record(out, "sub", {a, b}, [sa, sb](const Tensor& g, const std::vector<bool>& need) {
        return std::vector<Tensor>{need[0] ? sum_to(g, sa) : Tensor(), need[1] ? sum_to(neg(g), sb) : Tensor()};
    });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    check_dtypes(a, b, "mul");
    Tensor out = binary_kernel(a, b, [](auto x, auto y) { return x * y; });
    return record(out, "mul", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& need) {
        return std::vector<Tensor>{need[0] ? sum_to(mul(g, b), a.shape()) : Tensor(),
                                   need[1] ? sum_to(mul(g, a), b.shape()) : Tensor()};
    });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    check_dtypes(a, b, "div");
    Tensor out = binary_kernel(a, b, [](auto x, auto y) { return x / y; });
    return record(out, "div", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& need) {
        Tensor ga, gb;
        if (need[0])
            ga = sum_to(div(g, b), a.shape());
        if (need[1])
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
        return std::vector<Tensor>{ga, gb};
    });
}

Tensor add_scalar(const Tensor& a, double c)
{
    Tensor out = map_kernel(a, [c](auto x) { return x + c; });
    return record(out, "add_scalar", {a}, [](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{g};
    });
}

Tensor mul_scalar(const Tensor& a, double c)
{
    Tensor out = map_kernel(a, [c](auto x) { return x * c; });
    return record(out, "mul_scalar", {a}, [c](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{mul_scalar(g, c)};
    });
}

Tensor neg(const Tensor& a)
{
    return mul_scalar(a, -1.0);
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
Tensor operator-(double c, const Tensor& a) { return add_scalar(neg(a), c); }
Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Unary maps

Tensor exp(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) { return std::exp(v); });
    return record(y, "exp", {x}, [y = y.detach()](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, y, [](auto a, auto b) { return a * b; })};
    }, false);
}

Tensor log(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) { return std::log(v); });
    return record(y, "log", {x}, [x](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, x, [](auto a, auto b) { return a / b; })};
    }, false);
}

Tensor sqrt(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) { return std::sqrt(v); });
    return record(y, "sqrt", {x}, [y = y.detach()](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, y, [](auto a, auto b) { return a * 0.5 / b; })};
    }, false);
}

Tensor pow_scalar(const Tensor& x, double p)
{
    Tensor y = map_kernel(x, [p](auto v) { return std::pow(static_cast<double>(v), p); });
    return record(y, "pow_scalar", {x}, [x, p](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{
            zip_kernel(g, x, [p](auto a, auto b) { return a * p * std::pow(static_cast<double>(b), p - 1.0); })};
    }, false);
}

Tensor tanh(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) { return std::tanh(v); });
    return record(y, "tanh", {x}, [y = y.detach()](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, y, [](auto a, auto b) { return a * (1 - b * b); })};
    }, false);
}

Tensor sigmoid(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) {
        using T = decltype(v);
        return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    });
    return record(y, "sigmoid", {x}, [y = y.detach()](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, y, [](auto a, auto b) { return a * b * (1 - b); })};
    }, false);
}

Tensor leaky_relu_backward(const Tensor& g, const Tensor& x, double slope)
{
    check_dtypes(g, x, "leaky_relu_backward");
    Tensor out = zip_kernel(g, x, [slope](auto a, auto b) {
        using T = decltype(a);
        return b > 0 ? a : a * static_cast<T>(slope);
    });
    // Linear in g; piecewise constant in x.
    return record(out, "leaky_relu_backward", {g, x}, [x, slope](const Tensor& gg, const std::vector<bool>& need) {
        return std::vector<Tensor>{need[0] ? leaky_relu_backward(gg, x, slope) : Tensor(), Tensor()};
    });
}

Tensor leaky_relu(const Tensor& x, double slope)
{
    Tensor y = map_kernel(x, [slope](auto v) {
        using T = decltype(v);
        return v > 0 ? v : v * static_cast<T>(slope);
    });
    return record(y, slope == 0.0 ? "relu" : "leaky_relu", {x}, [x, slope](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{leaky_relu_backward(g, x, slope)};
    });
}

Tensor relu(const Tensor& x)
{
    return leaky_relu(x, 0.0);
}

namespace {
constexpr double kGeluScale = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
} // namespace

Tensor gelu(const Tensor& x)
{
    Tensor y = map_kernel(x, [](auto v) {
        using T = decltype(v);
        return T(0.5) * v * (T(1) + std::tanh(T(kGeluScale) * (v + T(kGeluCubic) * v * v * v)));
    });
    return record(y, "gelu", {x}, [x](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, x, [](auto a, auto v) {
            using T = decltype(v);
            T t = std::tanh(T(kGeluScale) * (v + T(kGeluCubic) * v * v * v));
            T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * T(kGeluScale) * (T(1) + T(3 * kGeluCubic) * v * v);
            return a * d;
        })};
    }, false);
}

Tensor clamp_min(const Tensor& x, double lo)
{
    Tensor y = map_kernel(x, [lo](auto v) {
        using T = decltype(v);
        return std::max(v, static_cast<T>(lo));
    });
    return record(y, "clamp_min", {x}, [x, lo](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{zip_kernel(g, x, [lo](auto a, auto b) {
            using T = decltype(a);
            return b > static_cast<T>(lo) ? a : T(0);
        })};
    }, false);
}

Tensor activation(const Tensor& x, Activation kind, double slope)
{
    switch (kind) {
    case Activation::ReLU: return relu(x);
    case Activation::LeakyReLU: return leaky_relu(x, slope);
    case Activation::GELU: return gelu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
    }
    throw ConfigError("unknown activation");
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x)
{
    Tensor out = Tensor::zeros({}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        double acc = 0.0;
        for (int64_t i = 0, n = x.numel(); i < n; ++i)
            acc += s[i];
        out.data<T>()[0] = static_cast<T>(acc);
    });
    Shape xs = x.shape();
    return record(out, "sum", {x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{broadcast_to(g, xs)};
    });
}

Tensor sum(const Tensor& x, int64_t axis, bool keepdim)
{
    axis = norm_axis(axis, x.dim());
    AxisSplit sp = split_at(x.shape(), axis);
    Shape keep = x.shape();
    keep[axis] = 1;
    Tensor out = Tensor::zeros(keep, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        std::vector<double> acc(sp.inner);
        for (int64_t o = 0; o < sp.outer; ++o) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int64_t l = 0; l < sp.len; ++l) {
                const T* row = s + (o * sp.len + l) * sp.inner;
                for (int64_t i = 0; i < sp.inner; ++i)
                    acc[i] += row[i];
            }
            for (int64_t i = 0; i < sp.inner; ++i)
                d[o * sp.inner + i] = static_cast<T>(acc[i]);
        }
    });
    Shape xs = x.shape();
    out = record(out, "sum_axis", {x}, [xs, keep](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{broadcast_to(reshape(g, keep), xs)};
    });
    if (keepdim)
        return out;
    Shape squeezed = x.shape();
    squeezed.erase(squeezed.begin() + axis);
    return reshape(out, squeezed);
}

Tensor mean(const Tensor& x)
{
    if (x.numel() == 0)
        throw ContractError("mean of empty tensor");
    return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int64_t axis, bool keepdim)
{
    int64_t n = x.size(axis);
    return mul_scalar(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor row_norm(const Tensor& x)
{
    if (x.dim() != 2)
        throw DimensionError("row_norm expects a 2-D tensor, got " + x.shape_str());
    const int64_t n = x.size(0), m = x.size(1);
    Tensor out = Tensor::zeros({n}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < m; ++j)
                acc += static_cast<double>(s[i * m + j]) * s[i * m + j];
            out.data<T>()[i] = static_cast<T>(std::sqrt(acc));
        }
    });
    return record(out, "row_norm", {x}, [x, out = out.detach(), n, m](const Tensor& g, const std::vector<bool>&) {
        Tensor gx = Tensor::zeros(x.shape(), x.dtype());
        dispatch(x.dtype(), [&]<class T>() {
            const T* s = x.data<T>();
            const T* nr = out.data<T>();
            const T* gv = g.data<T>();
            T* d = gx.data<T>();
            for (int64_t i = 0; i < n; ++i) {
                if (nr[i] == T(0))
                    continue;
                T scale = gv[i] / nr[i];
                for (int64_t j = 0; j < m; ++j)
                    d[i * m + j] = s[i * m + j] * scale;
            }
        });
        return std::vector<Tensor>{gx};
    }, false);
}

Tensor l2_normalize_rows(const Tensor& x, double eps)
{
    Tensor n = clamp_min(row_norm(x), eps);
    return div(x, reshape(n, {x.size(0), 1}));
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, const Shape& shape_in)
{
    Shape shape = shape_in;
    int64_t infer = -1, known = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0)
                throw DimensionError("reshape: more than one -1 in " + shape_str(shape_in));
            infer = static_cast<int64_t>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0) {
        if (known == 0 || x.numel() % known != 0)
            throw DimensionError("reshape: cannot infer " + shape_str(shape_in) + " from " + x.shape_str());
        shape[infer] = x.numel() / known;
    }
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: " + x.shape_str() + " to " + shape_str(shape));
    if (shape == x.shape())
        return x;
    Tensor out = view(x, shape);
    Shape xs = x.shape();
    return record(out, "reshape", {x}, [xs](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{reshape(g, xs)};
    });
}

Tensor flatten_rows(const Tensor& x)
{
    return reshape(x, {x.size(0), -1});
}

Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length)
{
    axis = norm_axis(axis, x.dim());
    if (start < 0 || length < 0 || start + length > x.shape()[axis])
        throw DimensionError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                             ") outside axis of " + x.shape_str());
    AxisSplit sp = split_at(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = length;
    Tensor out = Tensor::zeros(os, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t o = 0; o < sp.outer; ++o)
            std::memcpy(d + o * length * sp.inner, s + (o * sp.len + start) * sp.inner,
                        sizeof(T) * length * sp.inner);
    });
    Shape xs = x.shape();
    return record(out, "narrow", {x}, [xs, axis, start](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{narrow_backward(g, xs, axis, start)};
    });
}

Tensor narrow_backward(const Tensor& x, const Shape& full, int64_t axis, int64_t start)
{
    axis = norm_axis(axis, static_cast<int64_t>(full.size()));
    AxisSplit sp = split_at(full, axis);
    const int64_t length = x.shape()[axis];
    Tensor out = Tensor::zeros(full, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t o = 0; o < sp.outer; ++o)
            std::memcpy(d + (o * sp.len + start) * sp.inner, s + o * length * sp.inner,
                        sizeof(T) * length * sp.inner);
    });
    return record(out, "narrow_backward", {x}, [axis, start, length](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{narrow(g, axis, start, length)};
    });
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis)
{
    if (xs.empty())
        throw ContractError("concat of zero tensors");
    axis = norm_axis(axis, xs[0].dim());
    Shape os = xs[0].shape();
    int64_t total = 0;
    for (const Tensor& t : xs) {
        check_dtypes(xs[0], t, "concat");
        Shape a = t.shape(), b = xs[0].shape();
        if (a.size() != b.size())
            throw DimensionError("concat: rank mismatch " + t.shape_str() + " vs " + xs[0].shape_str());
        a[axis] = b[axis] = 0;
        if (a != b)
            throw DimensionError("concat: " + t.shape_str() + " vs " + xs[0].shape_str());
        total += t.shape()[axis];
    }
    os[axis] = total;
    Tensor out = Tensor::zeros(os, xs[0].dtype());
    AxisSplit sp = split_at(os, axis);
    std::vector<int64_t> starts;
    dispatch(out.dtype(), [&]<class T>() {
        T* d = out.data<T>();
        int64_t off = 0;
        for (const Tensor& t : xs) {
            const int64_t len = t.shape()[axis];
            const T* s = t.data<T>();
            for (int64_t o = 0; o < sp.outer; ++o)
                std::memcpy(d + (o * sp.len + off) * sp.inner, s + o * len * sp.inner, sizeof(T) * len * sp.inner);
            starts.push_back(off);
            off += len;
        }
    });
    std::vector<int64_t> lens;
    for (const Tensor& t : xs)
        lens.push_back(t.shape()[axis]);
    return record(out, "concat", xs, [axis, starts, lens](const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(need.size());
        for (size_t i = 0; i < need.size(); ++i)
            if (need[i])
                r[i] = narrow(g, axis, starts[i], lens[i]);
        return r;
    });
}

Tensor index_select(const Tensor& x, const std::vector<int64_t>& rows)
{
    const int64_t n = x.size(0);
    const int64_t row = x.numel() / std::max<int64_t>(n, 1);
    Shape os = x.shape();
    os[0] = static_cast<int64_t>(rows.size());
    Tensor out = Tensor::zeros(os, x.dtype());
    for (int64_t r : rows)
        if (r < 0 || r >= n)
            throw DimensionError("index_select: row " + std::to_string(r) + " out of range for " + x.shape_str());
    dispatch(x.dtype(), [&]<class T>() {
        for (size_t i = 0; i < rows.size(); ++i)
            std::memcpy(out.data<T>() + i * row, x.data<T>() + rows[i] * row, sizeof(T) * row);
    });
    Shape xs = x.shape();
    return record(out, "index_select", {x}, [xs, rows, row](const Tensor& g, const std::vector<bool>&) {
        Tensor gx = Tensor::zeros(xs, g.dtype());
        dispatch(g.dtype(), [&]<class T>() {
            for (size_t i = 0; i < rows.size(); ++i)
                for (int64_t j = 0; j < row; ++j)
                    gx.data<T>()[rows[i] * row + j] += g.data<T>()[i * row + j];
        });
        return std::vector<Tensor>{gx};
    }, false);
}

Tensor transpose(const Tensor& x)
{
    if (x.dim() != 2)
        throw DimensionError("transpose expects 2-D, got " + x.shape_str());
    const int64_t r = x.size(0), c = x.size(1);
    Tensor out = Tensor::zeros({c, r}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j)
                d[j * r + i] = s[i * c + j];
    });
    return record(out, "transpose", {x}, [](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{transpose(g)};
    });
}

Tensor swap_last_axes(const Tensor& x)
{
    if (x.dim() < 2)
        throw DimensionError("swap_last_axes expects rank >= 2, got " + x.shape_str());
    if (x.dim() == 2)
        return transpose(x);
    const int64_t r = x.size(-2), c = x.size(-1), batch = x.numel() / std::max<int64_t>(r * c, 1);
    Shape os = x.shape();
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    Tensor out = Tensor::zeros(os, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    d[b * r * c + j * r + i] = s[b * r * c + i * c + j];
    });
    return record(out, "swap_last_axes", {x}, [](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{swap_last_axes(g)};
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb)
{
    check_dtypes(a, b, "matmul");
    if (a.dim() != 2 || b.dim() != 2)
        throw DimensionError("matmul expects 2-D operands, got " + a.shape_str() + " and " + b.shape_str());
    const int64_t M = ta ? a.size(1) : a.size(0);
    const int64_t K = ta ? a.size(0) : a.size(1);
    const int64_t Kb = tb ? b.size(1) : b.size(0);
    const int64_t N = tb ? b.size(0) : b.size(1);
    if (K != Kb)
        throw DimensionError("matmul: inner dims differ for " + a.shape_str() + (ta ? "^T" : "") + " x " +
                             b.shape_str() + (tb ? "^T" : ""));
    Tensor out = Tensor::zeros({M, N}, a.dtype());
    dispatch(a.dtype(), [&]<class T>() {
        kernels::gemm<T>(ta, tb, M, N, K, a.data<T>(), b.data<T>(), out.data<T>(), false);
    });
    return record(out, "matmul", {a, b}, [a, b, ta, tb](const Tensor& g, const std::vector<bool>& need) {
        Tensor ga, gb;
        if (!ta && !tb) {
            if (need[0]) ga = matmul(g, b, false, true);
            if (need[1]) gb = matmul(a, g, true, false);
        } else if (!ta && tb) {
            if (need[0]) ga = matmul(g, b, false, false);
            if (need[1]) gb = matmul(g, a, true, false);
        } else if (ta && !tb) {
            if (need[0]) ga = matmul(b, g, false, true);
            if (need[1]) gb = matmul(a, g, false, false);
        } else {
            if (need[0]) ga = matmul(b, g, true, true);
            if (need[1]) gb = matmul(g, a, true, true);
        }
        return std::vector<Tensor>{ga, gb};
    });
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    if (weight.dim() != 2)
        throw DimensionError("dense weight must be 2-D, got " + weight.shape_str());
    const int64_t in = weight.size(1), out_dim = weight.size(0);
    if (x.dim() < 1 || x.shape().back() != in)
        throw DimensionError("dense: input " + x.shape_str() + " does not match weight " + weight.shape_str());
    Shape lead(x.shape().begin(), x.shape().end() - 1);
    Tensor x2 = reshape(x, {shape_numel(lead), in});
    Tensor y = matmul(x2, weight, false, true);
    if (bias.defined()) {
        if (bias.shape() != Shape{out_dim})
            throw DimensionError("dense: bias " + bias.shape_str() + " does not match weight " + weight.shape_str());
        y = add(y, bias);
    }
    Shape os = lead;
    os.push_back(out_dim);
    return reshape(y, os);
}

// ---------------------------------------------------------------------------
// Convolution

int64_t conv_out_size(int64_t in, int64_t kernel, int64_t stride, int64_t pad)
{
    if (stride < 1)
        throw ConfigError("conv stride must be >= 1");
    const int64_t span = in + 2 * pad - kernel;
    if (span < 0)
        throw ConfigError("kernel " + std::to_string(kernel) + " exceeds padded input " + std::to_string(in + 2 * pad));
    if (span % stride != 0)
        throw ConfigError("non-integral conv output size: (" + std::to_string(in) + " + 2*" + std::to_string(pad) +
                          " - " + std::to_string(kernel) + ") / " + std::to_string(stride));
    return span / stride + 1;
}

namespace {

struct ConvDims {
    int64_t N, C, H, W, O, kh, kw, OH, OW;
    int64_t P() const { return OH * OW; }
    int64_t CKK() const { return C * kh * kw; }
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, const Conv2dGeometry& g)
{
    if (xs.size() != 4 || ws.size() != 4)
        throw DimensionError("conv2d expects x [N,C,H,W] and w [O,C,kh,kw], got " + shape_str(xs) + " and " +
                             shape_str(ws));
    if (xs[1] != ws[1])
        throw DimensionError("conv2d: input channels of " + shape_str(xs) + " do not match kernel " + shape_str(ws));
    ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], 0, 0};
    d.OH = conv_out_size(d.H, d.kh, g.stride_h, g.pad_h);
    d.OW = conv_out_size(d.W, d.kw, g.stride_w, g.pad_w);
    return d;
}

bool is_pointwise(const ConvDims& d, const Conv2dGeometry& g)
{
    return d.kh == 1 && d.kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 && g.pad_w == 0;
}

// Samples per GEMM so that small spatial maps still give wide products.
int64_t conv_chunk(const ConvDims& d)
{
    const int64_t P = d.P();
    if (P >= 1024)
        return 1;
    return std::max<int64_t>(1, std::min<int64_t>(d.N, 1024 / P));
}

// cols[CKK, b*P] for samples n0..n0+b.
template <class T>
void gather_cols(const T* x, const ConvDims& d, const Conv2dGeometry& g, int64_t n0, int64_t b, T* cols)
{
    const int64_t P = d.P(), ld = b * P;
    for (int64_t k = 0; k < b; ++k) {
        const T* xn = x + (n0 + k) * d.C * d.H * d.W;
        if (is_pointwise(d, g)) {
            for (int64_t c = 0; c < d.C; ++c)
                std::memcpy(cols + c * ld + k * P, xn + c * P, sizeof(T) * P);
        } else {
            kernels::im2col(xn, d.C, d.H, d.W, d.kh, d.kw, g, d.OH, d.OW, cols + k * P, ld);
        }
    }
}

// dst[O, b*P] from src[N,O,P] samples n0..n0+b.
template <class T>
void gather_rows(const T* src, int64_t O, int64_t P, int64_t n0, int64_t b, T* dst)
{
    for (int64_t k = 0; k < b; ++k)
        for (int64_t o = 0; o < O; ++o)
            std::memcpy(dst + o * b * P + k * P, src + ((n0 + k) * O + o) * P, sizeof(T) * P);
}

template <class T>
void scatter_rows(const T* src, int64_t O, int64_t P, int64_t n0, int64_t b, T* dst)
{
    for (int64_t k = 0; k < b; ++k)
        for (int64_t o = 0; o < O; ++o)
            std::memcpy(dst + ((n0 + k) * O + o) * P, src + o * b * P + k * P, sizeof(T) * P);
}

Tensor conv2d_raw(const Tensor& x, const Tensor& w, const Conv2dGeometry& g)
{
    ConvDims d = conv_dims(x.shape(), w.shape(), g);
    Tensor y = Tensor::zeros({d.N, d.O, d.OH, d.OW}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const int64_t P = d.P(), CKK = d.CKK(), nb = conv_chunk(d);
        std::vector<T> cols(CKK * nb * P), tmp(nb > 1 ? d.O * nb * P : 0);
        const T* xd = x.data<T>();
        T* yd = y.data<T>();
        for (int64_t n0 = 0; n0 < d.N; n0 += nb) {
            const int64_t b = std::min(nb, d.N - n0);
            const T* colp = cols.data();
            if (b == 1 && is_pointwise(d, g))
                colp = xd + n0 * d.C * d.H * d.W;
            else
                gather_cols(xd, d, g, n0, b, cols.data());
            if (b == 1) {
                kernels::gemm<T>(false, false, d.O, P, CKK, w.data<T>(), colp, yd + n0 * d.O * P, false);
            } else {
                kernels::gemm<T>(false, false, d.O, b * P, CKK, w.data<T>(), colp, tmp.data(), false);
                scatter_rows(tmp.data(), d.O, P, n0, b, yd);
            }
        }
    });
    return y;
}

Tensor conv2d_input_grad_raw(const Tensor& gy, const Tensor& w, const Shape& xs, const Conv2dGeometry& g)
{
    ConvDims d = conv_dims(xs, w.shape(), g);
    if (gy.shape() != Shape{d.N, d.O, d.OH, d.OW})
        throw DimensionError("conv2d_input_grad: grad " + gy.shape_str() + " inconsistent with input " + shape_str(xs));
    Tensor gx = Tensor::zeros(xs, gy.dtype());
    dispatch(gy.dtype(), [&]<class T>() {
        const int64_t P = d.P(), CKK = d.CKK(), nb = conv_chunk(d);
        std::vector<T> cols(CKK * nb * P), gp(nb > 1 ? d.O * nb * P : 0);
        const T* gd = gy.data<T>();
        T* xd = gx.data<T>();
        const bool pw = is_pointwise(d, g);
        for (int64_t n0 = 0; n0 < d.N; n0 += nb) {
            const int64_t b = std::min(nb, d.N - n0);
            const T* gsrc = gd + n0 * d.O * P;
            if (b > 1) {
                gather_rows(gd, d.O, P, n0, b, gp.data());
                gsrc = gp.data();
            }
            if (b == 1 && pw) {
                kernels::gemm<T>(true, false, CKK, P, d.O, w.data<T>(), gsrc, xd + n0 * d.C * P, false);
                continue;
            }
            kernels::gemm<T>(true, false, CKK, b * P, d.O, w.data<T>(), gsrc, cols.data(), false);
            for (int64_t k = 0; k < b; ++k) {
                T* xn = xd + (n0 + k) * d.C * d.H * d.W;
                if (pw) {
                    for (int64_t c = 0; c < d.C; ++c)
                        std::memcpy(xn + c * P, cols.data() + c * b * P + k * P, sizeof(T) * P);
                } else {
                    kernels::col2im(cols.data() + k * P, d.C, d.H, d.W, d.kh, d.kw, g, d.OH, d.OW, xn, b * P);
                }
            }
        }
    });
    return gx;
}

Tensor conv2d_weight_grad_raw(const Tensor& x, const Tensor& gy, const Shape& ws, const Conv2dGeometry& g)
{
    ConvDims d = conv_dims(x.shape(), ws, g);
    if (gy.shape() != Shape{d.N, d.O, d.OH, d.OW})
        throw DimensionError("conv2d_weight_grad: grad " + gy.shape_str() + " inconsistent with input " +
                             x.shape_str());
    Tensor gw = Tensor::zeros(ws, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const int64_t P = d.P(), CKK = d.CKK(), nb = conv_chunk(d);
        std::vector<T> cols(CKK * nb * P), gp(nb > 1 ? d.O * nb * P : 0);
        const T* xd = x.data<T>();
        const T* gd = gy.data<T>();
        for (int64_t n0 = 0; n0 < d.N; n0 += nb) {
            const int64_t b = std::min(nb, d.N - n0);
            const T* colp = cols.data();
            if (b == 1 && is_pointwise(d, g))
                colp = xd + n0 * d.C * P;
            else
                gather_cols(xd, d, g, n0, b, cols.data());
            const T* gsrc = gd + n0 * d.O * P;
            if (b > 1) {
                gather_rows(gd, d.O, P, n0, b, gp.data());
                gsrc = gp.data();
            }
            kernels::gemm<T>(false, true, d.O, CKK, b * P, gsrc, colp, gw.data<T>(), true);
        }
    });
    return gw;
}

} // namespace

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w, const Shape& input_shape, Conv2dGeometry g)
{
    check_dtypes(grad_out, w, "conv2d_input_grad");
    Tensor out = conv2d_input_grad_raw(grad_out, w, input_shape, g);
    Shape ws = w.shape();
    return record(out, "conv2d_input_grad", {grad_out, w},
                  [grad_out, w, ws, g](const Tensor& gg, const std::vector<bool>& need) {
                      return std::vector<Tensor>{need[0] ? conv2d(gg, w, Tensor(), g) : Tensor(),
                                                 need[1] ? conv2d_weight_grad(gg, grad_out, ws, g) : Tensor()};
                  });
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, Conv2dGeometry g)
{
    check_dtypes(x, grad_out, "conv2d_weight_grad");
    Tensor out = conv2d_weight_grad_raw(x, grad_out, weight_shape, g);
    Shape xs = x.shape();
    return record(out, "conv2d_weight_grad", {x, grad_out},
                  [x, grad_out, xs, g](const Tensor& gg, const std::vector<bool>& need) {
                      return std::vector<Tensor>{need[0] ? conv2d_input_grad(grad_out, gg, xs, g) : Tensor(),
                                                 need[1] ? conv2d(x, gg, Tensor(), g) : Tensor()};
                  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dGeometry g)
{
    check_dtypes(x, w, "conv2d");
    Tensor y = conv2d_raw(x, w, g);
    Shape xs = x.shape(), ws = w.shape();
    y = record(y, "conv2d", {x, w}, [x, w, xs, ws, g](const Tensor& gy, const std::vector<bool>& need) {
        return std::vector<Tensor>{need[0] ? conv2d_input_grad(gy, w, xs, g) : Tensor(),
                                   need[1] ? conv2d_weight_grad(x, gy, ws, g) : Tensor()};
    });
    if (bias.defined()) {
        if (bias.shape() != Shape{w.size(0)})
            throw DimensionError("conv2d: bias " + bias.shape_str() + " does not match kernel " + w.shape_str());
        y = add(y, reshape(bias, {1, w.size(0), 1, 1}));
    }
    return y;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad)
{
    return conv2d(x, w, bias, Conv2dGeometry{stride, stride, pad, pad});
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad)
{
    if (x.dim() != 3 || w.dim() != 3)
        throw DimensionError("conv1d expects x [N,C,T] and w [O,C,k], got " + x.shape_str() + " and " + w.shape_str());
    Tensor y = conv2d(reshape(x, {x.size(0), x.size(1), 1, x.size(2)}), reshape(w, {w.size(0), w.size(1), 1, w.size(2)}),
                      bias, Conv2dGeometry{1, stride, 0, pad});
    return reshape(y, {y.size(0), y.size(1), y.size(3)});
}

// ---------------------------------------------------------------------------
// Spatial resampling

Tensor pool_sum(const Tensor& x, int64_t f)
{
    if (x.dim() != 4)
        throw DimensionError("pool_sum expects [N,C,H,W], got " + x.shape_str());
    if (f < 1 || x.size(2) % f || x.size(3) % f)
        throw ConfigError("pool factor " + std::to_string(f) + " does not divide " + x.shape_str());
    const int64_t NC = x.size(0) * x.size(1), H = x.size(2), W = x.size(3), OH = H / f, OW = W / f;
    Tensor out = Tensor::zeros({x.size(0), x.size(1), OH, OW}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t p = 0; p < NC; ++p)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w)
                    d[(p * OH + h / f) * OW + w / f] += s[(p * H + h) * W + w];
    });
    return record(out, "pool_sum", {x}, [f](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{upsample_nearest(g, f)};
    });
}

Tensor avg_pool2d(const Tensor& x, int64_t f)
{
    return mul_scalar(pool_sum(x, f), 1.0 / static_cast<double>(f * f));
}

Tensor upsample_nearest(const Tensor& x, int64_t f)
{
    if (x.dim() != 4)
        throw DimensionError("upsample_nearest expects [N,C,H,W], got " + x.shape_str());
    if (f < 1)
        throw ConfigError("upsample factor must be >= 1");
    if (f == 1)
        return x;
    const int64_t NC = x.size(0) * x.size(1), H = x.size(2), W = x.size(3), OH = H * f, OW = W * f;
    Tensor out = Tensor::zeros({x.size(0), x.size(1), OH, OW}, x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = out.data<T>();
        for (int64_t p = 0; p < NC; ++p)
            for (int64_t h = 0; h < OH; ++h) {
                const T* row = s + (p * H + h / f) * W;
                T* dst = d + (p * OH + h) * OW;
                for (int64_t w = 0; w < OW; ++w)
                    dst[w] = row[w / f];
            }
    });
    return record(out, "upsample_nearest", {x}, [f](const Tensor& g, const std::vector<bool>&) {
        return std::vector<Tensor>{pool_sum(g, f)};
    });
}

Tensor global_avg_pool(const Tensor& x)
{
    if (x.dim() != 4)
        throw DimensionError("global_avg_pool expects [N,C,H,W], got " + x.shape_str());
    return mean(reshape(x, {x.size(0), x.size(1), x.size(2) * x.size(3)}), 2);
}

// ---------------------------------------------------------------------------
// Normalised exponentials

Tensor softmax(const Tensor& x, int64_t axis)
{
    axis = norm_axis(axis, x.dim());
    AxisSplit sp = split_at(x.shape(), axis);
    Tensor y = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = y.data<T>();
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t i = 0; i < sp.inner; ++i) {
                const int64_t base = o * sp.len * sp.inner + i;
                T mx = s[base];
                for (int64_t l = 1; l < sp.len; ++l)
                    mx = std::max(mx, s[base + l * sp.inner]);
                double z = 0.0;
                for (int64_t l = 0; l < sp.len; ++l) {
                    T e = std::exp(s[base + l * sp.inner] - mx);
                    d[base + l * sp.inner] = e;
                    z += e;
                }
                for (int64_t l = 0; l < sp.len; ++l)
                    d[base + l * sp.inner] = static_cast<T>(d[base + l * sp.inner] / z);
            }
    });
    return record(y, "softmax", {x}, [y = y.detach(), sp](const Tensor& g, const std::vector<bool>&) {
        Tensor gx = Tensor::zeros(y.shape(), y.dtype());
        dispatch(y.dtype(), [&]<class T>() {
            const T* yv = y.data<T>();
            const T* gv = g.data<T>();
            T* d = gx.data<T>();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    const int64_t base = o * sp.len * sp.inner + i;
                    double dot = 0.0;
                    for (int64_t l = 0; l < sp.len; ++l)
                        dot += static_cast<double>(gv[base + l * sp.inner]) * yv[base + l * sp.inner];
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t k = base + l * sp.inner;
                        d[k] = static_cast<T>(yv[k] * (gv[k] - dot));
                    }
                }
        });
        return std::vector<Tensor>{gx};
    }, false);
}

Tensor log_softmax(const Tensor& x, int64_t axis)
{
    axis = norm_axis(axis, x.dim());
    AxisSplit sp = split_at(x.shape(), axis);
    Tensor y = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>() {
        const T* s = x.data<T>();
        T* d = y.data<T>();
        for (int64_t o = 0; o < sp.outer; ++o)
            for (int64_t i = 0; i < sp.inner; ++i) {
                const int64_t base = o * sp.len * sp.inner + i;
                T mx = s[base];
                for (int64_t l = 1; l < sp.len; ++l)
                    mx = std::max(mx, s[base + l * sp.inner]);
                double z = 0.0;
                for (int64_t l = 0; l < sp.len; ++l)
                    z += std::exp(static_cast<double>(s[base + l * sp.inner] - mx));
                const double lz = std::log(z) + mx;
                for (int64_t l = 0; l < sp.len; ++l)
                    d[base + l * sp.inner] = static_cast<T>(s[base + l * sp.inner] - lz);
            }
    });
    return record(y, "log_softmax", {x}, [y = y.detach(), sp](const Tensor& g, const std::vector<bool>&) {
        Tensor gx = Tensor::zeros(y.shape(), y.dtype());
        dispatch(y.dtype(), [&]<class T>() {
            const T* yv = y.data<T>();
            const T* gv = g.data<T>();
            T* d = gx.data<T>();
            for (int64_t o = 0; o < sp.outer; ++o)
                for (int64_t i = 0; i < sp.inner; ++i) {
                    const int64_t base = o * sp.len * sp.inner + i;
                    double gs = 0.0;
                    for (int64_t l = 0; l < sp.len; ++l)
                        gs += gv[base + l * sp.inner];
                    for (int64_t l = 0; l < sp.len; ++l) {
                        const int64_t k = base + l * sp.inner;
                        d[k] = static_cast<T>(gv[k] - std::exp(static_cast<double>(yv[k])) * gs);
                    }
                }
        });
        return std::vector<Tensor>{gx};
    }, false);
}

Tensor nll_loss(const Tensor& log_probs, const std::vector<int64_t>& targets)
{
    if (log_probs.dim() != 2 || log_probs.size(0) != static_cast<int64_t>(targets.size()))
        throw DimensionError("nll_loss: log-probs " + log_probs.shape_str() + " vs " + std::to_string(targets.size()) +
                             " targets");
    const int64_t N = log_probs.size(0), K = log_probs.size(1);
    for (int64_t t : targets)
        if (t < 0 || t >= K)
            throw DimensionError("nll_loss: target " + std::to_string(t) + " out of range " + std::to_string(K));
    Tensor out = Tensor::zeros({}, log_probs.dtype());
    dispatch(log_probs.dtype(), [&]<class T>() {
        double acc = 0.0;
        for (int64_t i = 0; i < N; ++i)
            acc -= log_probs.data<T>()[i * K + targets[i]];
        out.data<T>()[0] = static_cast<T>(acc / static_cast<double>(N));
    });
    Shape ls = log_probs.shape();
    return record(out, "nll_loss", {log_probs}, [ls, targets, N, K](const Tensor& g, const std::vector<bool>&) {
        Tensor gx = Tensor::zeros(ls, g.dtype());
        dispatch(g.dtype(), [&]<class T>() {
            const T scale = -g.data<T>()[0] / static_cast<T>(N);
            for (int64_t i = 0; i < N; ++i)
                gx.data<T>()[i * K + targets[i]] = scale;
        });
        return std::vector<Tensor>{gx};
    }, false);
}

// ---------------------------------------------------------------------------
// Batch normalisation

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean, Tensor& running_var,
                  bool training, double momentum, double eps)
{
    if (x.dim() < 2)
        throw DimensionError("batch_norm expects [N,C,...], got " + x.shape_str());
    const int64_t N = x.size(0), C = x.size(1), S = x.numel() / std::max<int64_t>(N * C, 1);
    const int64_t M = N * S;
    for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
        if (t->shape() != Shape{C})
            throw DimensionError("batch_norm: parameter " + t->shape_str() + " for input " + x.shape_str());
    if (training && M < 2)
        throw DegenerateBatchError("batch_norm in training mode needs N*spatial >= 2, got " + x.shape_str());

    Tensor y = Tensor::zeros(x.shape(), x.dtype());
    Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
    auto invstd = std::make_shared<std::vector<double>>(C);
    dispatch(x.dtype(), [&]<class T>() {
        const T* xs = x.data<T>();
        T* yd = y.data<T>();
        T* xh = xhat.data<T>();
        const T* gm = gamma.data<T>();
        const T* bt = beta.data<T>();
        T* rm = running_mean.data<T>();
        T* rv = running_var.data<T>();
        for (int64_t c = 0; c < C; ++c) {
            double mu, var;
            if (training) {
                double s = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = xs + (n * C + c) * S;
                    for (int64_t i = 0; i < S; ++i)
                        s += p[i];
                }
                mu = s / static_cast<double>(M);
                double q = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const T* p = xs + (n * C + c) * S;
                    for (int64_t i = 0; i < S; ++i) {
                        double dlt = p[i] - mu;
                        q += dlt * dlt;
                    }
                }
                var = q / static_cast<double>(M);
                rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
                rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * q / static_cast<double>(M - 1));
            } else {
                mu = rm[c];
                var = rv[c];
            }
            const double is = 1.0 / std::sqrt(var + eps);
            (*invstd)[c] = is;
            for (int64_t n = 0; n < N; ++n) {
                const T* p = xs + (n * C + c) * S;
                T* h = xh + (n * C + c) * S;
                T* o = yd + (n * C + c) * S;
                for (int64_t i = 0; i < S; ++i) {
                    h[i] = static_cast<T>((p[i] - mu) * is);
                    o[i] = gm[c] * h[i] + bt[c];
                }
            }
        }
    });
    return record(y, "batch_norm", {x, gamma, beta},
                  [xhat, gamma, invstd, training, N, C, S, M](const Tensor& g, const std::vector<bool>& need) {
                      Tensor gx, gg, gb;
                      dispatch(g.dtype(), [&]<class T>() {
                          const T* gv = g.data<T>();
                          const T* xh = xhat.data<T>();
                          const T* gm = gamma.data<T>();
                          std::vector<double> sg(C, 0.0), sgx(C, 0.0);
                          for (int64_t n = 0; n < N; ++n)
                              for (int64_t c = 0; c < C; ++c) {
                                  const int64_t base = (n * C + c) * S;
                                  double a = 0.0, b = 0.0;
                                  for (int64_t i = 0; i < S; ++i) {
                                      a += gv[base + i];
                                      b += static_cast<double>(gv[base + i]) * xh[base + i];
                                  }
                                  sg[c] += a;
                                  sgx[c] += b;
                              }
                          if (need[0]) {
                              gx = Tensor::zeros(g.shape(), g.dtype());
                              T* d = gx.data<T>();
                              for (int64_t n = 0; n < N; ++n)
                                  for (int64_t c = 0; c < C; ++c) {
                                      const int64_t base = (n * C + c) * S;
                                      const double k = gm[c] * (*invstd)[c];
                                      if (training) {
                                          const double inv_m = 1.0 / static_cast<double>(M);
                                          for (int64_t i = 0; i < S; ++i)
                                              d[base + i] = static_cast<T>(
                                                  k * (gv[base + i] - inv_m * sg[c] - inv_m * xh[base + i] * sgx[c]));
                                      } else {
                                          for (int64_t i = 0; i < S; ++i)
                                              d[base + i] = static_cast<T>(k * gv[base + i]);
                                      }
                                  }
                          }
                          if (need[1]) {
                              gg = Tensor::zeros({C}, g.dtype());
                              for (int64_t c = 0; c < C; ++c)
                                  gg.data<T>()[c] = static_cast<T>(sgx[c]);
                          }
                          if (need[2]) {
                              gb = Tensor::zeros({C}, g.dtype());
                              for (int64_t c = 0; c < C; ++c)
                                  gb.data<T>()[c] = static_cast<T>(sg[c]);
                          }
                      });
                      return std::vector<Tensor>{gx, gg, gb};
                  },
                  false);
}

} // namespace s2i
