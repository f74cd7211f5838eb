#include "s2i/core/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "s2i/core/autograd.hpp"

namespace s2i {

const char* dtype_name(DType dt)
{
    return dt == DType::F32 ? "f32" : "f64";
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& shape)
{
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0)
            throw DimensionError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

namespace {

std::shared_ptr<Buffer> make_buffer(int64_t n, DType dtype, double fill)
{
    if (dtype == DType::F32)
        return std::make_shared<Buffer>(std::vector<float>(n, static_cast<float>(fill)));
    return std::make_shared<Buffer>(std::vector<double>(n, fill));
}

} // namespace

void Tensor::check_defined() const
{
    if (!impl_)
        throw ContractError("use of undefined tensor");
}

Tensor Tensor::empty(Shape shape, DType dtype)
{
    return zeros(std::move(shape), dtype);
}

Tensor Tensor::zeros(Shape shape, DType dtype)
{
    return full(std::move(shape), 0.0, dtype);
}

Tensor Tensor::ones(Shape shape, DType dtype)
{
    return full(std::move(shape), 1.0, dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype)
{
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->dtype = dtype;
    impl->buffer = make_buffer(n, dtype, value);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dtype)
{
    return full({}, value, dtype);
}

Tensor Tensor::from_vector(const std::vector<double>& values, Shape shape, DType dtype)
{
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw DimensionError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                             s2i::shape_str(shape));
    Tensor t = zeros(std::move(shape), dtype);
    dispatch(dtype, [&]<class T>() { std::copy(values.begin(), values.end(), t.data<T>()); });
    return t;
}

const Shape& Tensor::shape() const
{
    check_defined();
    return impl_->shape;
}

int64_t Tensor::size(int64_t axis) const
{
    int64_t d = dim();
    if (axis < 0)
        axis += d;
    if (axis < 0 || axis >= d)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str());
    return shape()[axis];
}

int64_t Tensor::numel() const
{
    return shape_numel(shape());
}

DType Tensor::dtype() const
{
    check_defined();
    return impl_->dtype;
}

double Tensor::at(int64_t i) const
{
    if (i < 0 || i >= numel())
        throw DimensionError("flat index out of range");
    return dispatch(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[i]); });
}

double Tensor::item() const
{
    if (numel() != 1)
        throw ContractError("item() on tensor of shape " + shape_str());
    return at(0);
}

std::vector<double> Tensor::to_vector() const
{
    std::vector<double> out(numel());
    dispatch(dtype(), [&]<class T>() { std::copy(data<T>(), data<T>() + out.size(), out.begin()); });
    return out;
}

bool Tensor::requires_grad() const
{
    return impl_ && impl_->requires_grad;
}

Tensor& Tensor::requires_grad_(bool on)
{
    check_defined();
    if (!is_leaf() && !on)
        throw ContractError("cannot clear requires_grad on a non-leaf tensor; use detach()");
    impl_->requires_grad = on;
    return *this;
}

Tensor Tensor::grad() const
{
    check_defined();
    return impl_->grad ? Tensor(impl_->grad) : Tensor();
}

void Tensor::set_grad(const Tensor& g)
{
    check_defined();
    if (g.defined() && g.shape() != shape())
        throw DimensionError("grad shape " + g.shape_str() + " does not match tensor " + shape_str());
    impl_->grad = g.impl_ptr();
}

void Tensor::zero_grad()
{
    check_defined();
    impl_->grad.reset();
}

const std::shared_ptr<Node>& Tensor::grad_fn() const
{
    check_defined();
    return impl_->grad_fn;
}

Tensor Tensor::detach() const
{
    check_defined();
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->buffer = impl_->buffer;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const
{
    check_defined();
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->buffer = std::make_shared<Buffer>(*impl_->buffer);
    return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const
{
    if (target == dtype())
        return clone();
    Tensor out = zeros(shape(), target);
    dispatch(dtype(), [&]<class S>() {
        dispatch(target, [&]<class D>() {
            const S* src = data<S>();
            D* dst = out.data<D>();
            for (int64_t i = 0, n = numel(); i < n; ++i)
                dst[i] = static_cast<D>(src[i]);
        });
    });
    return out;
}

void Tensor::copy_from(const Tensor& src)
{
    if (src.shape() != shape())
        throw DimensionError("copy_from: shape " + src.shape_str() + " into " + shape_str());
    dispatch(dtype(), [&]<class D>() {
        dispatch(src.dtype(), [&]<class S>() {
            const S* s = src.data<S>();
            D* d = data<D>();
            for (int64_t i = 0, n = numel(); i < n; ++i)
                d[i] = static_cast<D>(s[i]);
        });
    });
}

} // namespace s2i
