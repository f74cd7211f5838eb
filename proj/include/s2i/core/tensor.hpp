#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "s2i/core/error.hpp"

namespace s2i {

using Shape = std::vector<int64_t>;

enum class DType : uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(DType dt);
std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Runs f.template operator()<T>() with T = float or double according to dt.
template <class F>
decltype(auto) dispatch(DType dt, F&& f)
{
    if (dt == DType::F32)
        return f.template operator()<float>();
    return f.template operator()<double>();
}

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

class Tensor;
struct Node;

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
    Shape shape;
    DType dtype = DType::F32;
    std::shared_ptr<Buffer> buffer;
    bool requires_grad = false;
    std::shared_ptr<TensorImpl> grad;
    std::shared_ptr<Node> grad_fn;
};

// Reference-counted handle to a dense row-major array. Copies of a Tensor
// alias the same storage; ops never mutate their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor empty(Shape shape, DType dtype = DType::F32);
    static Tensor zeros(Shape shape, DType dtype = DType::F32);
    static Tensor ones(Shape shape, DType dtype = DType::F32);
    static Tensor full(Shape shape, double value, DType dtype = DType::F32);
    static Tensor scalar(double value, DType dtype = DType::F32);
    static Tensor from_vector(const std::vector<double>& values, Shape shape, DType dtype = DType::F32);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    int64_t dim() const { return static_cast<int64_t>(shape().size()); }
    int64_t size(int64_t axis) const;
    int64_t numel() const;
    DType dtype() const;

    template <class T>
    T* data();
    template <class T>
    const T* data() const;

    double item() const;
    double at(int64_t flat_index) const;
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    Tensor& requires_grad_(bool on = true);
    Tensor grad() const;
    void set_grad(const Tensor& g);
    void zero_grad();

    const std::shared_ptr<Node>& grad_fn() const;
    bool is_leaf() const { return !grad_fn(); }

    // Shares storage, drops the tape edge.
    Tensor detach() const;
    // Fresh storage, no tape edge.
    Tensor clone() const;
    Tensor to(DType dtype) const;
    // Overwrites storage in place with src (same shape); used by loaders and optimizers.
    void copy_from(const Tensor& src);

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }
    std::string shape_str() const { return s2i::shape_str(shape()); }

private:
    void check_defined() const;
    std::shared_ptr<TensorImpl> impl_;
};

template <class T>
T* Tensor::data()
{
    check_defined();
    if (dtype_of<T>() != impl_->dtype)
        throw ContractError(std::string("tensor dtype is ") + dtype_name(impl_->dtype));
    return std::get<std::vector<T>>(*impl_->buffer).data();
}

template <class T>
const T* Tensor::data() const
{
    check_defined();
    if (dtype_of<T>() != impl_->dtype)
        throw ContractError(std::string("tensor dtype is ") + dtype_name(impl_->dtype));
    return std::get<std::vector<T>>(*impl_->buffer).data();
}

} // namespace s2i
