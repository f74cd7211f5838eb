#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Owns parameters, buffers and child modules under dotted names.
class Module {
public:
    virtual ~Module() = default;

    NamedTensors named_parameters() const;
    NamedTensors named_buffers() const;
    // Parameters followed by buffers; what a checkpoint stores.
    NamedTensors state() const;
    std::vector<Tensor> parameters() const;
    int64_t parameter_count() const;

    void train(bool on = true);
    void eval() { train(false); }
    bool is_training() const { return training_; }

    void set_requires_grad(bool on);
    void zero_grad();
    // Converts parameters and buffers in place; handles held elsewhere see the change.
    void to(DType dtype);

protected:
    Tensor register_parameter(const std::string& name, Tensor t);
    Tensor register_buffer(const std::string& name, Tensor t);

    template <class M>
    std::shared_ptr<M> register_module(const std::string& name, std::shared_ptr<M> m)
    {
        children_.emplace_back(name, m);
        return m;
    }

private:
    void collect(const std::string& prefix, NamedTensors& out, bool params) const;

    NamedTensors params_;
    NamedTensors buffers_;
    std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
    bool training_ = true;
};

} // namespace s2i::nn
