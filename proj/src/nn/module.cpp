#include "s2i/nn/module.hpp"

namespace s2i::nn {

void Module::collect(const std::string& prefix, NamedTensors& out, bool params) const
{
    for (const auto& [name, t] : params ? params_ : buffers_)
        out.emplace_back(prefix + name, t);
    for (const auto& [name, child] : children_)
        child->collect(prefix + name + ".", out, params);
}

NamedTensors Module::named_parameters() const
{
    NamedTensors out;
    collect("", out, true);
    return out;
}

NamedTensors Module::named_buffers() const
{
    NamedTensors out;
    collect("", out, false);
    return out;
}

NamedTensors Module::state() const
{
    NamedTensors out = named_parameters();
    NamedTensors b = named_buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

std::vector<Tensor> Module::parameters() const
{
    std::vector<Tensor> out;
    for (auto& [n, t] : named_parameters())
        out.push_back(t);
    return out;
}

int64_t Module::parameter_count() const
{
    int64_t n = 0;
    for (auto& [name, t] : named_parameters())
        n += t.numel();
    return n;
}

void Module::train(bool on)
{
    training_ = on;
    for (auto& [n, c] : children_)
        c->train(on);
}

void Module::set_requires_grad(bool on)
{
    for (auto& [n, t] : named_parameters())
        t.impl()->requires_grad = on;
}

void Module::zero_grad()
{
    for (auto& [n, t] : named_parameters())
        t.impl()->grad.reset();
}

void Module::to(DType dtype)
{
    for (auto& [n, t] : state()) {
        if (t.dtype() == dtype)
            continue;
        Tensor c = t.to(dtype);
        t.impl()->buffer = c.impl()->buffer;
        t.impl()->dtype = dtype;
        t.impl()->grad.reset();
    }
}

Tensor Module::register_parameter(const std::string& name, Tensor t)
{
    t.impl()->requires_grad = true;
    params_.emplace_back(name, t);
    return t;
}

Tensor Module::register_buffer(const std::string& name, Tensor t)
{
    buffers_.emplace_back(name, t);
    return t;
}

} // namespace s2i::nn
