#pragma once

#include <functional>
#include <string>
#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i {

// Receives the gradient of the node output and a per-input mask of which
// input gradients are wanted; returns one entry per input (undefined when
// not wanted or identically zero).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& need)>;

struct Node {
    std::string name;
    std::vector<Tensor> inputs;
    BackwardFn backward;
    // True when `backward` is built from taped ops, so it can itself be
    // differentiated (create_graph).
    bool differentiable = true;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool prev_;
};

// Connects `out` to the tape when grad mode is on and any input tracks
// gradients. Returns `out`.
Tensor record(Tensor out, const char* name, std::vector<Tensor> inputs, BackwardFn fn, bool differentiable = true);

// Reverse-mode accumulation from a scalar loss into the .grad of every
// reachable leaf that requires grad. Repeated calls accumulate.
void backward(const Tensor& loss);

// Gradients of sum(outputs) with respect to `inputs`, returned rather than
// accumulated. With create_graph the result is itself on the tape. Inputs
// not reachable from the outputs receive zeros.
std::vector<Tensor> grad(const std::vector<Tensor>& outputs, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

} // namespace s2i
