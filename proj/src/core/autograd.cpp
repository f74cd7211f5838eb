#include "s2i/core/autograd.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "s2i/core/ops.hpp"

namespace s2i {

namespace {

thread_local bool g_grad_enabled = true;

struct Graph {
    // Reverse topological order: outputs first.
    std::vector<TensorImpl*> order;
};

// Iterative post-order DFS over tensors that track gradients.
Graph collect(const std::vector<Tensor>& roots)
{
    Graph graph;
    std::unordered_set<TensorImpl*> visited;
    std::vector<TensorImpl*> post;
    struct Frame {
        TensorImpl* t;
        size_t next;
    };
    std::vector<Frame> stack;
    for (const Tensor& r : roots) {
        if (!r.requires_grad() || visited.count(r.impl()))
            continue;
        visited.insert(r.impl());
        stack.push_back({r.impl(), 0});
        while (!stack.empty()) {
            Frame& f = stack.back();
            Node* node = f.t->grad_fn.get();
            if (node && f.next < node->inputs.size()) {
                const Tensor& in = node->inputs[f.next++];
                if (in.requires_grad() && !visited.count(in.impl())) {
                    visited.insert(in.impl());
                    stack.push_back({in.impl(), 0});
                }
                continue;
            }
            post.push_back(f.t);
            stack.pop_back();
        }
    }
    graph.order.assign(post.rbegin(), post.rend());
    return graph;
}

void accumulate(std::unordered_map<TensorImpl*, Tensor>& grads, TensorImpl* key, const Tensor& g,
                const Shape& expect, const std::string& where)
{
    if (g.shape() != expect)
        throw DimensionError("backward of " + where + " produced grad " + g.shape_str() + " for input " +
                             shape_str(expect));
    auto it = grads.find(key);
    if (it == grads.end() || !it->second.defined())
        grads[key] = g;
    else
        it->second = add(it->second, g);
}

std::unordered_map<TensorImpl*, Tensor> run(const std::vector<Tensor>& outputs,
                                            const std::unordered_set<TensorImpl*>* targets, bool create_graph)
{
    for (const Tensor& o : outputs)
        if (!o.defined())
            throw ContractError("backward from undefined tensor");
    Graph graph = collect(outputs);

    // needed[t]: some requested gradient depends on the gradient at t.
    std::unordered_map<TensorImpl*, bool> needed;
    for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
        TensorImpl* t = *it;
        bool need = targets ? targets->count(t) > 0 : (t->grad_fn == nullptr && t->requires_grad);
        if (t->grad_fn)
            for (const Tensor& in : t->grad_fn->inputs)
                if (in.requires_grad() && needed[in.impl()])
                    need = true;
        needed[t] = need;
    }

    GradModeGuard mode(create_graph);
    std::unordered_map<TensorImpl*, Tensor> grads;
    for (const Tensor& o : outputs) {
        if (!o.requires_grad())
            continue;
        accumulate(grads, o.impl(), Tensor::ones(o.shape(), o.dtype()), o.shape(), "output");
    }

    for (TensorImpl* t : graph.order) {
        Node* node = t->grad_fn.get();
        if (!node || !needed[t])
            continue;
        auto git = grads.find(t);
        if (git == grads.end() || !git->second.defined())
            continue;
        if (create_graph && !node->differentiable)
            throw UnsupportedOpError("second-order gradient through '" + node->name +
                                     "' is not supported (its backward is not taped)");
        std::vector<bool> need(node->inputs.size());
        bool any = false;
        for (size_t i = 0; i < need.size(); ++i) {
            const Tensor& in = node->inputs[i];
            need[i] = in.requires_grad() && needed[in.impl()];
            any = any || need[i];
        }
        if (!any)
            continue;
        Tensor g = git->second;
        // Interior gradients are not needed after propagation.
        if (!targets || !targets->count(t))
            grads.erase(git);
        std::vector<Tensor> in_grads = node->backward(g, need);
        if (in_grads.size() != need.size())
            throw ContractError("backward of " + node->name + " returned wrong arity");
        for (size_t i = 0; i < need.size(); ++i) {
            if (!need[i] || !in_grads[i].defined())
                continue;
            const Tensor& in = node->inputs[i];
            accumulate(grads, in.impl(), in_grads[i], in.shape(), node->name);
        }
    }
    return grads;
}

} // namespace

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = prev_;
}

GradModeGuard::GradModeGuard(bool enabled) : prev_(g_grad_enabled)
{
    g_grad_enabled = enabled;
}

GradModeGuard::~GradModeGuard()
{
    g_grad_enabled = prev_;
}

Tensor record(Tensor out, const char* name, std::vector<Tensor> inputs, BackwardFn fn, bool differentiable)
{
    if (!g_grad_enabled)
        return out;
    bool track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!track)
        return out;
    auto node = std::make_shared<Node>();
    node->name = name;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
    node->differentiable = differentiable;
    out.impl()->grad_fn = std::move(node);
    out.impl()->requires_grad = true;
    return out;
}

void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? loss.shape_str() : std::string("<undefined>")));
    if (!loss.requires_grad())
        throw ContractError("backward() on a loss that is not connected to the tape");
    auto grads = run({loss}, nullptr, false);
    NoGradGuard guard;
    for (auto& [impl, g] : grads) {
        if (impl->grad_fn || !impl->requires_grad || !g.defined())
            continue;
        if (impl->grad)
            impl->grad = add(Tensor(impl->grad), g).impl_ptr();
        else
            impl->grad = g.detach().impl_ptr();
    }
}

std::vector<Tensor> grad(const std::vector<Tensor>& outputs, const std::vector<Tensor>& inputs, bool create_graph)
{
    std::unordered_set<TensorImpl*> targets;
    for (const Tensor& in : inputs) {
        if (!in.defined() || !in.requires_grad())
            throw ContractError("grad(): every input must require grad");
        targets.insert(in.impl());
    }
    auto grads = run(outputs, &targets, create_graph);
    std::vector<Tensor> result;
    result.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        auto it = grads.find(in.impl());
        if (it != grads.end() && it->second.defined())
            result.push_back(create_graph ? it->second : it->second.detach());
        else
            result.push_back(Tensor::zeros(in.shape(), in.dtype()));
    }
    return result;
}

} // namespace s2i
