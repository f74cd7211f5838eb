#include "s2i/nn/adam.hpp"

#include <cmath>
#include <map>

namespace s2i::nn {

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t t, const AdamConfig& cfg)
{
    if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape())
        throw DimensionError("adam: state shapes do not match parameter " + param.shape_str());
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    dispatch(param.dtype(), [&]<class T>() {
        T* p = param.data<T>();
        const T* g = grad.data<T>();
        T* mm = m.data<T>();
        T* vv = v.data<T>();
        for (int64_t i = 0, n = param.numel(); i < n; ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * mm[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gi * gi;
            mm[i] = static_cast<T>(mi);
            vv[i] = static_cast<T>(vi);
            p[i] = static_cast<T>(p[i] - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
        }
    });
}

Adam::Adam(NamedTensors params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    for (auto& [name, p] : params_) {
        m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
        v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    }
}

void Adam::step()
{
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].second;
        Tensor g = p.grad();
        if (!g.defined())
            continue;
        adam_update(p, g, m_[i], v_[i], t_, cfg_);
    }
}

void Adam::zero_grad()
{
    for (auto& [name, p] : params_)
        p.zero_grad();
}

NamedTensors Adam::state() const
{
    NamedTensors out;
    for (size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("m." + params_[i].first, m_[i]);
        out.emplace_back("v." + params_[i].first, v_[i]);
    }
    out.emplace_back("t", Tensor::scalar(static_cast<double>(t_), DType::F64));
    return out;
}

void Adam::load_state(const NamedTensors& state)
{
    std::map<std::string, Tensor> by_name(state.begin(), state.end());
    auto fetch = [&](const std::string& key, Tensor& dst) {
        auto it = by_name.find(key);
        if (it == by_name.end())
            throw ConfigError("optimizer state lacks '" + key + "'");
        if (it->second.shape() != dst.shape())
            throw ConfigError("optimizer state '" + key + "' has shape " + it->second.shape_str() + ", expected " +
                              dst.shape_str());
        dst.copy_from(it->second);
    };
    for (size_t i = 0; i < params_.size(); ++i) {
        fetch("m." + params_[i].first, m_[i]);
        fetch("v." + params_[i].first, v_[i]);
    }
    auto it = by_name.find("t");
    if (it == by_name.end())
        throw ConfigError("optimizer state lacks step count");
    t_ = static_cast<int64_t>(it->second.item());
}

} // namespace s2i::nn
