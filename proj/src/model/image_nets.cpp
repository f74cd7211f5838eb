#include "s2i/model/image_nets.hpp"

#include "s2i/core/autograd.hpp"

namespace s2i::model {

ConvEmbedder::ConvEmbedder(int64_t resolution, int64_t base, int64_t max_width, int64_t out_dim, Rng& rng)
    : resolution_(resolution)
{
    if (resolution < 4 || (resolution & (resolution - 1)) != 0)
        throw ConfigError("image resolution must be a power of two >= 4, got " + std::to_string(resolution));
    stem = register_module("stem", std::make_shared<nn::Conv2d>(3, base, 3, 1, 1, rng));
    int64_t c = base;
    int64_t i = 0;
    for (int64_t r = resolution; r > 4; r /= 2, ++i) {
        const int64_t next = std::min(c * 2, max_width);
        stages.push_back(register_module("stage" + std::to_string(i), std::make_shared<nn::Conv2d>(c, next, 4, 2, 1, rng)));
        c = next;
    }
    feature_dim_ = c;
    fc = register_module("fc", std::make_shared<nn::Linear>(c, out_dim, rng));
}

Tensor ConvEmbedder::features(const Tensor& x) const
{
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != resolution_ || x.size(3) != resolution_)
        throw DimensionError("image network expects [N,3," + std::to_string(resolution_) + "," +
                             std::to_string(resolution_) + "], got " + x.shape_str());
    Tensor h = leaky_relu(stem->forward(x), 0.2);
    for (const auto& s : stages)
        h = leaky_relu(s->forward(h), 0.2);
    return global_avg_pool(h);
}

Extracted Classifier::extract(const Tensor& images, int64_t chunk) const
{
    NoGradGuard ng;
    const int64_t N = images.size(0);
    std::vector<Tensor> probs, feats;
    for (int64_t i = 0; i < N; i += chunk) {
        const int64_t n = std::min(chunk, N - i);
        Tensor f = features(narrow(images, 0, i, n));
        feats.push_back(f);
        probs.push_back(softmax(head(f), 1));
    }
    return {concat(probs, 0), concat(feats, 0)};
}

} // namespace s2i::model
