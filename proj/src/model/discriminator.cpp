#include "s2i/model/discriminator.hpp"

namespace s2i::model {

DownBlock::DownBlock(int64_t in, int64_t out, Rng& rng)
{
    conv1 = register_module("conv1", std::make_shared<nn::Conv2d>(in, out, 4, 2, 1, rng));
    conv2 = register_module("conv2", std::make_shared<nn::Conv2d>(out, out, 3, 1, 1, rng));
    skip = register_module("skip", std::make_shared<nn::Conv2d>(in, out, 1, 1, 0, rng));
}

Tensor DownBlock::forward(const Tensor& x) const
{
    Tensor h = leaky_relu(conv1->forward(x), 0.2);
    h = leaky_relu(conv2->forward(h), 0.2);
    return h + skip->forward(avg_pool2d(x, 2));
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg)
{
    if (cfg.widths.empty())
        throw ConfigError("discriminator needs at least one block");
    if (cfg.resolution != (int64_t{4} << cfg.widths.size()))
        throw ConfigError("discriminator with " + std::to_string(cfg.widths.size()) + " blocks maps " +
                          std::to_string(int64_t{4} << cfg.widths.size()) + "px to 4x4, configured for " +
                          std::to_string(cfg.resolution));
    const int64_t cf = cfg.feature_channels();
    if (cf % 8 != 0)
        throw ConfigError("discriminator feature width must be divisible by 8");
    stem = register_module("stem", std::make_shared<nn::Conv2d>(3, cfg.stem, 3, 1, 1, rng));
    int64_t cin = cfg.stem;
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
        blocks.push_back(register_module("block" + std::to_string(i), std::make_shared<DownBlock>(cin, cfg.widths[i], rng)));
        cin = cfg.widths[i];
    }
    speech_proj = register_module("speech_proj", std::make_shared<nn::Linear>(cfg.speech_dim, cfg.speech_proj, rng));
    joint = register_module("joint", std::make_shared<nn::Conv2d>(cf + cfg.speech_proj, cf / 8, 3, 1, 1, rng));
    out = register_module("out", std::make_shared<nn::Conv2d>(cf / 8, 1, 4, 1, 0, rng));
}

Tensor Discriminator::encode_image(const Tensor& x) const
{
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg_.resolution || x.size(3) != cfg_.resolution)
        throw DimensionError("discriminator expects [N,3," + std::to_string(cfg_.resolution) + "," +
                             std::to_string(cfg_.resolution) + "], got " + x.shape_str());
    Tensor h = stem->forward(x);
    for (const auto& b : blocks)
        h = b->forward(h);
    return h;
}

Tensor Discriminator::score(const Tensor& features, const Tensor& s) const
{
    const int64_t N = features.size(0);
    if (s.dim() != 2 || s.size(0) != N || s.size(1) != cfg_.speech_dim)
        throw DimensionError("discriminator expects s [" + std::to_string(N) + "," + std::to_string(cfg_.speech_dim) +
                             "], got " + s.shape_str());
    Tensor sp = reshape(speech_proj->forward(s), {N, cfg_.speech_proj, 1, 1});
    sp = broadcast_to(sp, {N, cfg_.speech_proj, 4, 4});
    Tensor h = leaky_relu(joint->forward(concat({features, sp}, 1)), 0.2);
    return reshape(out->forward(h), {N});
}

} // namespace s2i::model
