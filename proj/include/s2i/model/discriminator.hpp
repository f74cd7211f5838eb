#pragma once

#include <vector>

#include "s2i/nn/layers.hpp"

namespace s2i::model {

struct DiscriminatorConfig {
    int64_t resolution = 256;
    int64_t stem = 32;
    std::vector<int64_t> widths{64, 128, 256, 512, 1024, 1024};
    int64_t speech_dim = 1024;
    int64_t speech_proj = 128;

    int64_t feature_channels() const { return widths.back(); }
};

// conv4x4/s2 -> lrelu -> conv3x3 -> lrelu, plus avgpool2 -> conv1x1 skip.
class DownBlock : public nn::Module {
public:
    DownBlock(int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;

    std::shared_ptr<nn::Conv2d> conv1, conv2, skip;
};

// Every op on the scoring path supports second-order gradients.
class Discriminator : public nn::Module {
public:
    Discriminator(const DiscriminatorConfig& cfg, Rng& rng);

    // [N,3,R,R] -> [N,Cf,4,4]
    Tensor encode_image(const Tensor& x) const;
    // Image features and speech [N,D] -> scores [N].
    Tensor score(const Tensor& features, const Tensor& s) const;
    Tensor forward(const Tensor& x, const Tensor& s) const { return score(encode_image(x), s); }

    const DiscriminatorConfig& config() const { return cfg_; }

    std::shared_ptr<nn::Conv2d> stem;
    std::vector<std::shared_ptr<DownBlock>> blocks;
    std::shared_ptr<nn::Linear> speech_proj;
    std::shared_ptr<nn::Conv2d> joint, out;

private:
    DiscriminatorConfig cfg_;
};

} // namespace s2i::model
