#pragma once

#include <vector>

#include "s2i/fusion/fusion.hpp"

namespace s2i::model {

struct GeneratorConfig {
    int64_t z_dim = 100;
    int64_t nf = 32;
    // Channel multipliers of nf per block; size is the block count.
    std::vector<int64_t> widths{8, 8, 8, 8, 4, 2, 1};
    int64_t block_modules = 2;
    int64_t speech_dim = 1024;
    fusion::FusionConfig fusion;

    int64_t n_blocks() const { return static_cast<int64_t>(widths.size()); }
    int64_t out_res() const { return int64_t{4} << (n_blocks() - 1); }
};

// One or two (vsfm -> relu -> conv3x3) units, each with its own residual.
// The first unit's skip is a 1x1 conv when channels change.
class DualResidualBlock : public nn::Module {
public:
    DualResidualBlock(int64_t in, int64_t out, const GeneratorConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& h, const Tensor& s);

    std::vector<std::shared_ptr<fusion::VisualSpeechFusion>> fuse;
    std::vector<std::shared_ptr<nn::Conv2d>> conv;
    std::shared_ptr<nn::Conv2d> skip; // null when in == out
};

class Generator : public nn::Module {
public:
    Generator(const GeneratorConfig& cfg, Rng& rng);

    // z [N,Z], s [N,D] -> images [N,3,R,R] in [-1,1].
    Tensor forward(const Tensor& z, const Tensor& s);
    // Dense stem output h0 [N,8nf,4,4].
    Tensor project(const Tensor& z) const;
    // Every block output, for intervention tests.
    std::vector<Tensor> trace(const Tensor& z, const Tensor& s);

    const GeneratorConfig& config() const { return cfg_; }

    std::shared_ptr<nn::Linear> fc;
    std::vector<std::shared_ptr<DualResidualBlock>> blocks;
    std::shared_ptr<nn::Conv2d> to_rgb;

private:
    GeneratorConfig cfg_;
};

} // namespace s2i::model
