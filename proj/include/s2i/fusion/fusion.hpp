#pragma once

#include <string>

#include "s2i/nn/layers.hpp"

namespace s2i::fusion {

enum class FusionMode { WFM, Add, Mul };

FusionMode parse_fusion_mode(const std::string& name);
std::string fusion_mode_name(FusionMode mode);

struct FusionConfig {
    FusionMode mode = FusionMode::WFM;
    int64_t pam_ratio = 8;
    int64_t wfm_ratio = 4;
};

// Pixel attention: PA = sigmoid(f1(relu(bn(f0(F))))), out = F * PA.
class PixelAttention : public nn::Module {
public:
    PixelAttention(int64_t channels, int64_t ratio, Rng& rng);
    // `attention` receives PA [N,1,H,W] when non-null.
    Tensor forward(const Tensor& f, Tensor* attention = nullptr);

    std::shared_ptr<nn::Conv2d> f0, f1;
    std::shared_ptr<nn::BatchNorm> bn;
};

// Speech modulation: out = F * WA(s) + BA(s), each a two-layer perceptron D -> D -> C.
class SpeechModulation : public nn::Module {
public:
    SpeechModulation(int64_t channels, int64_t speech_dim, Rng& rng);
    Tensor forward(const Tensor& f, const Tensor& s, Tensor* wa = nullptr, Tensor* ba = nullptr) const;

    std::shared_ptr<nn::Linear> mlp1, mlp2, mlp3, mlp4;
};

// Weighted fusion: per-channel softmax pair from pooled context blends the
// two branches.
class WeightedFusion : public nn::Module {
public:
    WeightedFusion(int64_t channels, int64_t ratio, Rng& rng);
    // `weights` receives [N,C,2] (WF1, WF2) when non-null.
    Tensor forward(const Tensor& mp, const Tensor& ms, Tensor* weights = nullptr) const;

    std::shared_ptr<nn::Linear> squeeze, expand;
};

// Dispatches to add, mul or the weighted fusion module.
Tensor fuse_variant(const Tensor& mp, const Tensor& ms, FusionMode mode, const WeightedFusion* wfm);

// F' = bn(F); out = F' + fuse(pam(F'), smm(F', s)).
class VisualSpeechFusion : public nn::Module {
public:
    VisualSpeechFusion(int64_t channels, int64_t speech_dim, const FusionConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& f, const Tensor& s);

    FusionMode mode() const { return mode_; }

    std::shared_ptr<nn::BatchNorm> bn;
    std::shared_ptr<PixelAttention> pam;
    std::shared_ptr<SpeechModulation> smm;
    std::shared_ptr<WeightedFusion> wfm; // null unless mode is WFM

private:
    FusionMode mode_;
};

} // namespace s2i::fusion
