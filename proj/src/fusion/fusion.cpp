#include "s2i/fusion/fusion.hpp"

namespace s2i::fusion {

FusionMode parse_fusion_mode(const std::string& name)
{
    if (name == "wfm")
        return FusionMode::WFM;
    if (name == "add")
        return FusionMode::Add;
    if (name == "mul")
        return FusionMode::Mul;
    throw ConfigError("unknown fusion mode '" + name + "' (expected wfm, add or mul)");
}

std::string fusion_mode_name(FusionMode mode)
{
    switch (mode) {
    case FusionMode::WFM: return "wfm";
    case FusionMode::Add: return "add";
    case FusionMode::Mul: return "mul";
    }
    return "?";
}

namespace {

int64_t reduced(int64_t channels, int64_t ratio, const char* what)
{
    if (ratio < 1 || channels % ratio != 0)
        throw ConfigError(std::string(what) + ": channels " + std::to_string(channels) +
                          " not divisible by reduction ratio " + std::to_string(ratio));
    return channels / ratio;
}

void check_map(const Tensor& f, const char* what)
{
    if (f.dim() != 4)
        throw DimensionError(std::string(what) + " expects [N,C,H,W], got " + f.shape_str());
}

} // namespace

PixelAttention::PixelAttention(int64_t channels, int64_t ratio, Rng& rng)
{
    const int64_t mid = reduced(channels, ratio, "pixel attention");
    f0 = register_module("f0", std::make_shared<nn::Conv2d>(channels, mid, 3, 1, 1, rng));
    bn = register_module("bn", std::make_shared<nn::BatchNorm>(mid));
    f1 = register_module("f1", std::make_shared<nn::Conv2d>(mid, 1, 1, 1, 0, rng));
}

Tensor PixelAttention::forward(const Tensor& f, Tensor* attention)
{
    check_map(f, "pixel attention");
    Tensor pa = sigmoid(f1->forward(relu(bn->forward(f0->forward(f)))));
    if (attention)
        *attention = pa;
    return f * pa;
}

SpeechModulation::SpeechModulation(int64_t channels, int64_t speech_dim, Rng& rng)
{
    mlp1 = register_module("mlp1", std::make_shared<nn::Linear>(speech_dim, speech_dim, rng));
    mlp2 = register_module("mlp2", std::make_shared<nn::Linear>(speech_dim, channels, rng));
    mlp3 = register_module("mlp3", std::make_shared<nn::Linear>(speech_dim, speech_dim, rng));
    mlp4 = register_module("mlp4", std::make_shared<nn::Linear>(speech_dim, channels, rng));
}

Tensor SpeechModulation::forward(const Tensor& f, const Tensor& s, Tensor* wa_out, Tensor* ba_out) const
{
    check_map(f, "speech modulation");
    if (s.dim() != 2 || s.size(0) != f.size(0))
        throw DimensionError("speech modulation: embedding " + s.shape_str() + " for feature map " + f.shape_str());
    const int64_t N = f.size(0), C = f.size(1);
    if (mlp2->weight.size(0) != C)
        throw DimensionError("speech modulation built for " + std::to_string(mlp2->weight.size(0)) +
                             " channels, got " + f.shape_str());
    Tensor wa = reshape(mlp2->forward(relu(mlp1->forward(s))), {N, C, 1, 1});
    Tensor ba = reshape(mlp4->forward(relu(mlp3->forward(s))), {N, C, 1, 1});
    if (wa_out)
        *wa_out = wa;
    if (ba_out)
        *ba_out = ba;
    return f * wa + ba;
}

WeightedFusion::WeightedFusion(int64_t channels, int64_t ratio, Rng& rng)
{
    const int64_t mid = reduced(channels, ratio, "weighted fusion");
    squeeze = register_module("squeeze", std::make_shared<nn::Linear>(channels, mid, rng));
    expand = register_module("expand", std::make_shared<nn::Linear>(mid, 2 * channels, rng));
}

Tensor WeightedFusion::forward(const Tensor& mp, const Tensor& ms, Tensor* weights) const
{
    check_map(mp, "weighted fusion");
    if (mp.shape() != ms.shape())
        throw DimensionError("weighted fusion branches differ: " + mp.shape_str() + " vs " + ms.shape_str());
    const int64_t N = mp.size(0), C = mp.size(1);
    Tensor ctx = global_avg_pool(mp + ms);
    Tensor logits = reshape(expand->forward(gelu(squeeze->forward(ctx))), {N, C, 2});
    Tensor wf = softmax(logits, 2);
    if (weights)
        *weights = wf;
    Tensor wf1 = reshape(narrow(wf, 2, 0, 1), {N, C, 1, 1});
    Tensor wf2 = reshape(narrow(wf, 2, 1, 1), {N, C, 1, 1});
    return wf1 * mp + wf2 * ms;
}

Tensor fuse_variant(const Tensor& mp, const Tensor& ms, FusionMode mode, const WeightedFusion* wfm)
{
    if (mp.shape() != ms.shape())
        throw DimensionError("fusion branches differ: " + mp.shape_str() + " vs " + ms.shape_str());
    switch (mode) {
    case FusionMode::Add: return mp + ms;
    case FusionMode::Mul: return mp * ms;
    case FusionMode::WFM:
        if (!wfm)
            throw ConfigError("wfm fusion requested without a weighted-fusion module");
        return wfm->forward(mp, ms);
    }
    throw ConfigError("unknown fusion mode");
}

VisualSpeechFusion::VisualSpeechFusion(int64_t channels, int64_t speech_dim, const FusionConfig& cfg, Rng& rng)
    : mode_(cfg.mode)
{
    bn = register_module("bn", std::make_shared<nn::BatchNorm>(channels));
    pam = register_module("pam", std::make_shared<PixelAttention>(channels, cfg.pam_ratio, rng));
    smm = register_module("smm", std::make_shared<SpeechModulation>(channels, speech_dim, rng));
    if (mode_ == FusionMode::WFM)
        wfm = register_module("wfm", std::make_shared<WeightedFusion>(channels, cfg.wfm_ratio, rng));
}

Tensor VisualSpeechFusion::forward(const Tensor& f, const Tensor& s)
{
    Tensor fp = bn->forward(f);
    return fp + fuse_variant(pam->forward(fp), smm->forward(fp, s), mode_, wfm.get());
}

} // namespace s2i::fusion
