#include "s2i/speech/encoder.hpp"

#include <cmath>

namespace s2i::speech {

SpeechEncoder::SpeechEncoder(const SpeechEncoderConfig& cfg, Rng& rng) : cfg_(cfg)
{
    if (cfg.kernel != 2 * cfg.pad + cfg.stride || cfg.stride != 2)
        throw ConfigError("speech conv blocks must halve the frame count (stride 2, kernel = 2*pad + 2)");
    conv1 = register_module("conv1", std::make_shared<nn::Conv1d>(cfg.n_mels, cfg.conv1, cfg.kernel, cfg.stride, cfg.pad, rng));
    bn1 = register_module("bn1", std::make_shared<nn::BatchNorm>(cfg.conv1));
    conv2 = register_module("conv2", std::make_shared<nn::Conv1d>(cfg.conv1, cfg.conv2, cfg.kernel, cfg.stride, cfg.pad, rng));
    bn2 = register_module("bn2", std::make_shared<nn::BatchNorm>(cfg.conv2));
    gru1 = register_module("gru1", std::make_shared<nn::BiGRU>(cfg.conv2, cfg.hidden, rng));
    gru2 = register_module("gru2", std::make_shared<nn::BiGRU>(2 * cfg.hidden, cfg.hidden, rng));
    pool = register_module("pool", std::make_shared<nn::AttentionPool>(2 * cfg.hidden, cfg.attn_dim, rng));
}

Tensor pad_frames(const Tensor& frames)
{
    const int64_t T = frames.size(1);
    const int64_t padded = (T + 3) / 4 * 4;
    if (padded == T)
        return frames;
    std::vector<Tensor> parts{frames};
    Tensor last = narrow(frames, 1, T - 1, 1);
    for (int64_t t = T; t < padded; ++t)
        parts.push_back(last);
    return concat(parts, 1);
}

Tensor SpeechEncoder::forward(const Tensor& frames, Tensor* attn_scores)
{
    if (frames.dim() != 3 || frames.size(2) != cfg_.n_mels)
        throw DimensionError("speech encoder expects [N,T," + std::to_string(cfg_.n_mels) + "], got " +
                             frames.shape_str());
    if (frames.size(1) < kMinFrames)
        throw ContractError("speech sequence too short: " + std::to_string(frames.size(1)) + " frames, need at least " +
                            std::to_string(kMinFrames));
    Tensor x = swap_last_axes(pad_frames(frames));
    x = relu(bn1->forward(conv1->forward(x)));
    x = relu(bn2->forward(conv2->forward(x)));
    Tensor h = gru2->forward(gru1->forward(swap_last_axes(x)));
    return pool->forward(h, attn_scores);
}

Tensor SpeechEncoder::encode(const Tensor& frames)
{
    if (frames.dim() != 2)
        throw DimensionError("encode expects [T,F], got " + frames.shape_str());
    Tensor s = forward(reshape(frames, {1, frames.size(0), frames.size(1)}));
    return reshape(s, {cfg_.dim()});
}

} // namespace s2i::speech
