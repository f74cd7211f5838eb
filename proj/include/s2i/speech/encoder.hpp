#pragma once

#include "s2i/nn/layers.hpp"

namespace s2i::speech {

struct SpeechEncoderConfig {
    int64_t n_mels = 40;
    int64_t conv1 = 64;
    int64_t conv2 = 128;
    int64_t kernel = 6;
    int64_t stride = 2;
    int64_t pad = 2;
    int64_t hidden = 512;
    int64_t attn_dim = 128;

    int64_t dim() const { return 2 * hidden; }
};

inline constexpr int64_t kMinFrames = 4;

// Two (conv1d -> batchnorm -> relu) blocks, two bidirectional GRUs and
// additive attention pooling. Frames [N,T,F] -> embedding [N,D].
class SpeechEncoder : public nn::Module {
public:
    SpeechEncoder(const SpeechEncoderConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& frames, Tensor* attn_scores = nullptr);
    // Single sequence [T,F] -> [D].
    Tensor encode(const Tensor& frames);

    const SpeechEncoderConfig& config() const { return cfg_; }

    std::shared_ptr<nn::Conv1d> conv1, conv2;
    std::shared_ptr<nn::BatchNorm> bn1, bn2;
    std::shared_ptr<nn::BiGRU> gru1, gru2;
    std::shared_ptr<nn::AttentionPool> pool;

private:
    SpeechEncoderConfig cfg_;
};

// Repeats the last frame until T is a multiple of 4, so both stride-2 blocks
// see even lengths. [N,T,F] -> [N,T',F].
Tensor pad_frames(const Tensor& frames);

} // namespace s2i::speech
