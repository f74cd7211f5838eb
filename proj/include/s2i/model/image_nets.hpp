#pragma once

#include <vector>

#include "s2i/nn/layers.hpp"

namespace s2i::model {

// Small strided CNN: conv3x3 stem, then conv4x4/s2 stages down to 4x4,
// global average pooling and a linear head.
class ConvEmbedder : public nn::Module {
public:
    ConvEmbedder(int64_t resolution, int64_t base_width, int64_t max_width, int64_t out_dim, Rng& rng);

    // Pooled features [N,E].
    Tensor features(const Tensor& x) const;
    Tensor head(const Tensor& features) const { return fc->forward(features); }
    Tensor forward(const Tensor& x) const { return head(features(x)); }

    int64_t feature_dim() const { return feature_dim_; }
    int64_t resolution() const { return resolution_; }

    std::shared_ptr<nn::Conv2d> stem;
    std::vector<std::shared_ptr<nn::Conv2d>> stages;
    std::shared_ptr<nn::Linear> fc;

private:
    int64_t resolution_, feature_dim_;
};

// Image side of the matching loss: images -> embedding in the speech space.
class ImageMatchHead : public ConvEmbedder {
public:
    ImageMatchHead(int64_t resolution, int64_t embed_dim, Rng& rng) : ConvEmbedder(resolution, 16, 128, embed_dim, rng) {}
};

struct Extracted {
    Tensor probs;    // [N,K]
    Tensor features; // [N,E]
};

// Corpus-trained classifier standing in for a pretrained recognition network.
class Classifier : public ConvEmbedder {
public:
    Classifier(int64_t resolution, int64_t classes, Rng& rng) : ConvEmbedder(resolution, 16, 64, classes, rng) {}

    // Eval-mode, no tape, processed in chunks.
    Extracted extract(const Tensor& images, int64_t chunk = 64) const;
};

} // namespace s2i::model
