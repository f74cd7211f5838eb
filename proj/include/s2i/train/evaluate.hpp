#pragma once

#include <optional>

#include "s2i/data/dataset.hpp"
#include "s2i/metrics/metrics.hpp"
#include "s2i/model/generator.hpp"
#include "s2i/model/image_nets.hpp"
#include "s2i/train/config.hpp"

namespace s2i::train {

// Latent for (caption, sample); never reused across either index.
Tensor eval_latent(uint64_t seed, int64_t caption, int64_t sample, int64_t z_dim);

// Images for captions[i] x samples, in caption-major order, generator in
// eval mode and off the tape. speech is [C,D] indexed by caption.
Tensor generate_images(model::Generator& G, const Tensor& speech, const std::vector<int64_t>& captions,
                       int64_t samples, uint64_t seed, int64_t chunk = 32);

struct EvalReport {
    int64_t step = 0;
    int64_t n_generated = 0;
    int64_t n_real = 0;
    std::optional<metrics::Score> is;
    std::optional<double> fid, map, r50;
    double class_prior = 0.0; // expected AP of a random ranking, per query class frequency
    std::string tsv_header() const;
    std::string tsv() const;
};

// Reference side of the evaluation, computed once per split.
struct EvalContext {
    const data::SplitData* split = nullptr;
    Tensor speech;     // [C,D] frozen embeddings of the split's captions
    const model::Classifier* classifier = nullptr;
    const model::ImageMatchHead* match = nullptr; // needed for r50 only
    metrics::GaussianStats real_stats;
    Tensor real_features;
};

EvalContext make_eval_context(const data::SplitData& split, const Tensor& speech, const model::Classifier* cls,
                              const model::ImageMatchHead* match);

// Samples cfg.eval.samples_per_caption images per caption (first
// max_captions captions) and computes the requested metrics.
EvalReport evaluate(const RunConfig& cfg, model::Generator& G, const EvalContext& ctx, int64_t step = 0);

} // namespace s2i::train
