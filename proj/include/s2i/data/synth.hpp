#pragma once

#include <filesystem>

#include "s2i/core/tensor.hpp"
#include "s2i/data/manifest.hpp"

namespace s2i::data {

inline constexpr int64_t kMaxShapes = 5;
inline constexpr int64_t kMaxColors = 6;

// Colored shapes on textured backgrounds, class = shape x color, paired with
// pseudo-speech: one spectral pattern per word ("<color> <shape>"), the two
// patterns overlapping in time.
struct SynthConfig {
    int64_t n_shapes = 4;
    int64_t n_colors = 4;
    int64_t per_class = 125;
    int64_t captions_per_image = 1;
    int64_t image_size = 64;
    int64_t n_mels = 40;
    int64_t word_frames = 16;
    int64_t overlap = 4;
    double noise = 0.3;
    double test_fraction = 0.2;
    uint64_t seed = 1;

    int64_t n_classes() const { return n_shapes * n_colors; }
    int64_t frames() const { return 4 + 2 * word_frames - overlap; }
    void validate() const;
};

const char* shape_name(int64_t shape);
const char* color_name(int64_t color);

// Image [3,R,R] in [-1,1] for class (shape, color); `sample` varies placement.
Tensor render_image(const SynthConfig& cfg, int64_t shape, int64_t color, uint64_t sample);
// Features [T,n_mels].
Tensor render_speech(const SynthConfig& cfg, int64_t shape, int64_t color, uint64_t sample);

// Writes images/, speech/ and manifest.tsv under out_dir; returns the manifest path.
fs::path synth_corpus(const SynthConfig& cfg, const fs::path& out_dir);

} // namespace s2i::data
