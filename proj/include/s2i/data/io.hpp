#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i::data {

namespace fs = std::filesystem;

// 8-bit RGB PNG <-> [3,H,W] float tensor in [-1,1] (0 -> -1, 255 -> 1).
Tensor read_png(const fs::path& path);
void write_png(const fs::path& path, const Tensor& image);
// Raw interleaved RGB8, row-major.
void write_png_rgb8(const fs::path& path, const std::vector<uint8_t>& rgb, int64_t width, int64_t height);
std::vector<uint8_t> to_rgb8(const Tensor& image);

// Speech feature record: u32 T, u32 F, then T*F little-endian float32.
void write_features(const fs::path& path, const Tensor& frames);
Tensor read_features(const fs::path& path);
// Header only; throws DataError if the file size disagrees with it.
std::pair<int64_t, int64_t> probe_features(const fs::path& path);

struct Wav {
    int64_t sample_rate = 0;
    std::vector<double> samples; // mono, in [-1,1]
};

// 16-bit PCM RIFF/WAVE; channels are averaged.
Wav read_wav(const fs::path& path);
void write_wav(const fs::path& path, const Wav& wav);

} // namespace s2i::data
