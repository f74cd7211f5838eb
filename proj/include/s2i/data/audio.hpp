#pragma once

#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i::data {

struct MelConfig {
    int64_t n_mels = 40;
    int64_t win = 400; // 25 ms at 16 kHz
    int64_t hop = 160; // 10 ms at 16 kHz
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK filters over the win/2+1 FFT bins, [n_mels, bins].
std::vector<std::vector<double>> mel_filterbank(int64_t n_mels, int64_t win, double sample_rate);
// Centre frequency of each filter in Hz.
std::vector<double> mel_centers(int64_t n_mels, double sample_rate);

int64_t frame_count(int64_t samples, int64_t win, int64_t hop);

// Hann-windowed magnitude STFT -> mel filterbank -> log(x + 1e-6).
// Returns [T, n_mels] with T = 1 + (samples - win) / hop.
Tensor log_mel(const std::vector<double>& pcm, double sample_rate, const MelConfig& cfg);

} // namespace s2i::data
