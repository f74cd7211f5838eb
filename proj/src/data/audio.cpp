#include "s2i/data/audio.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>

namespace s2i::data {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points(int64_t n_mels, double sample_rate)
{
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> hz(n_mels + 2);
    for (int64_t i = 0; i < n_mels + 2; ++i)
        hz[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    return hz;
}

} // namespace

std::vector<double> mel_centers(int64_t n_mels, double sample_rate)
{
    auto pts = mel_points(n_mels, sample_rate);
    return {pts.begin() + 1, pts.end() - 1};
}

std::vector<std::vector<double>> mel_filterbank(int64_t n_mels, int64_t win, double sample_rate)
{
    if (n_mels < 1 || win < 2)
        throw ConfigError("mel filterbank needs n_mels >= 1 and win >= 2");
    const int64_t bins = win / 2 + 1;
    auto hz = mel_points(n_mels, sample_rate);
    std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
    for (int64_t m = 0; m < n_mels; ++m) {
        const double lo = hz[m], mid = hz[m + 1], hi = hz[m + 2];
        for (int64_t k = 0; k < bins; ++k) {
            const double f = sample_rate * static_cast<double>(k) / static_cast<double>(win);
            if (f > lo && f < mid)
                fb[m][k] = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                fb[m][k] = (hi - f) / (hi - mid);
        }
    }
    return fb;
}

int64_t frame_count(int64_t samples, int64_t win, int64_t hop)
{
    if (win < 1 || hop < 1)
        throw ConfigError("window and hop must be positive");
    if (samples < win)
        throw ContractError("signal of " + std::to_string(samples) + " samples is shorter than one window (" +
                            std::to_string(win) + ")");
    return 1 + (samples - win) / hop;
}

Tensor log_mel(const std::vector<double>& pcm, double sample_rate, const MelConfig& cfg)
{
    const int64_t win = cfg.win, bins = win / 2 + 1;
    const int64_t T = frame_count(static_cast<int64_t>(pcm.size()), win, cfg.hop);
    auto fb = mel_filterbank(cfg.n_mels, win, sample_rate);

    std::vector<double> hann(win);
    for (int64_t i = 0; i < win; ++i)
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win));

    std::unique_ptr<double, decltype(&fftw_free)> in(fftw_alloc_real(win), fftw_free);
    std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(fftw_alloc_complex(bins), fftw_free);
    std::unique_ptr<fftw_plan_s, decltype(&fftw_destroy_plan)> plan(
        fftw_plan_dft_r2c_1d(static_cast<int>(win), in.get(), out.get(), FFTW_ESTIMATE), fftw_destroy_plan);

    Tensor mel = Tensor::empty({T, cfg.n_mels});
    float* dst = mel.data<float>();
    std::vector<double> mag(bins);
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t i = 0; i < win; ++i)
            in.get()[i] = pcm[t * cfg.hop + i] * hann[i];
        fftw_execute(plan.get());
        for (int64_t k = 0; k < bins; ++k)
            mag[k] = std::hypot(out.get()[k][0], out.get()[k][1]);
        for (int64_t m = 0; m < cfg.n_mels; ++m) {
            double e = 0;
            for (int64_t k = 0; k < bins; ++k)
                e += fb[m][k] * mag[k];
            dst[t * cfg.n_mels + m] = static_cast<float>(std::log(e + 1e-6));
        }
    }
    return mel;
}

} // namespace s2i::data
