#include "s2i/data/synth.hpp"

#include <cmath>
#include <cstdio>

#include "s2i/core/rng.hpp"
#include "s2i/data/io.hpp"

namespace s2i::data {

namespace {

constexpr const char* kShapes[kMaxShapes] = {"circle", "square", "triangle", "cross", "ring"};
constexpr const char* kColors[kMaxColors] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
constexpr double kRgb[kMaxColors][3] = {{0.9, 0.15, 0.1}, {0.15, 0.8, 0.2}, {0.15, 0.3, 0.95},
                                        {0.95, 0.85, 0.1}, {0.85, 0.2, 0.8}, {0.1, 0.85, 0.85}};

constexpr uint64_t kImageStream = 0x1a6e, kSpeechStream = 0x5bee, kSplitStream = 0x5b17;

// Point-in-shape test in shape-local units (radius 1).
bool inside(int64_t shape, double x, double y)
{
    switch (shape) {
    case 0: return x * x + y * y <= 1.0;
    case 1: return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
    case 2: return y >= -1.0 && y <= 0.75 && std::abs(x) <= (y + 1.0) * 0.55;
    case 3: return (std::abs(x) <= 0.3 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.3 && std::abs(x) <= 1.0);
    case 4: {
        const double r2 = x * x + y * y;
        return r2 <= 1.0 && r2 >= 0.45;
    }
    }
    return false;
}

} // namespace

void SynthConfig::validate() const
{
    if (n_shapes < 1 || n_shapes > kMaxShapes)
        throw ConfigError("n_shapes must be in 1.." + std::to_string(kMaxShapes));
    if (n_colors < 1 || n_colors > kMaxColors)
        throw ConfigError("n_colors must be in 1.." + std::to_string(kMaxColors));
    if (per_class < 2 || captions_per_image < 1)
        throw ConfigError("per_class must be >= 2 and captions_per_image >= 1");
    if (image_size < 16 || image_size % 4 != 0)
        throw ConfigError("image_size must be a multiple of 4 and at least 16");
    if (n_mels < 8 || word_frames < 4 || overlap < 0 || overlap >= word_frames)
        throw ConfigError("pseudo-speech needs n_mels >= 8, word_frames >= 4 and 0 <= overlap < word_frames");
    if (noise < 0 || test_fraction <= 0 || test_fraction >= 1)
        throw ConfigError("noise must be >= 0 and test_fraction in (0,1)");
}

const char* shape_name(int64_t shape) { return kShapes[shape]; }
const char* color_name(int64_t color) { return kColors[color]; }

Tensor render_image(const SynthConfig& cfg, int64_t shape, int64_t color, uint64_t sample)
{
    Rng rng(mix_seed(cfg.seed, sample, kImageStream));
    const int64_t R = cfg.image_size;
    const double u = static_cast<double>(R) / 64.0;
    Tensor img = Tensor::empty({3, R, R});
    float* d = img.data<float>();

    // Background: tinted gray with a low-frequency wave and grain.
    const double base = rng.uniform(0.3, 0.55);
    double tint[3];
    for (double& t : tint)
        t = rng.uniform(-0.05, 0.05);
    const double fx = rng.uniform(0.5, 2.0) * 2 * M_PI / R, fy = rng.uniform(0.5, 2.0) * 2 * M_PI / R;
    const double phase = rng.uniform(0, 2 * M_PI), amp = rng.uniform(0.03, 0.08);

    const double cx = R / 2.0 + rng.uniform(-8, 8) * u, cy = R / 2.0 + rng.uniform(-8, 8) * u;
    const double radius = rng.uniform(13, 20) * u;
    const double rot = shape == 0 || shape == 4 ? 0.0 : rng.uniform(-0.3, 0.3);
    const double shade = rng.uniform(0.85, 1.1);
    const double cr = std::cos(rot), sr = std::sin(rot);

    for (int64_t y = 0; y < R; ++y)
        for (int64_t x = 0; x < R; ++x) {
            const double bg = base + amp * std::sin(fx * x + fy * y + phase);
            const double dx = (x + 0.5 - cx) / radius, dy = (y + 0.5 - cy) / radius;
            const bool in = inside(shape, cr * dx + sr * dy, -sr * dx + cr * dy);
            for (int64_t c = 0; c < 3; ++c) {
                double v = in ? kRgb[color][c] * shade : bg + tint[c];
                v += rng.normal(0, 0.02);
                const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
                d[(c * R + y) * R + x] = static_cast<float>(2.0 * q - 1.0);
            }
        }
    return img;
}

Tensor render_speech(const SynthConfig& cfg, int64_t shape, int64_t color, uint64_t sample)
{
    Rng rng(mix_seed(cfg.seed, sample, kSpeechStream));
    const int64_t T = cfg.frames(), M = cfg.n_mels, L = cfg.word_frames;
    const double scale = static_cast<double>(M) / 40.0;
    std::vector<double> e(T * M, 0.0);

    // Color words sit in the low bands, shape words in the high bands; each
    // word also sweeps up or down so neighbouring words differ in contour.
    auto speak = [&](double band, double slope, int64_t start) {
        const double amp = rng.uniform(0.8, 1.2), shift = rng.normal(0, 0.4) * scale;
        for (int64_t f = 0; f < L; ++f) {
            const int64_t t = start + f;
            if (t < 0 || t >= T)
                continue;
            const double env = std::sin(M_PI * (f + 0.5) / L);
            const double c = band + shift + slope * scale * (static_cast<double>(f) / L - 0.5);
            for (int64_t m = 0; m < M; ++m) {
                const double z = (m - c) / (1.5 * scale), z2 = (m - c - 4 * scale) / (1.5 * scale);
                e[t * M + m] += amp * env * (std::exp(-0.5 * z * z) + 0.4 * std::exp(-0.5 * z2 * z2));
            }
        }
    };
    const int64_t lead = 2 + rng.randint(-1, 2);
    speak((3.0 + 4.0 * color) * scale, color % 2 ? 4.0 : -4.0, lead);
    speak((24.0 + 3.0 * shape) * scale, shape % 2 ? -5.0 : 5.0, lead + L - cfg.overlap);

    Tensor out = Tensor::empty({T, M});
    for (int64_t i = 0; i < T * M; ++i)
        out.data<float>()[i] = static_cast<float>(e[i] + rng.normal(0, cfg.noise));
    return out;
}

fs::path synth_corpus(const SynthConfig& cfg, const fs::path& out_dir)
{
    cfg.validate();
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "speech");
    std::vector<Record> records;
    const int64_t n_test = std::max<int64_t>(1, std::llround(cfg.per_class * cfg.test_fraction));
    char name[64];
    uint64_t sample = 0;
    for (int64_t shape = 0; shape < cfg.n_shapes; ++shape)
        for (int64_t color = 0; color < cfg.n_colors; ++color) {
            const int64_t label = shape * cfg.n_colors + color;
            Rng split_rng(mix_seed(cfg.seed, static_cast<uint64_t>(label), kSplitStream));
            auto order = split_rng.permutation(cfg.per_class);
            std::vector<bool> is_test(cfg.per_class, false);
            for (int64_t i = 0; i < n_test; ++i)
                is_test[order[i]] = true;
            for (int64_t i = 0; i < cfg.per_class; ++i, ++sample) {
                std::snprintf(name, sizeof name, "c%02lld_%04lld", static_cast<long long>(label), static_cast<long long>(i));
                const std::string img = std::string("images/") + name + ".png";
                write_png(out_dir / img, render_image(cfg, shape, color, sample));
                for (int64_t k = 0; k < cfg.captions_per_image; ++k) {
                    const std::string cap = std::string(name) + "_" + std::to_string(k);
                    const std::string feat = "speech/" + cap + ".feat";
                    const uint64_t key = sample * static_cast<uint64_t>(cfg.captions_per_image) + k;
                    write_features(out_dir / feat, render_speech(cfg, shape, color, key));
                    records.push_back({is_test[i] ? "test" : "train", label, img, feat, cap});
                }
            }
        }
    const fs::path manifest = out_dir / "manifest.tsv";
    save_manifest(manifest, records);
    return manifest;
}

} // namespace s2i::data
