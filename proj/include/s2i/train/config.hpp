#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s2i/data/synth.hpp"
#include "s2i/losses/losses.hpp"
#include "s2i/model/discriminator.hpp"
#include "s2i/model/generator.hpp"
#include "s2i/speech/encoder.hpp"

namespace s2i::train {

namespace fs = std::filesystem;

struct TrainSettings {
    double lr_g = 1e-4;
    double lr_d = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    int64_t batch = 16;
    int64_t steps = 5000;
    int64_t checkpoint_every = 500;
    int64_t eval_every = 0; // 0 disables periodic evaluation
};

struct PretrainSettings {
    int64_t steps = 1000;
    int64_t batch = 32;
    double lr = 1e-3;
    int64_t classifier_steps = 600;
    double classifier_lr = 1e-3;
};

struct EvalSettings {
    int64_t samples_per_caption = 1;
    int64_t max_captions = 0; // 0 = every caption of the split
    std::vector<std::string> metrics{"is", "fid", "map", "r50"};
    int64_t recall_k = 50;
};

struct Paths {
    fs::path corpus = "corpus";
    fs::path checkpoints = "run/checkpoints";
    fs::path reports = "run/reports";
};

// Everything one run needs. Built from a profile ("desk" or "full") with a
// JSON document layered on top; unknown keys are rejected.
struct RunConfig {
    std::string profile = "desk";
    uint64_t seed = 1;
    Paths paths;
    data::SynthConfig corpus;
    speech::SpeechEncoderConfig speech;
    model::GeneratorConfig generator;
    model::DiscriminatorConfig discriminator;
    losses::LossWeights losses;
    TrainSettings train;
    PretrainSettings pretrain;
    EvalSettings eval;

    int64_t resolution() const { return generator.out_res(); }
    int64_t speech_dim() const { return speech.dim(); }

    // Cross-field checks (resolution agreement, TTUR sanity, batch >= 2...).
    void validate() const;
    // Resolved document; parsing it back yields the same config.
    std::string to_json() const;
    // FNV-1a of to_json().
    uint64_t hash() const;
};

RunConfig profile_defaults(const std::string& profile);
// Relative paths in the document are resolved against base_dir.
RunConfig parse_config(const std::string& json_text, const fs::path& base_dir = ".");
RunConfig load_config(const fs::path& path);
// Writes <dir>/resolved_config.json.
void write_snapshot(const RunConfig& cfg, const fs::path& dir);

uint64_t fnv1a(const void* data, size_t size, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a_file(const fs::path& path);

} // namespace s2i::train
