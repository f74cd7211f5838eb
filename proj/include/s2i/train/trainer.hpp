#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "s2i/data/dataset.hpp"
#include "s2i/model/discriminator.hpp"
#include "s2i/model/generator.hpp"
#include "s2i/model/image_nets.hpp"
#include "s2i/nn/adam.hpp"
#include "s2i/speech/encoder.hpp"
#include "s2i/train/config.hpp"

namespace s2i::train {

inline constexpr const char* kEncodersFile = "encoders.s2ic";
inline constexpr const char* kClassifierFile = "classifier.s2ic";
inline constexpr const char* kMetricsFile = "metrics.tsv";
inline constexpr const char* kMetricsHeader = "step\td_adv\tmagp\tg_adv\tdamsm";

// Frozen during adversarial training.
struct Encoders {
    std::shared_ptr<speech::SpeechEncoder> speech;
    std::shared_ptr<model::ImageMatchHead> match;
};

Encoders make_encoders(const RunConfig& cfg);
std::shared_ptr<model::Classifier> make_classifier(const RunConfig& cfg, int64_t classes);
void save_encoders(const fs::path& path, const Encoders& enc);
void load_encoders(const fs::path& path, Encoders& enc);

// Eval-mode embeddings of every caption of a split, [C,D], off the tape.
// Captions are grouped by length so no sequence is padded.
Tensor embed_captions(speech::SpeechEncoder& enc, const data::SplitData& split, int64_t chunk = 64);
// Match-head embeddings of images, [N,D], off the tape.
Tensor embed_images(const model::ImageMatchHead& head, const Tensor& images, int64_t chunk = 64);

struct PretrainReport {
    std::vector<double> damsm_trace;
    std::vector<double> classifier_trace;
    // Held-out mean cosine of matched caption/image pairs and of all other pairs.
    double matched_cos = 0.0;
    double mismatched_cos = 0.0;
    double classifier_accuracy = 0.0;
    double gap() const { return matched_cos - mismatched_cos; }
};

// Encoder + match head with the matching loss, then the evaluation
// classifier with cross-entropy. Writes kEncodersFile and kClassifierFile
// under out_dir.
PretrainReport pretrain(const RunConfig& cfg, const data::SplitData& train, const data::SplitData& test,
                        Encoders& enc, model::Classifier& cls, const fs::path& out_dir);

struct StepRecord {
    int64_t step = 0; // 1-based index of the finished step
    double d_adv = 0, magp = 0, g_adv = 0, damsm = 0;
    double d_grad_norm = 0, g_grad_norm = 0;
    std::string tsv() const;
};

// Everything one adversarial step consumes; a pure function of (seed, step).
struct StepInputs {
    Tensor real, speech, z, fake;
    std::vector<int64_t> captions;
};

class Trainer {
public:
    Trainer(const RunConfig& cfg, const data::SplitData& train, Encoders enc);

    StepInputs prepare();
    // Discriminator update on (real, fake.detach(), shifted speech) + MA-GP.
    void d_update(const StepInputs& in, StepRecord& rec);
    // Generator update on the same fake sample + weighted matching loss.
    void g_update(const StepInputs& in, StepRecord& rec);
    // One D step then one G step. Throws NumericError on non-finite values.
    StepRecord step();

    int64_t step_count() const { return step_; }
    void save(const fs::path& path) const;
    void load(const fs::path& path);

    model::Generator& generator() { return *G_; }
    model::Discriminator& discriminator() { return *D_; }
    const nn::Adam& opt_g() const { return *opt_g_; }
    const nn::Adam& opt_d() const { return *opt_d_; }
    const Encoders& encoders() const { return enc_; }
    const RunConfig& config() const { return cfg_; }

private:
    const data::Batch& batch_for(int64_t step);

    RunConfig cfg_;
    const data::SplitData& data_;
    Encoders enc_;
    Tensor embeddings_; // [captions, D]
    std::shared_ptr<model::Generator> G_;
    std::shared_ptr<model::Discriminator> D_;
    std::unique_ptr<nn::Adam> opt_g_, opt_d_;
    int64_t step_ = 0;
    int64_t cached_epoch_ = -1;
    std::vector<data::Batch> epoch_batches_;
};

std::string checkpoint_name(int64_t step);

struct TrainOutcome {
    int64_t final_step = 0;
    fs::path final_checkpoint;
    std::vector<StepRecord> records; // this invocation's steps only
};

// Called after every eval_every-th step (and at step 0 on a fresh run).
using EvalHook = std::function<void(Trainer&, int64_t step)>;

// Adversarial loop: init checkpoint at step 0 (fresh runs), metric log in
// out_dir/metrics.tsv, periodic and final checkpoints. On resume the log is
// cut back to the checkpoint's step. A non-finite value writes
// out_dir/abort_step<k>.txt and rethrows.
TrainOutcome run_training(Trainer& t, const fs::path& out_dir, const std::optional<fs::path>& resume = std::nullopt,
                          const EvalHook& hook = {});

} // namespace s2i::train
