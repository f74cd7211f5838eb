#include "s2i/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "s2i/core/autograd.hpp"
#include "s2i/core/checkpoint.hpp"
#include "s2i/core/error.hpp"
#include "s2i/core/ops.hpp"
#include "s2i/core/rng.hpp"
#include "s2i/losses/losses.hpp"

namespace s2i::train {

namespace {

// Seed streams.
constexpr uint64_t kGenInit = 0x6e1, kDiscInit = 0xd15, kEncInit = 0xe4c, kClsInit = 0xc15;
constexpr uint64_t kZStream = 0x2a, kGanBatches = 0xba, kMatchBatches = 0xda, kClsBatches = 0xcb;

nn::NamedTensors prefixed(const std::string& p, const nn::NamedTensors& ts)
{
    nn::NamedTensors out;
    for (const auto& [n, t] : ts)
        out.emplace_back(p + n, t);
    return out;
}

void append(nn::NamedTensors& dst, const nn::NamedTensors& src) { dst.insert(dst.end(), src.begin(), src.end()); }

double grad_norm(const nn::NamedTensors& params)
{
    double acc = 0;
    for (const auto& [n, p] : params) {
        Tensor g = p.grad();
        if (!g.defined())
            continue;
        for (double v : g.to_vector())
            acc += v * v;
    }
    return std::sqrt(acc);
}

nn::Adam pretrain_adam(const nn::NamedTensors& params, double lr)
{
    return nn::Adam(params, nn::AdamConfig{.lr = lr, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
}

// Cycles through per-epoch batch lists.
class BatchStream {
public:
    BatchStream(const data::SplitData& d, int64_t batch, uint64_t seed) : d_(d), batch_(batch), seed_(seed) {}
    const data::Batch& next()
    {
        if (pos_ >= static_cast<int64_t>(cur_.size())) {
            cur_ = d_.batches(batch_, seed_, epoch_++);
            pos_ = 0;
        }
        return cur_[pos_++];
    }

private:
    const data::SplitData& d_;
    int64_t batch_;
    uint64_t seed_;
    int64_t epoch_ = 0, pos_ = 0;
    std::vector<data::Batch> cur_;
};

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Encoders make_encoders(const RunConfig& cfg)
{
    Rng rng(mix_seed(cfg.seed, kEncInit));
    Encoders e;
    e.speech = std::make_shared<speech::SpeechEncoder>(cfg.speech, rng);
    e.match = std::make_shared<model::ImageMatchHead>(cfg.resolution(), cfg.speech_dim(), rng);
    return e;
}

std::shared_ptr<model::Classifier> make_classifier(const RunConfig& cfg, int64_t classes)
{
    Rng rng(mix_seed(cfg.seed, kClsInit));
    return std::make_shared<model::Classifier>(cfg.resolution(), classes, rng);
}

void save_encoders(const fs::path& path, const Encoders& enc)
{
    nn::NamedTensors rec = prefixed("speech.", enc.speech->state());
    append(rec, prefixed("match.", enc.match->state()));
    save_checkpoint(path, "encoders", rec);
}

void load_encoders(const fs::path& path, Encoders& enc)
{
    Checkpoint ck = load_checkpoint(path);
    if (ck.module != "encoders")
        throw ConfigError(path.string() + " holds '" + ck.module + "', not encoders");
    restore(ck.with_prefix("speech."), enc.speech->state(), "speech encoder");
    restore(ck.with_prefix("match."), enc.match->state(), "image match head");
}

Tensor embed_captions(speech::SpeechEncoder& enc, const data::SplitData& split, int64_t chunk)
{
    NoGradGuard ng;
    const bool was_training = enc.is_training();
    enc.eval();
    std::map<int64_t, std::vector<int64_t>> by_len;
    for (int64_t c = 0; c < split.caption_count(); ++c)
        by_len[split.speech(c).size(0)].push_back(c);
    std::vector<Tensor> rows(split.caption_count());
    for (const auto& [len, caps] : by_len)
        for (size_t i = 0; i < caps.size(); i += chunk) {
            std::vector<int64_t> part(caps.begin() + i, caps.begin() + std::min(caps.size(), i + chunk));
            Tensor e = enc.forward(split.speech_batch(part));
            for (size_t k = 0; k < part.size(); ++k)
                rows[part[k]] = narrow(e, 0, static_cast<int64_t>(k), 1);
        }
    enc.train(was_training);
    return concat(rows, 0);
}

Tensor embed_images(const model::ImageMatchHead& head, const Tensor& images, int64_t chunk)
{
    NoGradGuard ng;
    std::vector<Tensor> out;
    for (int64_t i = 0; i < images.size(0); i += chunk)
        out.push_back(head.forward(narrow(images, 0, i, std::min(chunk, images.size(0) - i))));
    return concat(out, 0);
}

PretrainReport pretrain(const RunConfig& cfg, const data::SplitData& train, const data::SplitData& test,
                        Encoders& enc, model::Classifier& cls, const fs::path& out_dir)
{
    const auto& p = cfg.pretrain;
    std::vector<int64_t> classes = train.labels();
    std::sort(classes.begin(), classes.end());
    if (std::unique(classes.begin(), classes.end()) - classes.begin() < 2)
        std::cerr << "warning: training split has a single class; matching pretraining is degenerate\n";
    const int64_t batch = std::min(p.batch, train.size());

    PretrainReport rep;
    enc.speech->train();
    enc.match->train();
    nn::NamedTensors params = prefixed("speech.", enc.speech->named_parameters());
    append(params, prefixed("match.", enc.match->named_parameters()));
    nn::Adam opt = pretrain_adam(params, p.lr);
    BatchStream stream(train, batch, mix_seed(cfg.seed, kMatchBatches));
    for (int64_t i = 0; i < p.steps; ++i) {
        const auto& b = stream.next();
        Tensor loss = losses::damsm_global_loss(enc.match->forward(train.image_batch(b.items)),
                                                enc.speech->forward(train.speech_batch(b.captions)),
                                                cfg.losses.damsm_gamma);
        opt.zero_grad();
        backward(loss);
        opt.step();
        rep.damsm_trace.push_back(loss.item());
        if (!std::isfinite(rep.damsm_trace.back()))
            throw NumericError("matching pretraining diverged at step " + std::to_string(i + 1));
    }
    enc.speech->eval();
    enc.match->eval();

    {
        Tensor s = embed_captions(*enc.speech, test);
        Tensor im = embed_images(*enc.match, test.images());
        Tensor sn = l2_normalize_rows(s), imn = l2_normalize_rows(im);
        NoGradGuard ng;
        Tensor cos = matmul(sn, imn, false, true);
        const int64_t C = cos.size(0), N = cos.size(1);
        double m = 0, mm = 0;
        for (int64_t c = 0; c < C; ++c)
            for (int64_t j = 0; j < N; ++j)
                (j == test.caption_item(c) ? m : mm) += cos.at(c * N + j);
        rep.matched_cos = m / C;
        rep.mismatched_cos = N > 1 ? mm / (C * (N - 1)) : 0.0;
    }

    cls.train();
    nn::Adam copt = pretrain_adam(cls.named_parameters(), p.classifier_lr);
    BatchStream cstream(train, batch, mix_seed(cfg.seed, kClsBatches));
    for (int64_t i = 0; i < p.classifier_steps; ++i) {
        const auto& b = cstream.next();
        std::vector<int64_t> y;
        for (int64_t it : b.items)
            y.push_back(train.labels()[it]);
        Tensor loss = nll_loss(log_softmax(cls.forward(train.image_batch(b.items)), 1), y);
        copt.zero_grad();
        backward(loss);
        copt.step();
        rep.classifier_trace.push_back(loss.item());
        if (!std::isfinite(rep.classifier_trace.back()))
            throw NumericError("classifier pretraining diverged at step " + std::to_string(i + 1));
    }
    cls.eval();
    {
        Tensor probs = cls.extract(test.images()).probs;
        const int64_t K = probs.size(1);
        int64_t hits = 0;
        for (int64_t i = 0; i < test.size(); ++i) {
            int64_t best = 0;
            for (int64_t k = 1; k < K; ++k)
                if (probs.at(i * K + k) > probs.at(i * K + best))
                    best = k;
            hits += best == test.labels()[i];
        }
        rep.classifier_accuracy = static_cast<double>(hits) / test.size();
    }

    fs::create_directories(out_dir);
    save_encoders(out_dir / kEncodersFile, enc);
    save_module(out_dir / kClassifierFile, "classifier", cls);
    return rep;
}

std::string StepRecord::tsv() const
{
    return std::to_string(step) + "\t" + fmt(d_adv) + "\t" + fmt(magp) + "\t" + fmt(g_adv) + "\t" + fmt(damsm);
}

Trainer::Trainer(const RunConfig& cfg, const data::SplitData& train, Encoders enc)
    : cfg_(cfg), data_(train), enc_(std::move(enc))
{
    cfg_.validate();
    if (train.resolution() != cfg_.resolution())
        throw ConfigError("corpus images are " + std::to_string(train.resolution()) + " px but the generator emits " +
                          std::to_string(cfg_.resolution()) + " px");
    if (train.n_mels() != cfg_.speech.n_mels)
        throw ConfigError("corpus speech has " + std::to_string(train.n_mels()) + " bands, encoder expects " +
                          std::to_string(cfg_.speech.n_mels));
    if (cfg_.train.batch > train.size())
        throw ConfigError("train.batch " + std::to_string(cfg_.train.batch) + " exceeds the " +
                          std::to_string(train.size()) + " training images");
    enc_.speech->eval();
    enc_.match->eval();
    enc_.speech->set_requires_grad(false);
    enc_.match->set_requires_grad(false);
    embeddings_ = embed_captions(*enc_.speech, train);

    Rng g_rng(mix_seed(cfg_.seed, kGenInit));
    G_ = std::make_shared<model::Generator>(cfg_.generator, g_rng);
    Rng d_rng(mix_seed(cfg_.seed, kDiscInit));
    D_ = std::make_shared<model::Discriminator>(cfg_.discriminator, d_rng);
    const auto& t = cfg_.train;
    opt_g_ = std::make_unique<nn::Adam>(G_->named_parameters(),
                                        nn::AdamConfig{.lr = t.lr_g, .beta1 = t.beta1, .beta2 = t.beta2});
    opt_d_ = std::make_unique<nn::Adam>(D_->named_parameters(),
                                        nn::AdamConfig{.lr = t.lr_d, .beta1 = t.beta1, .beta2 = t.beta2});
}

const data::Batch& Trainer::batch_for(int64_t step)
{
    const int64_t per_epoch = data_.size() / cfg_.train.batch;
    const int64_t epoch = step / per_epoch;
    if (epoch != cached_epoch_) {
        epoch_batches_ = data_.batches(cfg_.train.batch, mix_seed(cfg_.seed, kGanBatches), epoch);
        cached_epoch_ = epoch;
    }
    return epoch_batches_[step % per_epoch];
}

StepInputs Trainer::prepare()
{
    const auto& b = batch_for(step_);
    StepInputs in;
    in.captions = b.captions;
    in.real = data_.image_batch(b.items);
    in.speech = index_select(embeddings_, b.captions);
    Rng zr(mix_seed(cfg_.seed, static_cast<uint64_t>(step_), kZStream));
    in.z = zr.normal_tensor({static_cast<int64_t>(b.items.size()), cfg_.generator.z_dim});
    G_->train();
    D_->train();
    in.fake = G_->forward(in.z, in.speech);
    return in;
}

void Trainer::d_update(const StepInputs& in, StepRecord& rec)
{
    D_->set_requires_grad(true);
    Tensor real_feats;
    auto critic = [&](const Tensor& x, const Tensor& s) {
        real_feats = D_->encode_image(x);
        return D_->score(real_feats, s);
    };
    auto gp = losses::magp_loss(in.real, in.speech, critic, cfg_.losses);
    Tensor d_mis = D_->score(real_feats, index_select(in.speech, losses::mismatch_shift(in.real.size(0))));
    Tensor d_fake = D_->forward(in.fake.detach(), in.speech);
    Tensor adv = losses::hinge_d_loss(gp.scores, d_fake, d_mis);
    opt_d_->zero_grad();
    backward(adv + gp.loss);
    rec.d_adv = adv.item();
    rec.magp = gp.loss.item();
    rec.d_grad_norm = grad_norm(D_->named_parameters());
    opt_d_->step();
}

void Trainer::g_update(const StepInputs& in, StepRecord& rec)
{
    D_->set_requires_grad(false);
    Tensor adv = losses::hinge_g_loss(D_->forward(in.fake, in.speech));
    Tensor match = losses::damsm_global_loss(enc_.match->forward(in.fake), in.speech, cfg_.losses.damsm_gamma);
    opt_g_->zero_grad();
    backward(adv + cfg_.losses.damsm_lambda * match);
    D_->set_requires_grad(true);
    rec.g_adv = adv.item();
    rec.damsm = match.item();
    rec.g_grad_norm = grad_norm(G_->named_parameters());
    opt_g_->step();
}

StepRecord Trainer::step()
{
    StepRecord rec;
    rec.step = step_ + 1;
    StepInputs in = prepare();
    d_update(in, rec);
    g_update(in, rec);
    for (double v : {rec.d_adv, rec.magp, rec.g_adv, rec.damsm, rec.d_grad_norm, rec.g_grad_norm})
        if (!std::isfinite(v)) {
            std::ostringstream msg;
            msg << "non-finite value at step " << rec.step << ": d_adv " << rec.d_adv << ", magp " << rec.magp
                << ", g_adv " << rec.g_adv << ", damsm " << rec.damsm << ", |grad D| " << rec.d_grad_norm
                << ", |grad G| " << rec.g_grad_norm;
            throw NumericError(msg.str());
        }
    ++step_;
    return rec;
}

void Trainer::save(const fs::path& path) const
{
    nn::NamedTensors rec = prefixed("G.", G_->state());
    append(rec, prefixed("D.", D_->state()));
    append(rec, prefixed("optG.", opt_g_->state()));
    append(rec, prefixed("optD.", opt_d_->state()));
    rec.emplace_back("meta.step", Tensor::scalar(static_cast<double>(step_), DType::F64));
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    save_checkpoint(path, "gan", rec);
}

void Trainer::load(const fs::path& path)
{
    Checkpoint ck = load_checkpoint(path);
    if (ck.module != "gan")
        throw ConfigError(path.string() + " holds '" + ck.module + "', not a training checkpoint");
    restore(ck.with_prefix("G."), G_->state(), "generator");
    restore(ck.with_prefix("D."), D_->state(), "discriminator");
    opt_g_->load_state(ck.with_prefix("optG."));
    opt_d_->load_state(ck.with_prefix("optD."));
    step_ = static_cast<int64_t>(ck.get("meta.step").item());
}

std::string checkpoint_name(int64_t step)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%06lld.s2ic", static_cast<long long>(step));
    return buf;
}

namespace {

void cut_log(const fs::path& log, int64_t step)
{
    std::vector<std::string> keep;
    {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) {
            if (keep.empty()) {
                keep.push_back(line);
                continue;
            }
            if (std::stoll(line.substr(0, line.find('\t'))) <= step)
                keep.push_back(line);
        }
    }
    if (keep.empty())
        keep.push_back(kMetricsHeader);
    std::ofstream out(log, std::ios::trunc);
    for (const auto& l : keep)
        out << l << "\n";
}

} // namespace

TrainOutcome run_training(Trainer& t, const fs::path& out_dir, const std::optional<fs::path>& resume,
                          const EvalHook& hook)
{
    fs::create_directories(out_dir);
    const auto& cfg = t.config();
    const fs::path log = out_dir / kMetricsFile;
    if (resume) {
        t.load(*resume);
        cut_log(log, t.step_count());
    } else {
        std::ofstream(log, std::ios::trunc) << kMetricsHeader << "\n";
        t.save(out_dir / checkpoint_name(0));
        if (hook)
            hook(t, 0);
    }

    TrainOutcome res;
    std::ofstream out(log, std::ios::app);
    while (t.step_count() < cfg.train.steps) {
        StepRecord rec;
        try {
            rec = t.step();
        } catch (const NumericError& e) {
            const fs::path dump = out_dir / ("abort_step" + std::to_string(t.step_count() + 1) + ".txt");
            std::ofstream(dump) << e.what() << "\n";
            throw NumericError(std::string(e.what()) + "; diagnostics written to " + dump.string());
        }
        out << rec.tsv() << "\n";
        out.flush();
        res.records.push_back(rec);
        const int64_t s = rec.step;
        if (cfg.train.checkpoint_every > 0 && s % cfg.train.checkpoint_every == 0 && s != cfg.train.steps)
            t.save(out_dir / checkpoint_name(s));
        if (hook && cfg.train.eval_every > 0 && s % cfg.train.eval_every == 0)
            hook(t, s);
    }
    res.final_step = t.step_count();
    res.final_checkpoint = out_dir / checkpoint_name(res.final_step);
    if (!fs::exists(res.final_checkpoint) || !res.records.empty())
        t.save(res.final_checkpoint);
    return res;
}

} // namespace s2i::train
