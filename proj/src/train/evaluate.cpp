#include "s2i/train/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "s2i/core/autograd.hpp"
#include "s2i/core/error.hpp"
#include "s2i/core/ops.hpp"
#include "s2i/core/rng.hpp"
#include "s2i/train/trainer.hpp"

namespace s2i::train {

namespace {

constexpr uint64_t kEvalZ = 0xe7a1;

bool wants(const RunConfig& cfg, const char* m)
{
    return std::find(cfg.eval.metrics.begin(), cfg.eval.metrics.end(), m) != cfg.eval.metrics.end();
}

std::string num(const std::optional<double>& v)
{
    if (!v)
        return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", *v);
    return buf;
}

} // namespace

Tensor eval_latent(uint64_t seed, int64_t caption, int64_t sample, int64_t z_dim)
{
    Rng r(mix_seed(mix_seed(seed, kEvalZ), static_cast<uint64_t>(caption), static_cast<uint64_t>(sample)));
    return r.normal_tensor({1, z_dim});
}

Tensor generate_images(model::Generator& G, const Tensor& speech, const std::vector<int64_t>& captions,
                       int64_t samples, uint64_t seed, int64_t chunk)
{
    NoGradGuard ng;
    const bool was_training = G.is_training();
    G.eval();
    std::vector<int64_t> cap_rows;
    std::vector<Tensor> zs;
    for (int64_t c : captions)
        for (int64_t k = 0; k < samples; ++k) {
            cap_rows.push_back(c);
            zs.push_back(eval_latent(seed, c, k, G.config().z_dim));
        }
    std::vector<Tensor> out;
    for (size_t i = 0; i < cap_rows.size(); i += chunk) {
        const size_t n = std::min(cap_rows.size() - i, static_cast<size_t>(chunk));
        std::vector<int64_t> rows(cap_rows.begin() + i, cap_rows.begin() + i + n);
        std::vector<Tensor> zpart(zs.begin() + i, zs.begin() + i + n);
        out.push_back(G.forward(concat(zpart, 0), index_select(speech, rows)));
    }
    G.train(was_training);
    return concat(out, 0);
}

EvalContext make_eval_context(const data::SplitData& split, const Tensor& speech, const model::Classifier* cls,
                              const model::ImageMatchHead* match)
{
    EvalContext ctx;
    ctx.split = &split;
    ctx.speech = speech;
    ctx.classifier = cls;
    ctx.match = match;
    if (cls) {
        ctx.real_features = cls->extract(split.images()).features;
        ctx.real_stats = metrics::gaussian_stats(ctx.real_features);
    }
    return ctx;
}

EvalReport evaluate(const RunConfig& cfg, model::Generator& G, const EvalContext& ctx, int64_t step)
{
    const auto& split = *ctx.split;
    const bool need_cls = wants(cfg, "is") || wants(cfg, "fid") || wants(cfg, "map");
    if (need_cls && !ctx.classifier)
        throw ConfigError("IS, FID and mAP need the trained classifier (" + std::string(kClassifierFile) + ")");
    if (wants(cfg, "r50") && !ctx.match)
        throw ConfigError("R@50 needs the image match head (" + std::string(kEncodersFile) + ")");

    int64_t n_caps = split.caption_count();
    if (cfg.eval.max_captions > 0)
        n_caps = std::min(n_caps, cfg.eval.max_captions);
    std::vector<int64_t> caps(n_caps);
    for (int64_t c = 0; c < n_caps; ++c)
        caps[c] = c;
    const int64_t S = cfg.eval.samples_per_caption;
    Tensor fake = generate_images(G, ctx.speech, caps, S, cfg.seed);

    EvalReport r;
    r.step = step;
    r.n_generated = fake.size(0);
    r.n_real = split.size();

    std::vector<int64_t> q_labels;
    for (int64_t c : caps)
        for (int64_t k = 0; k < S; ++k)
            q_labels.push_back(split.labels()[split.caption_item(c)]);
    std::map<int64_t, int64_t> counts;
    for (int64_t l : split.labels())
        ++counts[l];
    for (int64_t l : q_labels)
        r.class_prior += static_cast<double>(counts[l]) / split.size() / q_labels.size();

    if (need_cls) {
        model::Extracted ex = ctx.classifier->extract(fake);
        if (wants(cfg, "is"))
            r.is = metrics::inception_score(ex.probs, metrics::default_is_splits(fake.size(0)));
        if (wants(cfg, "fid"))
            r.fid = metrics::fid(metrics::gaussian_stats(ex.features), ctx.real_stats);
        if (wants(cfg, "map"))
            r.map = metrics::retrieval_map(ex.features, ctx.real_features, q_labels, split.labels());
    }
    if (wants(cfg, "r50")) {
        std::vector<int64_t> first(n_caps);
        for (int64_t c = 0; c < n_caps; ++c)
            first[c] = c * S;
        Tensor gallery = embed_images(*ctx.match, index_select(fake, first));
        std::vector<int64_t> truth(n_caps);
        for (int64_t c = 0; c < n_caps; ++c)
            truth[c] = c;
        r.r50 = metrics::recall_at_k(index_select(ctx.speech, caps), gallery, truth, cfg.eval.recall_k);
    }
    return r;
}

std::string EvalReport::tsv_header() const { return "step\tn\tis_mean\tis_std\tfid\tmap\tr50\tclass_prior"; }

std::string EvalReport::tsv() const
{
    return std::to_string(step) + "\t" + std::to_string(n_generated) + "\t" +
           num(is ? std::optional<double>(is->mean) : std::nullopt) + "\t" +
           num(is ? std::optional<double>(is->std) : std::nullopt) + "\t" + num(fid) + "\t" + num(map) + "\t" +
           num(r50) + "\t" + num(class_prior);
}

} // namespace s2i::train
