#include "s2i/cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "s2i/core/checkpoint.hpp"
#include "s2i/core/error.hpp"
#include "s2i/core/ops.hpp"
#include "s2i/data/io.hpp"
#include "s2i/train/evaluate.hpp"
#include "s2i/train/trainer.hpp"

namespace s2i::cli {

namespace {

namespace fs = std::filesystem;
using train::RunConfig;
using Json = nlohmann::ordered_json;

struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, const char* out_help)
{
    cmd->add_option("--config", c.config, "run config (JSON); desk defaults when omitted");
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--out", c.out, out_help);
}

RunConfig load(const Common& c)
{
    RunConfig cfg = c.config.empty() ? train::profile_defaults("desk") : train::load_config(c.config);
    if (c.seed)
        cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

std::string hex(uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

data::MelConfig mel_of(const RunConfig& cfg) { return data::MelConfig{.n_mels = cfg.corpus.n_mels}; }

data::Manifest open_corpus(const RunConfig& cfg)
{
    const fs::path m = cfg.paths.corpus / "manifest.tsv";
    if (!fs::exists(m))
        throw DataError("no corpus at " + cfg.paths.corpus.string() + " (run synth-data first)");
    return data::load_manifest(m, true, mel_of(cfg));
}

void write_json(const fs::path& path, const Json& j)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out)
        throw Error("cannot write " + path.string());
}

Json report_json(const train::EvalReport& r)
{
    Json j;
    j["step"] = r.step;
    j["n_generated"] = r.n_generated;
    j["n_real"] = r.n_real;
    Json m = Json::object();
    if (r.is)
        m["is"] = {{"mean", r.is->mean}, {"std", r.is->std}};
    if (r.fid)
        m["fid"] = *r.fid;
    if (r.map)
        m["map"] = *r.map;
    if (r.r50)
        m["r50"] = *r.r50;
    j["metrics"] = m;
    j["class_prior"] = r.class_prior;
    return j;
}

struct Pretrained {
    train::Encoders enc;
    std::shared_ptr<model::Classifier> cls; // null when no classifier checkpoint exists
};

Pretrained load_pretrained(const RunConfig& cfg, int64_t classes, bool need_classifier)
{
    Pretrained p{train::make_encoders(cfg), nullptr};
    const fs::path e = cfg.paths.checkpoints / train::kEncodersFile;
    if (!fs::exists(e))
        throw DataError("missing " + e.string() + " (run pretrain first)");
    train::load_encoders(e, p.enc);
    const fs::path c = cfg.paths.checkpoints / train::kClassifierFile;
    if (fs::exists(c)) {
        p.cls = train::make_classifier(cfg, classes);
        load_module(c, "classifier", *p.cls);
        p.cls->eval();
    } else if (need_classifier) {
        throw DataError("missing " + c.string() + " (run pretrain first)");
    }
    return p;
}

std::shared_ptr<model::Generator> load_generator(const RunConfig& cfg, const fs::path& ckpt)
{
    Rng rng(0);
    auto G = std::make_shared<model::Generator>(cfg.generator, rng);
    Checkpoint ck = load_checkpoint(ckpt);
    if (ck.module != "gan")
        throw ConfigError(ckpt.string() + " holds '" + ck.module + "', not a training checkpoint");
    restore(ck.with_prefix("G."), G->state(), "generator");
    return G;
}

int64_t checkpoint_step(const fs::path& ckpt)
{
    return static_cast<int64_t>(load_checkpoint(ckpt).get("meta.step").item());
}

// --- subcommands -------------------------------------------------------------

void cmd_synth(const Common& c)
{
    RunConfig cfg = load(c);
    if (c.seed)
        cfg.corpus.seed = *c.seed;
    fs::path out = c.out.empty() ? cfg.paths.corpus : fs::path(c.out);
    fs::path manifest = data::synth_corpus(cfg.corpus, out);
    train::write_snapshot(cfg, out);
    std::cout << "wrote " << manifest.string() << "\n";
}

void run_pretrain(const RunConfig& cfg, const data::SplitData& tr, const data::SplitData& te, int64_t classes)
{
    train::Encoders enc = train::make_encoders(cfg);
    auto cls = train::make_classifier(cfg, classes);
    auto rep = train::pretrain(cfg, tr, te, enc, *cls, cfg.paths.checkpoints);
    Json j;
    j["steps"] = cfg.pretrain.steps;
    j["final_damsm"] = rep.damsm_trace.empty() ? 0.0 : rep.damsm_trace.back();
    j["matched_cos"] = rep.matched_cos;
    j["mismatched_cos"] = rep.mismatched_cos;
    j["gap"] = rep.gap();
    j["classifier_steps"] = cfg.pretrain.classifier_steps;
    j["classifier_accuracy"] = rep.classifier_accuracy;
    j["config_hash"] = hex(cfg.hash());
    write_json(cfg.paths.reports / "pretrain_report.json", j);
    std::cout << "pretrain: cosine gap " << rep.gap() << ", classifier accuracy " << rep.classifier_accuracy
              << std::endl;
}

void cmd_pretrain(const Common& c)
{
    RunConfig cfg = load(c);
    if (!c.out.empty())
        cfg.paths.checkpoints = c.out;
    data::Manifest m = open_corpus(cfg);
    data::SplitData tr(m, "train", mel_of(cfg)), te(m, "test", mel_of(cfg));
    train::write_snapshot(cfg, cfg.paths.checkpoints);
    run_pretrain(cfg, tr, te, m.n_classes());
}

void cmd_train(const Common& c, const std::string& resume)
{
    RunConfig cfg = load(c);
    if (!c.out.empty())
        cfg.paths.checkpoints = c.out;
    data::Manifest m = open_corpus(cfg);
    data::SplitData tr(m, "train", mel_of(cfg)), te(m, "test", mel_of(cfg));
    if (!fs::exists(cfg.paths.checkpoints / train::kEncodersFile)) {
        std::cout << "no pretrained encoders found; pretraining first" << std::endl;
        run_pretrain(cfg, tr, te, m.n_classes());
    }
    Pretrained p = load_pretrained(cfg, m.n_classes(), false);
    train::write_snapshot(cfg, cfg.paths.checkpoints);
    train::write_snapshot(cfg, cfg.paths.reports);

    train::Trainer t(cfg, tr, p.enc);
    train::EvalHook hook;
    std::optional<train::EvalContext> ctx;
    const fs::path eval_log = cfg.paths.reports / "evals.tsv";
    if (cfg.train.eval_every > 0 && p.cls) {
        ctx = train::make_eval_context(te, train::embed_captions(*p.enc.speech, te), p.cls.get(), p.enc.match.get());
        if (resume.empty() || !fs::exists(eval_log))
            std::ofstream(eval_log, std::ios::trunc) << train::EvalReport{}.tsv_header() << "\n";
        hook = [&](train::Trainer& tt, int64_t step) {
            auto r = train::evaluate(cfg, tt.generator(), *ctx, step);
            std::ofstream(eval_log, std::ios::app) << r.tsv() << "\n";
            std::cout << "eval " << r.tsv() << std::endl;
        };
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<fs::path> res;
    if (!resume.empty())
        res = resume;
    auto out = train::run_training(t, cfg.paths.checkpoints, res, hook);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained to step " << out.final_step << " in " << secs << " s; checkpoint "
              << out.final_checkpoint.string() << "\n";
}

void cmd_generate(const Common& c, const std::string& ckpt, const std::string& split, int64_t n, int64_t captions)
{
    RunConfig cfg = load(c);
    fs::path out = c.out.empty() ? cfg.paths.reports / "samples" : fs::path(c.out);
    data::Manifest m = open_corpus(cfg);
    data::SplitData d(m, split, mel_of(cfg));
    Pretrained p = load_pretrained(cfg, m.n_classes(), false);
    auto G = load_generator(cfg, ckpt);
    if (n < 1 || captions < 1)
        throw ConfigError("--n and --captions must be positive");
    captions = std::min(captions, d.caption_count());
    std::vector<int64_t> caps(captions);
    for (int64_t i = 0; i < captions; ++i)
        caps[i] = i;
    Tensor speech = train::embed_captions(*p.enc.speech, d);
    Tensor imgs = train::generate_images(*G, speech, caps, n, cfg.seed);

    fs::create_directories(out);
    const int64_t R = imgs.size(2), pad = 2;
    const int64_t W = n * (R + pad) + pad, H = captions * (R + pad) + pad;
    std::vector<uint8_t> sheet(3 * W * H, 255);
    std::ofstream zlog(out / "z_log.tsv", std::ios::trunc);
    zlog << "caption_id\tsample\tz_hash\tz\n";
    for (int64_t ci = 0; ci < captions; ++ci)
        for (int64_t k = 0; k < n; ++k) {
            const int64_t row = ci * n + k;
            Tensor img = reshape(narrow(imgs, 0, row, 1), {3, R, R});
            const std::string id = d.caption_id(caps[ci]);
            data::write_png(out / ("sample_" + id + "_" + std::to_string(k) + ".png"), img);
            auto rgb = data::to_rgb8(img);
            for (int64_t y = 0; y < R; ++y)
                std::copy_n(rgb.begin() + 3 * y * R, 3 * R,
                            sheet.begin() + 3 * ((pad + ci * (R + pad) + y) * W + pad + k * (R + pad)));
            std::vector<double> z = train::eval_latent(cfg.seed, caps[ci], k, cfg.generator.z_dim).to_vector();
            std::vector<float> zf(z.begin(), z.end());
            zlog << id << "\t" << k << "\t" << hex(train::fnv1a(zf.data(), zf.size() * sizeof(float))) << "\t";
            for (size_t i = 0; i < z.size(); ++i)
                zlog << (i ? "," : "") << zf[i];
            zlog << "\n";
        }
    data::write_png_rgb8(out / "contact_sheet.png", sheet, W, H);
    std::cout << "wrote " << captions * n << " samples and a contact sheet to " << out.string() << "\n";
}

void cmd_evaluate(const Common& c, const std::string& ckpt, const std::string& split, const std::string& metrics_csv)
{
    RunConfig cfg = load(c);
    if (!metrics_csv.empty()) {
        cfg.eval.metrics.clear();
        std::stringstream ss(metrics_csv);
        std::string m;
        while (std::getline(ss, m, ','))
            cfg.eval.metrics.push_back(m);
        cfg.validate();
    }
    fs::path out = c.out.empty() ? cfg.paths.reports : fs::path(c.out);
    data::Manifest m = open_corpus(cfg);
    data::SplitData d(m, split, mel_of(cfg));
    const bool need_cls = std::any_of(cfg.eval.metrics.begin(), cfg.eval.metrics.end(),
                                      [](const std::string& s) { return s != "r50"; });
    Pretrained p = load_pretrained(cfg, m.n_classes(), need_cls);
    auto G = load_generator(cfg, ckpt);
    auto ctx = train::make_eval_context(d, train::embed_captions(*p.enc.speech, d), p.cls.get(), p.enc.match.get());
    auto r = train::evaluate(cfg, *G, ctx, checkpoint_step(ckpt));

    Json j = report_json(r);
    j["split"] = split;
    j["checkpoint"] = fs::path(ckpt).filename().string();
    j["checkpoint_checksum"] = hex(train::fnv1a_file(ckpt));
    j["extractor_checksum"] =
        p.cls ? hex(train::fnv1a_file(cfg.paths.checkpoints / train::kClassifierFile)) : std::string("-");
    j["encoders_checksum"] = hex(train::fnv1a_file(cfg.paths.checkpoints / train::kEncodersFile));
    j["config_hash"] = hex(cfg.hash());
    j["seed"] = cfg.seed;
    write_json(out / "eval_report.json", j);
    train::write_snapshot(cfg, out);
    std::cout << j.dump(2) << "\n";
}

} // namespace

int run(const std::vector<std::string>& args)
{
    CLI::App app{"Speech-conditioned image GAN: corpus synthesis, training and evaluation"};
    app.require_subcommand(1);
    Common c;
    std::string resume, ckpt, split = "test", metrics_csv;
    int64_t n = 1, captions = 8;

    auto* synth = app.add_subcommand("synth-data", "write the synthetic image/speech corpus");
    add_common(synth, c, "corpus directory (default paths.corpus)");
    auto* pre = app.add_subcommand("pretrain", "train the speech encoder, match head and classifier");
    add_common(pre, c, "checkpoint directory (default paths.checkpoints)");
    auto* tr = app.add_subcommand("train", "adversarial training");
    add_common(tr, c, "checkpoint directory (default paths.checkpoints)");
    tr->add_option("--resume", resume, "training checkpoint to continue from")->check(CLI::ExistingFile);
    auto* gen = app.add_subcommand("generate", "sample images for captions of a split");
    add_common(gen, c, "output directory (default <reports>/samples)");
    gen->add_option("--checkpoint", ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
    gen->add_option("--split", split, "manifest split");
    gen->add_option("--n", n, "samples per caption");
    gen->add_option("--captions", captions, "number of captions");
    auto* ev = app.add_subcommand("evaluate", "IS, FID, mAP and R@50 of a checkpoint");
    add_common(ev, c, "report directory (default paths.reports)");
    ev->add_option("--checkpoint", ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--split", split, "manifest split");
    ev->add_option("--metrics", metrics_csv, "comma-separated subset of is,fid,map,r50");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUser;
    }
    try {
        if (*synth)
            cmd_synth(c);
        else if (*pre)
            cmd_pretrain(c);
        else if (*tr)
            cmd_train(c, resume);
        else if (*gen)
            cmd_generate(c, ckpt, split, n, captions);
        else if (*ev)
            cmd_evaluate(c, ckpt, split, metrics_csv);
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUser;
    }
    return kExitOk;
}

int run(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args);
}

} // namespace s2i::cli
