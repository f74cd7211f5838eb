#include "s2i/train/config.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "s2i/core/error.hpp"

namespace s2i::train {

using Json = nlohmann::ordered_json;

namespace {

const char* kMetricNames[] = {"is", "fid", "map", "r50"};

Json to_doc(const RunConfig& c)
{
    Json j;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["paths"] = {{"corpus", c.paths.corpus.string()},
                  {"checkpoints", c.paths.checkpoints.string()},
                  {"reports", c.paths.reports.string()}};
    const auto& k = c.corpus;
    j["corpus"] = {{"n_shapes", k.n_shapes},         {"n_colors", k.n_colors},
                   {"per_class", k.per_class},       {"captions_per_image", k.captions_per_image},
                   {"image_size", k.image_size},     {"n_mels", k.n_mels},
                   {"word_frames", k.word_frames},   {"overlap", k.overlap},
                   {"noise", k.noise},               {"test_fraction", k.test_fraction},
                   {"seed", k.seed}};
    j["speech"] = {{"conv1", c.speech.conv1},
                   {"conv2", c.speech.conv2},
                   {"hidden", c.speech.hidden},
                   {"attn_dim", c.speech.attn_dim}};
    const auto& g = c.generator;
    j["generator"] = {{"z_dim", g.z_dim},
                      {"nf", g.nf},
                      {"widths", g.widths},
                      {"block_modules", g.block_modules},
                      {"fusion_mode", fusion::fusion_mode_name(g.fusion.mode)},
                      {"pam_ratio", g.fusion.pam_ratio},
                      {"wfm_ratio", g.fusion.wfm_ratio}};
    j["discriminator"] = {{"stem", c.discriminator.stem},
                          {"widths", c.discriminator.widths},
                          {"speech_proj", c.discriminator.speech_proj}};
    j["losses"] = {{"magp_lambda", c.losses.magp_lambda},
                   {"magp_p", c.losses.magp_p},
                   {"damsm_lambda", c.losses.damsm_lambda},
                   {"damsm_gamma", c.losses.damsm_gamma}};
    const auto& t = c.train;
    j["train"] = {{"lr_g", t.lr_g},   {"lr_d", t.lr_d},   {"beta1", t.beta1},
                  {"beta2", t.beta2}, {"batch", t.batch}, {"steps", t.steps},
                  {"checkpoint_every", t.checkpoint_every}, {"eval_every", t.eval_every}};
    const auto& p = c.pretrain;
    j["pretrain"] = {{"steps", p.steps},
                     {"batch", p.batch},
                     {"lr", p.lr},
                     {"classifier_steps", p.classifier_steps},
                     {"classifier_lr", p.classifier_lr}};
    j["eval"] = {{"samples_per_caption", c.eval.samples_per_caption},
                 {"max_captions", c.eval.max_captions},
                 {"metrics", c.eval.metrics},
                 {"recall_k", c.eval.recall_k}};
    return j;
}

template <class T>
void read(const Json& j, const std::string& path, T& out)
{
    const Json* cur = &j;
    std::string key;
    std::istringstream ss(path);
    while (std::getline(ss, key, '.'))
        cur = &cur->at(key);
    try {
        out = cur->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + path + "': " + e.what());
    }
}

RunConfig from_doc(const Json& j)
{
    RunConfig c;
    read(j, "profile", c.profile);
    read(j, "seed", c.seed);
    std::string s;
    read(j, "paths.corpus", s), c.paths.corpus = s;
    read(j, "paths.checkpoints", s), c.paths.checkpoints = s;
    read(j, "paths.reports", s), c.paths.reports = s;

    auto& k = c.corpus;
    read(j, "corpus.n_shapes", k.n_shapes);
    read(j, "corpus.n_colors", k.n_colors);
    read(j, "corpus.per_class", k.per_class);
    read(j, "corpus.captions_per_image", k.captions_per_image);
    read(j, "corpus.image_size", k.image_size);
    read(j, "corpus.n_mels", k.n_mels);
    read(j, "corpus.word_frames", k.word_frames);
    read(j, "corpus.overlap", k.overlap);
    read(j, "corpus.noise", k.noise);
    read(j, "corpus.test_fraction", k.test_fraction);
    read(j, "corpus.seed", k.seed);

    read(j, "speech.conv1", c.speech.conv1);
    read(j, "speech.conv2", c.speech.conv2);
    read(j, "speech.hidden", c.speech.hidden);
    read(j, "speech.attn_dim", c.speech.attn_dim);
    c.speech.n_mels = k.n_mels;

    auto& g = c.generator;
    read(j, "generator.z_dim", g.z_dim);
    read(j, "generator.nf", g.nf);
    read(j, "generator.widths", g.widths);
    read(j, "generator.block_modules", g.block_modules);
    read(j, "generator.fusion_mode", s), g.fusion.mode = fusion::parse_fusion_mode(s);
    read(j, "generator.pam_ratio", g.fusion.pam_ratio);
    read(j, "generator.wfm_ratio", g.fusion.wfm_ratio);
    g.speech_dim = c.speech.dim();

    auto& d = c.discriminator;
    read(j, "discriminator.stem", d.stem);
    read(j, "discriminator.widths", d.widths);
    read(j, "discriminator.speech_proj", d.speech_proj);
    d.speech_dim = c.speech.dim();
    d.resolution = g.widths.empty() ? 0 : g.out_res();

    read(j, "losses.magp_lambda", c.losses.magp_lambda);
    read(j, "losses.magp_p", c.losses.magp_p);
    read(j, "losses.damsm_lambda", c.losses.damsm_lambda);
    read(j, "losses.damsm_gamma", c.losses.damsm_gamma);

    auto& t = c.train;
    read(j, "train.lr_g", t.lr_g);
    read(j, "train.lr_d", t.lr_d);
    read(j, "train.beta1", t.beta1);
    read(j, "train.beta2", t.beta2);
    read(j, "train.batch", t.batch);
    read(j, "train.steps", t.steps);
    read(j, "train.checkpoint_every", t.checkpoint_every);
    read(j, "train.eval_every", t.eval_every);

    auto& p = c.pretrain;
    read(j, "pretrain.steps", p.steps);
    read(j, "pretrain.batch", p.batch);
    read(j, "pretrain.lr", p.lr);
    read(j, "pretrain.classifier_steps", p.classifier_steps);
    read(j, "pretrain.classifier_lr", p.classifier_lr);

    read(j, "eval.samples_per_caption", c.eval.samples_per_caption);
    read(j, "eval.max_captions", c.eval.max_captions);
    read(j, "eval.metrics", c.eval.metrics);
    read(j, "eval.recall_k", c.eval.recall_k);
    return c;
}

std::string type_name(const Json& v)
{
    if (v.is_number_integer())
        return "integer";
    if (v.is_number())
        return "number";
    return v.type_name();
}

// Layers `user` onto `base`; every key must already exist with a compatible type.
void merge_strict(Json& base, const Json& user, const std::string& prefix)
{
    if (!user.is_object())
        throw ConfigError("config " + (prefix.empty() ? std::string("document") : "key '" + prefix + "'") +
                          " must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key()))
            throw ConfigError("unknown config key '" + path + "'");
        Json& slot = base[it.key()];
        const Json& v = it.value();
        if (slot.is_object()) {
            merge_strict(slot, v, path);
            continue;
        }
        const bool ok = slot.is_number_integer() ? (v.is_number_integer())
                        : slot.is_number()       ? v.is_number()
                                                 : slot.type() == v.type();
        if (!ok)
            throw ConfigError("config key '" + path + "' expects " + type_name(slot) + ", got " + type_name(v));
        if (slot.is_number_unsigned() && v.is_number_integer() && v.get<int64_t>() < 0)
            throw ConfigError("config key '" + path + "' must be non-negative");
        slot = v;
    }
}

void require(bool ok, const std::string& msg)
{
    if (!ok)
        throw ConfigError(msg);
}

} // namespace

RunConfig profile_defaults(const std::string& profile)
{
    RunConfig c;
    c.profile = profile;
    if (profile == "desk") {
        c.speech = {.n_mels = 40, .conv1 = 32, .conv2 = 64, .hidden = 128, .attn_dim = 64};
        c.generator.nf = 16;
        c.generator.widths = {8, 8, 4, 2, 1};
        c.discriminator.stem = 16;
        c.discriminator.widths = {32, 64, 128, 256};
        c.corpus.image_size = 64;
        c.train.batch = 16;
    } else if (profile == "full") {
        c.corpus.image_size = 256;
        c.train.batch = 32;
    } else {
        throw ConfigError("unknown profile '" + profile + "' (expected desk or full)");
    }
    c.speech.n_mels = c.corpus.n_mels;
    c.generator.speech_dim = c.discriminator.speech_dim = c.speech.dim();
    c.discriminator.resolution = c.generator.out_res();
    return c;
}

void RunConfig::validate() const
{
    require(profile == "desk" || profile == "full", "profile must be desk or full");
    corpus.validate();
    losses.validate();
    require(speech.conv1 > 0 && speech.conv2 > 0 && speech.hidden > 0 && speech.attn_dim > 0,
            "speech widths must be positive");
    const auto& g = generator;
    require(!g.widths.empty() && g.widths.size() <= 8, "generator.widths must hold 1..8 blocks");
    for (int64_t w : g.widths)
        require(w > 0, "generator.widths entries must be positive");
    require(g.z_dim > 0 && g.nf > 0, "generator.z_dim and generator.nf must be positive");
    require(g.block_modules == 1 || g.block_modules == 2, "generator.block_modules must be 1 or 2");
    require(g.fusion.pam_ratio >= 1 && g.fusion.wfm_ratio >= 1, "fusion ratios must be >= 1");
    const auto& d = discriminator;
    require(d.stem > 0 && d.speech_proj > 0, "discriminator.stem and discriminator.speech_proj must be positive");
    require(!d.widths.empty() && (int64_t{4} << d.widths.size()) == resolution(),
            "discriminator.widths has " + std::to_string(d.widths.size()) + " stages but a " +
                std::to_string(resolution()) + " px generator needs " +
                std::to_string(g.widths.size() - 1) + " (one per halving down to 4x4)");
    for (int64_t w : d.widths)
        require(w > 0, "discriminator.widths entries must be positive");
    require(corpus.image_size == resolution(), "corpus.image_size " + std::to_string(corpus.image_size) +
                                                   " differs from the generator resolution " +
                                                   std::to_string(resolution()));
    require(train.lr_g > 0 && train.lr_d > 0, "learning rates must be positive");
    require(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1, "Adam betas must be in [0,1)");
    require(train.batch >= 2, "train.batch must be >= 2");
    require(train.steps >= 0 && train.checkpoint_every >= 0 && train.eval_every >= 0,
            "train step counts must be non-negative");
    require(pretrain.steps >= 0 && pretrain.classifier_steps >= 0, "pretrain step counts must be non-negative");
    require(pretrain.batch >= 2, "pretrain.batch must be >= 2");
    require(pretrain.lr > 0 && pretrain.classifier_lr > 0, "pretrain learning rates must be positive");
    require(eval.samples_per_caption >= 1 && eval.max_captions >= 0 && eval.recall_k >= 1,
            "eval counts out of range");
    for (const auto& m : eval.metrics)
        require(std::find(std::begin(kMetricNames), std::end(kMetricNames), m) != std::end(kMetricNames),
                "unknown metric '" + m + "' in eval.metrics (expected is, fid, map, r50)");
}

std::string RunConfig::to_json() const { return to_doc(*this).dump(2) + "\n"; }

uint64_t RunConfig::hash() const
{
    const std::string s = to_json();
    return fnv1a(s.data(), s.size());
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir)
{
    Json user;
    try {
        user = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (!user.is_object())
        throw ConfigError("config document must be an object");
    std::string profile = "desk";
    if (user.contains("profile")) {
        if (!user["profile"].is_string())
            throw ConfigError("config key 'profile' expects string");
        profile = user["profile"].get<std::string>();
    }
    Json doc = to_doc(profile_defaults(profile));
    merge_strict(doc, user, "");
    RunConfig c = from_doc(doc);
    for (fs::path* p : {&c.paths.corpus, &c.paths.checkpoints, &c.paths.reports})
        if (p->is_relative() && !base_dir.empty() && base_dir != ".")
            *p = (base_dir / *p).lexically_normal();
    c.validate();
    return c;
}

RunConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void write_snapshot(const RunConfig& cfg, const fs::path& dir)
{
    fs::create_directories(dir);
    std::ofstream out(dir / "resolved_config.json", std::ios::binary | std::ios::trunc);
    out << cfg.to_json();
    if (!out)
        throw Error("cannot write " + (dir / "resolved_config.json").string());
}

uint64_t fnv1a(const void* data, size_t size, uint64_t h)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read " + path.string());
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
    }
    return h;
}

} // namespace s2i::train
