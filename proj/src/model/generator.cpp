#include "s2i/model/generator.hpp"

namespace s2i::model {

DualResidualBlock::DualResidualBlock(int64_t in, int64_t out, const GeneratorConfig& cfg, Rng& rng)
{
    if (cfg.block_modules != 1 && cfg.block_modules != 2)
        throw ConfigError("block_modules must be 1 or 2, got " + std::to_string(cfg.block_modules));
    for (int64_t u = 0; u < cfg.block_modules; ++u) {
        const int64_t cin = u == 0 ? in : out;
        fuse.push_back(register_module("fuse" + std::to_string(u),
                                       std::make_shared<fusion::VisualSpeechFusion>(cin, cfg.speech_dim, cfg.fusion, rng)));
        conv.push_back(register_module("conv" + std::to_string(u), std::make_shared<nn::Conv2d>(cin, out, 3, 1, 1, rng)));
    }
    if (in != out)
        skip = register_module("skip", std::make_shared<nn::Conv2d>(in, out, 1, 1, 0, rng));
}

Tensor DualResidualBlock::forward(const Tensor& h, const Tensor& s)
{
    Tensor x = h;
    for (size_t u = 0; u < fuse.size(); ++u) {
        Tensor branch = conv[u]->forward(relu(fuse[u]->forward(x, s)));
        Tensor shortcut = (u == 0 && skip) ? skip->forward(x) : x;
        x = shortcut + branch;
    }
    return x;
}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg)
{
    if (cfg.widths.empty())
        throw ConfigError("generator needs at least one block");
    const int64_t c0 = cfg.widths[0] * cfg.nf;
    fc = register_module("fc", std::make_shared<nn::Linear>(cfg.z_dim, c0 * 16, rng));
    int64_t cin = c0;
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
        const int64_t cout = cfg.widths[i] * cfg.nf;
        blocks.push_back(register_module("block" + std::to_string(i), std::make_shared<DualResidualBlock>(cin, cout, cfg, rng)));
        cin = cout;
    }
    to_rgb = register_module("to_rgb", std::make_shared<nn::Conv2d>(cin, 3, 3, 1, 1, rng));
}

Tensor Generator::project(const Tensor& z) const
{
    if (z.dim() != 2 || z.size(1) != cfg_.z_dim)
        throw DimensionError("generator expects z [N," + std::to_string(cfg_.z_dim) + "], got " + z.shape_str());
    return reshape(fc->forward(z), {z.size(0), cfg_.widths[0] * cfg_.nf, 4, 4});
}

std::vector<Tensor> Generator::trace(const Tensor& z, const Tensor& s)
{
    if (s.dim() != 2 || s.size(0) != z.size(0) || s.size(1) != cfg_.speech_dim)
        throw DimensionError("generator expects s [" + std::to_string(z.size(0)) + "," +
                             std::to_string(cfg_.speech_dim) + "], got " + s.shape_str());
    std::vector<Tensor> outs;
    Tensor h = project(z);
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i > 0)
            h = upsample_nearest(h, 2);
        h = blocks[i]->forward(h, s);
        outs.push_back(h);
    }
    return outs;
}

Tensor Generator::forward(const Tensor& z, const Tensor& s)
{
    return tanh(to_rgb->forward(trace(z, s).back()));
}

} // namespace s2i::model
