#include "s2i/losses/losses.hpp"

#include <numeric>

#include "s2i/core/autograd.hpp"

namespace s2i::losses {

void LossWeights::validate() const
{
    if (magp_lambda < 0 || damsm_lambda < 0 || damsm_gamma < 0)
        throw ConfigError("loss weights must be non-negative");
    if (magp_p < 1)
        throw ConfigError("MA-GP exponent must be >= 1, got " + std::to_string(magp_p));
}

namespace {

void check_scores(const Tensor& t, const char* what)
{
    if (t.dim() != 1)
        throw DimensionError(std::string(what) + " scores must be [N], got " + t.shape_str());
}

} // namespace

Tensor hinge_d_loss(const Tensor& d_real, const Tensor& d_fake, const Tensor& d_mismatch)
{
    check_scores(d_real, "real");
    check_scores(d_fake, "fake");
    check_scores(d_mismatch, "mismatch");
    Tensor real = mean(relu(1.0 - d_real));
    Tensor fake = mean(relu(1.0 + d_fake));
    Tensor mis = mean(relu(1.0 + d_mismatch));
    return real + 0.5 * fake + 0.5 * mis;
}

Tensor hinge_g_loss(const Tensor& d_fake)
{
    check_scores(d_fake, "fake");
    return -mean(d_fake);
}

MagpResult magp_loss(const Tensor& x, const Tensor& s, const Critic& critic, const LossWeights& w)
{
    w.validate();
    Tensor xi = x.detach().requires_grad_(true);
    Tensor si = s.detach().requires_grad_(true);
    GradModeGuard on(true);
    Tensor scores = critic(xi, si);
    std::vector<Tensor> g = grad({sum(scores)}, {xi, si}, true);
    Tensor nx = row_norm(flatten_rows(g[0]));
    Tensor ns = row_norm(flatten_rows(g[1]));
    Tensor loss = w.magp_lambda * mean(pow_scalar(nx + ns, w.magp_p));
    return {loss, scores};
}

Tensor damsm_global_loss(const Tensor& img_emb, const Tensor& sp_emb, double gamma)
{
    if (img_emb.dim() != 2 || img_emb.shape() != sp_emb.shape())
        throw DimensionError("matching loss expects equal [N,E] embeddings, got " + img_emb.shape_str() + " and " +
                             sp_emb.shape_str());
    const int64_t N = img_emb.size(0);
    if (N < 2)
        throw DegenerateBatchError("matching loss needs at least 2 pairs, got " + std::to_string(N));
    Tensor sim = gamma * matmul(l2_normalize_rows(img_emb), l2_normalize_rows(sp_emb), false, true);
    std::vector<int64_t> diag(N);
    std::iota(diag.begin(), diag.end(), 0);
    return nll_loss(log_softmax(sim, 1), diag) + nll_loss(log_softmax(transpose(sim), 1), diag);
}

std::vector<int64_t> mismatch_shift(int64_t n)
{
    if (n < 2)
        throw DegenerateBatchError("mismatched pairs need a batch of at least 2");
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i)
        idx[i] = (i + 1) % n;
    return idx;
}

} // namespace s2i::losses
