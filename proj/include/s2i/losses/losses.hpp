#pragma once

#include <functional>

#include "s2i/core/ops.hpp"

namespace s2i::losses {

struct LossWeights {
    double magp_lambda = 2.0;
    double magp_p = 6.0;
    double damsm_lambda = 5.0;
    double damsm_gamma = 10.0;

    void validate() const;
};

// mean(max(0, 1 - real)) + 0.5 mean(max(0, 1 + fake)) + 0.5 mean(max(0, 1 + mismatch))
Tensor hinge_d_loss(const Tensor& d_real, const Tensor& d_fake, const Tensor& d_mismatch);
// -mean(fake)
Tensor hinge_g_loss(const Tensor& d_fake);

// Scores as a function of (images, speech); must be differentiable twice.
using Critic = std::function<Tensor(const Tensor& x, const Tensor& s)>;

struct MagpResult {
    Tensor loss;   // lambda * mean((|grad_x D| + |grad_s D|)^p)
    Tensor scores; // D(x, s), still on the tape for reuse as the real-pair scores
};

// Penalty at real images x with their matching speech s. The returned loss
// differentiates into the critic's parameters.
MagpResult magp_loss(const Tensor& x, const Tensor& s, const Critic& critic, const LossWeights& w);

// Cosine similarities scaled by gamma; cross-entropy of row and column
// softmaxes against the diagonal.
Tensor damsm_global_loss(const Tensor& img_emb, const Tensor& sp_emb, double gamma);

// Speech row i+1 mod N paired with image i.
std::vector<int64_t> mismatch_shift(int64_t n);

} // namespace s2i::losses
