#pragma once

#include <Eigen/Dense>
#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i::metrics {

struct Score {
    double mean = 0.0;
    double std = 0.0;
};

// exp(E_x KL(p(y|x) || p(y))) per split; mean and population std over splits.
Score inception_score(const Tensor& probs, int64_t splits);
// 10 splits from 1000 images up, otherwise 1.
int64_t default_is_splits(int64_t n);

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
};

// Sample mean and unbiased covariance (symmetrised) of rows [N,E].
GaussianStats gaussian_stats(const Tensor& feats);
// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double fid(const GaussianStats& a, const GaussianStats& b);

// Cosine similarities [Nq,Ng].
Eigen::MatrixXd cosine_matrix(const Tensor& queries, const Tensor& gallery);

// Mean average precision, relevance = equal labels. A query whose class has
// no gallery item scores 0 and still counts.
double retrieval_map(const Tensor& queries, const Tensor& gallery, const std::vector<int64_t>& query_labels,
                     const std::vector<int64_t>& gallery_labels);
// Mean of the speech->image and image->speech directions.
double bidirectional_map(const Tensor& speech, const Tensor& images, const std::vector<int64_t>& speech_labels,
                         const std::vector<int64_t>& image_labels);
// Average precision of one ranked relevance list.
double average_precision(const std::vector<bool>& ranked_relevance);

// Fraction of queries whose ground-truth gallery index ranks in the top k.
// k above the gallery size is clamped (with a warning on stderr).
double recall_at_k(const Tensor& queries, const Tensor& gallery, const std::vector<int64_t>& truth, int64_t k = 50);

} // namespace s2i::metrics
