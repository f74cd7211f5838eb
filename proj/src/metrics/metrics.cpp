#include "s2i/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace s2i::metrics {

namespace {

Eigen::MatrixXd to_matrix(const Tensor& t, const char* what)
{
    if (t.dim() != 2)
        throw DimensionError(std::string(what) + " must be 2-D, got " + t.shape_str());
    const int64_t R = t.size(0), C = t.size(1);
    Eigen::MatrixXd m(R, C);
    for (int64_t i = 0; i < R; ++i)
        for (int64_t j = 0; j < C; ++j)
            m(i, j) = t.at(i * C + j);
    return m;
}

Eigen::MatrixXd normalize_rows(Eigen::MatrixXd m)
{
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (n > 0)
            m.row(i) /= n;
    }
    return m;
}

// Gallery indices sorted by descending similarity; ties keep index order.
std::vector<int64_t> ranking(const Eigen::MatrixXd& sim, Eigen::Index q)
{
    std::vector<int64_t> order(sim.cols());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) { return sim(q, a) > sim(q, b); });
    return order;
}

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(const Eigen::MatrixXd& m, const char* what)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "eigendecomposition of " << what << " failed (" << m.rows() << "x" << m.cols()
            << ", max |entry| " << m.cwiseAbs().maxCoeff() << ", finite " << m.allFinite() << ")";
        throw NumericError(msg.str());
    }
    return es;
}

} // namespace

int64_t default_is_splits(int64_t n) { return n >= 1000 ? 10 : 1; }

Score inception_score(const Tensor& probs, int64_t splits)
{
    Eigen::MatrixXd p = to_matrix(probs, "class probabilities");
    const int64_t N = p.rows(), K = p.cols();
    if (splits < 1 || N < splits)
        throw ContractError("inception score needs 1 <= splits <= N, got splits " + std::to_string(splits) + " for " +
                            std::to_string(N) + " images");
    for (int64_t i = 0; i < N; ++i) {
        const double s = p.row(i).sum();
        if (std::abs(s - 1.0) > 1e-4 || p.row(i).minCoeff() < 0)
            throw ContractError("row " + std::to_string(i) + " is not a distribution (sums to " + std::to_string(s) + ")");
    }
    std::vector<double> scores;
    for (int64_t s = 0; s < splits; ++s) {
        const int64_t lo = s * N / splits, hi = (s + 1) * N / splits;
        Eigen::VectorXd marginal = p.middleRows(lo, hi - lo).colwise().mean().transpose();
        double kl = 0;
        for (int64_t i = lo; i < hi; ++i)
            for (int64_t k = 0; k < K; ++k)
                if (p(i, k) > 0)
                    kl += p(i, k) * (std::log(p(i, k)) - std::log(marginal(k)));
        scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
    }
    Score r;
    for (double v : scores)
        r.mean += v / splits;
    for (double v : scores)
        r.std += (v - r.mean) * (v - r.mean) / splits;
    r.std = std::sqrt(r.std);
    return r;
}

GaussianStats gaussian_stats(const Tensor& feats)
{
    Eigen::MatrixXd x = to_matrix(feats, "features");
    if (x.rows() < 2)
        throw DegenerateBatchError("covariance needs at least 2 samples, got " + std::to_string(x.rows()));
    GaussianStats g;
    g.mu = x.colwise().mean().transpose();
    Eigen::MatrixXd c = x.rowwise() - g.mu.transpose();
    g.sigma = c.transpose() * c / static_cast<double>(x.rows() - 1);
    g.sigma = 0.5 * (g.sigma + g.sigma.transpose());
    return g;
}

double fid(const GaussianStats& a, const GaussianStats& b)
{
    if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows())
        throw DimensionError("FID between " + std::to_string(a.mu.size()) + "-d and " + std::to_string(b.mu.size()) +
                             "-d statistics");
    auto ea = eig(a.sigma, "first covariance");
    Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sa = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
    Eigen::MatrixXd m = sa * b.sigma * sa;
    auto em = eig(0.5 * (m + m.transpose()), "covariance product");
    const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double tr = a.sigma.trace() + b.sigma.trace();
    const double d = (a.mu - b.mu).squaredNorm() + tr - 2.0 * tr_sqrt;
    // Cancellation noise around 0 is clamped to exactly 0.
    if (d <= 1e-10 * (1.0 + tr))
        return 0.0;
    return d;
}

Eigen::MatrixXd cosine_matrix(const Tensor& queries, const Tensor& gallery)
{
    Eigen::MatrixXd q = normalize_rows(to_matrix(queries, "queries"));
    Eigen::MatrixXd g = normalize_rows(to_matrix(gallery, "gallery"));
    if (q.cols() != g.cols())
        throw DimensionError("query dim " + std::to_string(q.cols()) + " vs gallery dim " + std::to_string(g.cols()));
    return q * g.transpose();
}

double average_precision(const std::vector<bool>& rel)
{
    double hits = 0, acc = 0;
    for (size_t i = 0; i < rel.size(); ++i)
        if (rel[i]) {
            hits += 1;
            acc += hits / static_cast<double>(i + 1);
        }
    return hits > 0 ? acc / hits : 0.0;
}

double retrieval_map(const Tensor& queries, const Tensor& gallery, const std::vector<int64_t>& query_labels,
                     const std::vector<int64_t>& gallery_labels)
{
    Eigen::MatrixXd sim = cosine_matrix(queries, gallery);
    if (static_cast<int64_t>(query_labels.size()) != sim.rows() ||
        static_cast<int64_t>(gallery_labels.size()) != sim.cols())
        throw DimensionError("label counts do not match embeddings");
    if (sim.rows() < 1 || sim.cols() < 1)
        throw ContractError("retrieval needs at least one query and one gallery item");
    double total = 0;
    for (Eigen::Index q = 0; q < sim.rows(); ++q) {
        auto order = ranking(sim, q);
        std::vector<bool> rel(order.size());
        for (size_t i = 0; i < order.size(); ++i)
            rel[i] = gallery_labels[order[i]] == query_labels[q];
        total += average_precision(rel);
    }
    return total / static_cast<double>(sim.rows());
}

double bidirectional_map(const Tensor& speech, const Tensor& images, const std::vector<int64_t>& speech_labels,
                         const std::vector<int64_t>& image_labels)
{
    return 0.5 * (retrieval_map(speech, images, speech_labels, image_labels) +
                  retrieval_map(images, speech, image_labels, speech_labels));
}

double recall_at_k(const Tensor& queries, const Tensor& gallery, const std::vector<int64_t>& truth, int64_t k)
{
    Eigen::MatrixXd sim = cosine_matrix(queries, gallery);
    if (static_cast<int64_t>(truth.size()) != sim.rows())
        throw DimensionError("one ground-truth index per query required");
    if (k < 1)
        throw ContractError("k must be positive");
    if (k > sim.cols()) {
        std::cerr << "warning: recall@" << k << " clamped to gallery size " << sim.cols() << "\n";
        k = sim.cols();
    }
    int64_t hits = 0;
    for (Eigen::Index q = 0; q < sim.rows(); ++q) {
        if (truth[q] < 0 || truth[q] >= sim.cols())
            throw ContractError("ground-truth index " + std::to_string(truth[q]) + " outside the gallery");
        auto order = ranking(sim, q);
        hits += std::find(order.begin(), order.begin() + k, truth[q]) != order.begin() + k;
    }
    return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

} // namespace s2i::metrics
