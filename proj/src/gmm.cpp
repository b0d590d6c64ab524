#include "lungad/gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "lungad/error.hpp"

namespace lungad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112; // ln(2 pi)

Eigen::LLT<Matrix> factorize(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw RuntimeError("covariance is not positive definite");
    return llt;
}

// k-means++ seeding: first center uniform, then proportional to squared distance.
std::vector<Vector> kmeanspp(const DataMatrix& x, int k, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    std::vector<Vector> centers;
    centers.push_back(x.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)).transpose());
    Vector d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = (x.row(i).transpose() - centers[0]).squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                r -= d2[pick];
                if (r < 0.0) break;
            }
        } else {
            pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
        }
        centers.push_back(x.row(pick).transpose());
        for (Eigen::Index i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], (x.row(i).transpose() - centers.back()).squaredNorm());
    }
    return centers;
}

} // namespace

void EmConfig::validate() const {
    if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (!(rel_tolerance > 0.0)) throw ValidationError("rel_tolerance must be > 0");
    if (!(ridge > 0.0)) throw ValidationError("ridge must be > 0");
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

GmmModel::GmmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0 || means_.size() != k || covs_.size() != k) throw ValidationError("inconsistent GMM component count");
    if (std::abs(weights_.sum() - 1.0) > 1e-12) throw ValidationError("GMM weights must sum to 1");
    if ((weights_.array() < 0.0).any()) throw ValidationError("GMM weights must be non-negative");
    const Eigen::Index d = means_.front().size();
    log_norm_.resize(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
        if (means_[j].size() != d || covs_[j].rows() != d || covs_[j].cols() != d)
            throw ValidationError("GMM dimension mismatch");
        const auto llt = factorize(covs_[j]);
        chol_l_.push_back(llt.matrixL());
        const double logdet = 2.0 * chol_l_.back().diagonal().array().log().sum();
        log_norm_[static_cast<Eigen::Index>(j)] = std::log(weights_[static_cast<Eigen::Index>(j)]) -
                                                  0.5 * (static_cast<double>(d) * kLog2Pi + logdet);
    }
}

std::size_t GmmModel::parameter_count() const {
    const auto kk = static_cast<std::size_t>(k());
    const auto d = static_cast<std::size_t>(dim());
    return (kk - 1) + kk * d + kk * d * (d + 1) / 2;
}

void GmmModel::component_log_densities(const Eigen::Ref<const Vector>& z, Eigen::Ref<Vector> out) const {
    for (int j = 0; j < k(); ++j) {
        const Vector r = chol_l_[j].triangularView<Eigen::Lower>().solve(z - means_[j]);
        out[j] = log_norm_[j] - 0.5 * r.squaredNorm();
    }
}

double GmmModel::log_density(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != dim()) throw ValidationError("dimension mismatch");
    const Eigen::Map<const Vector> zv(z.data(), static_cast<Eigen::Index>(z.size()));
    Vector comp(k());
    component_log_densities(zv, comp);
    return log_sum_exp(comp);
}

GmmFitResult gmm_fit(const DataMatrix& x, int k, const EmConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (k < 1) throw ValidationError("k must be >= 1");
    if (n < k) throw ValidationError("n < k");
    if (d < 1) throw ValidationError("dimension must be >= 1");
    if (!x.allFinite()) throw ValidationError("non-finite input");

    std::mt19937_64 rng(cfg.seed);
    const Matrix ridge = cfg.ridge * Matrix::Identity(d, d);

    // Initial parameters: seeded means, shared data covariance, uniform weights.
    const Vector mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - mean.transpose();
    const Matrix data_cov = centered.transpose() * centered / static_cast<double>(n) + ridge;
    GmmModel model(Vector::Constant(k, 1.0 / k), kmeanspp(x, k, rng), std::vector<Matrix>(k, data_cov));

    GmmFitResult result;
    Matrix resp(n, k);
    Vector comp(k);
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.max_iters + 1; ++it) {
        // E-step
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            model.component_log_densities(x.row(i).transpose(), comp);
            const double lse = log_sum_exp(comp);
            ll += lse;
            resp.row(i) = (comp.array() - lse).exp().transpose();
        }
        ll /= static_cast<double>(n);
        if (!std::isfinite(ll)) throw RuntimeError("EM produced a non-finite log-likelihood");
        result.loglik_trace.push_back(ll);
        if (it > 0 && std::abs(ll - prev) <= cfg.rel_tolerance * std::abs(prev)) {
            result.converged = true;
            break;
        }
        if (it == cfg.max_iters) break;
        prev = ll;

        // M-step
        const Vector nk = resp.colwise().sum().transpose();
        Vector weights(k);
        std::vector<Vector> means(k);
        std::vector<Matrix> covs(k);
        for (int j = 0; j < k; ++j) {
            if (nk[j] < 1e-12) {
                // Empty component: keep its previous shape, give it no mass.
                weights[j] = 0.0;
                means[j] = model.means()[j];
                covs[j] = model.covariances()[j];
                continue;
            }
            weights[j] = nk[j] / static_cast<double>(n);
            means[j] = (x.transpose() * resp.col(j)) / nk[j];
            const Matrix c = x.rowwise() - means[j].transpose();
            covs[j] = (c.transpose() * resp.col(j).asDiagonal() * c) / nk[j] + ridge;
            covs[j] = 0.5 * (covs[j] + covs[j].transpose());
        }
        weights /= weights.sum();
        model = GmmModel(std::move(weights), std::move(means), std::move(covs));
        result.iterations = it + 1;
    }
    result.model = std::move(model);
    return result;
}

} // namespace lungad
