#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace lungad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Row-major n x d data matrix: one sample per row.
using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EmConfig {
    int max_iters = 200;
    double rel_tolerance = 1e-6;
    double ridge = 1e-6;
    uint64_t seed = 0;

    void validate() const;
};

// Full-covariance Gaussian mixture. Cholesky factors are cached at construction.
class GmmModel {
public:
    GmmModel() = default;
    GmmModel(Vector weights, std::vector<Vector> means, std::vector<Matrix> covariances);

    int k() const { return static_cast<int>(weights_.size()); }
    int dim() const { return means_.empty() ? 0 : static_cast<int>(means_.front().size()); }
    const Vector& weights() const { return weights_; }
    const std::vector<Vector>& means() const { return means_; }
    const std::vector<Matrix>& covariances() const { return covs_; }
    std::size_t parameter_count() const;

    double log_density(std::span<const double> z) const;
    // Per-component log(pi_j) + log N(z; mu_j, Sigma_j).
    void component_log_densities(const Eigen::Ref<const Vector>& z, Eigen::Ref<Vector> out) const;

private:
    Vector weights_;
    std::vector<Vector> means_;
    std::vector<Matrix> covs_;
    std::vector<Matrix> chol_l_;
    Vector log_norm_; // log(pi_j) - 0.5 (d log 2pi + log|Sigma_j|)
};

struct GmmFitResult {
    GmmModel model;
    // Mean training log-likelihood of the parameters entering each E-step.
    std::vector<double> loglik_trace;
    int iterations = 0;
    bool converged = false;
};

// EM from k-means++ seeded means. Throws ValidationError when n < k or data is non-finite.
GmmFitResult gmm_fit(const DataMatrix& data, int k, const EmConfig& cfg);

// log sum_j exp(v_j), stable for large magnitudes.
double log_sum_exp(const Eigen::Ref<const Vector>& v);

} // namespace lungad
