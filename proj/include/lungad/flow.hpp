#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lungad/error.hpp"
#include "lungad/gmm.hpp"

namespace lungad {

// out = w * in + b, samples in columns.
struct DenseLayer {
    Matrix w;
    Vector b;
};

// Two tanh hidden layers followed by a linear output layer.
struct Subnet {
    DenseLayer l1, l2, l3;
};

// Affine coupling: permute, split into (z1, z2) with |z1| = ceil(d/2), then
//   y1 = z1,  y2 = z2 * exp(c * tanh(s(z1) / c)) + t(z1).
struct CouplingBlock {
    std::vector<int> perm; // permuted[i] = input[perm[i]]
    Subnet s;
    Subnet t;
};

struct FlowArch {
    int n_blocks = 8;
    int hidden = 256;
    double clamp = 2.0;
};

enum class FlowInit {
    identity,  // output layers zeroed: the flow starts as the identity map
    random,    // every layer random; used for property checks
};

class NfModel {
public:
    NfModel() = default;
    // Blocks with seeded random permutations and weights.
    static NfModel create(int d, const FlowArch& arch, uint64_t seed, FlowInit init = FlowInit::identity);

    int dim() const { return d_; }
    int split() const { return (d_ + 1) / 2; }
    double clamp() const { return clamp_; }
    void set_clamp(double c) { clamp_ = c; }
    int hidden() const { return blocks_.empty() ? 0 : static_cast<int>(blocks_.front().s.l1.w.rows()); }

    std::vector<CouplingBlock>& blocks() { return blocks_; }
    const std::vector<CouplingBlock>& blocks() const { return blocks_; }

    // Fixed elementwise standardisation applied before the first block:
    //   x = (z - shift) / scale, contributing -sum(log scale) to the log-determinant.
    const Vector& shift() const { return shift_; }
    const Vector& scale() const { return scale_; }
    void set_standardization(Vector shift, Vector scale);

    std::pair<Vector, double> forward(std::span<const double> z) const;
    Vector inverse(std::span<const double> u) const;
    double log_density(std::span<const double> z) const;

    // Columns are samples. Returns (u, per-sample logdet).
    std::pair<Matrix, Vector> forward_batch(const Matrix& z) const;
    Vector log_density_batch(const Matrix& z) const;

    // Trainable parameters in a fixed order (per block: s then t, each l1..l3, w then b).
    std::size_t parameter_count() const;
    Vector parameters() const;
    void set_parameters(const Vector& theta);

    // Mean negative log-density over the columns of `batch` and its gradient with
    // respect to parameters(), by reverse-mode differentiation.
    double loss_and_gradient(const Matrix& batch, Vector& grad) const;

    // Validates bijective permutations, finite weights, consistent shapes.
    void validate() const;

private:
    int d_ = 0;
    double clamp_ = 2.0;
    Vector shift_;
    Vector scale_;
    std::vector<CouplingBlock> blocks_;

    friend NfModel make_flow(int d, double clamp, std::vector<CouplingBlock> blocks);
};

// Assembles a flow from explicit blocks (identity standardisation).
NfModel make_flow(int d, double clamp, std::vector<CouplingBlock> blocks);

struct FlowFitConfig {
    FlowArch arch{};
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 50;
    uint64_t seed = 0;
    bool standardize = true;

    void validate() const;
};

struct FlowFitResult {
    NfModel model;
    std::vector<double> loss_trace; // mean training NLL per epoch
    double final_mean_nll = 0.0;    // over all training rows, after the last epoch
};

class FlowDivergenceError : public RuntimeError {
public:
    FlowDivergenceError(const std::string& what, NfModel last_finite, std::vector<double> trace)
        : RuntimeError(what), last_finite_(std::move(last_finite)), trace_(std::move(trace)) {}
    const NfModel& last_finite_model() const { return last_finite_; }
    const std::vector<double>& loss_trace() const { return trace_; }

private:
    NfModel last_finite_;
    std::vector<double> trace_;
};

// Adam on mini-batches of the mean negative log-density.
FlowFitResult nf_fit(const DataMatrix& data, const FlowFitConfig& cfg);

} // namespace lungad
