#include "lungad/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lungad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

DenseLayer make_layer(int out, int in, std::mt19937_64& rng, double stddev) {
    DenseLayer l{Matrix::Zero(out, in), Vector::Zero(out)};
    if (stddev > 0.0) {
        std::normal_distribution<double> nd(0.0, stddev);
        for (Eigen::Index j = 0; j < l.w.cols(); ++j)
            for (Eigen::Index i = 0; i < l.w.rows(); ++i) l.w(i, j) = nd(rng);
    }
    return l;
}

Subnet make_subnet(int in, int hidden, int out, std::mt19937_64& rng, FlowInit init) {
    Subnet s;
    s.l1 = make_layer(hidden, in, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    s.l2 = make_layer(hidden, hidden, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    s.l3 = make_layer(out, hidden, rng, init == FlowInit::random ? 0.5 / std::sqrt(static_cast<double>(hidden)) : 0.0);
    if (init == FlowInit::random) {
        std::normal_distribution<double> nd(0.0, 0.1);
        for (auto* b : {&s.l1.b, &s.l2.b, &s.l3.b})
            for (Eigen::Index i = 0; i < b->size(); ++i) (*b)[i] = nd(rng);
    }
    return s;
}

// Activations kept for the backward pass.
struct SubnetTrace {
    Matrix h1, h2;
};

Matrix subnet_forward(const Subnet& net, const Matrix& in, SubnetTrace* trace) {
    Matrix h1 = ((net.l1.w * in).colwise() + net.l1.b).array().tanh().matrix();
    Matrix h2 = ((net.l2.w * h1).colwise() + net.l2.b).array().tanh().matrix();
    Matrix out = (net.l3.w * h2).colwise() + net.l3.b;
    if (trace) {
        trace->h1 = std::move(h1);
        trace->h2 = std::move(h2);
    }
    return out;
}

// Accumulates parameter gradients into `g` and returns d loss / d input.
Matrix subnet_backward(const Subnet& net, const Matrix& in, const SubnetTrace& tr, const Matrix& gout, Subnet& g) {
    g.l3.w.noalias() += gout * tr.h2.transpose();
    g.l3.b += gout.rowwise().sum();
    const Matrix ga2 = ((net.l3.w.transpose() * gout).array() * (1.0 - tr.h2.array().square())).matrix();
    g.l2.w.noalias() += ga2 * tr.h1.transpose();
    g.l2.b += ga2.rowwise().sum();
    const Matrix ga1 = ((net.l2.w.transpose() * ga2).array() * (1.0 - tr.h1.array().square())).matrix();
    g.l1.w.noalias() += ga1 * in.transpose();
    g.l1.b += ga1.rowwise().sum();
    return net.l1.w.transpose() * ga1;
}

template <typename Block, typename F>
void visit_block(Block& b, F&& f) {
    for (auto* net : {&b.s, &b.t})
        for (auto* layer : {&net->l1, &net->l2, &net->l3}) {
            f(layer->w.data(), layer->w.size());
            f(layer->b.data(), layer->b.size());
        }
}

Subnet zero_like(const Subnet& s) {
    Subnet z;
    for (auto [dst, src] : {std::pair{&z.l1, &s.l1}, std::pair{&z.l2, &s.l2}, std::pair{&z.l3, &s.l3}}) {
        dst->w = Matrix::Zero(src->w.rows(), src->w.cols());
        dst->b = Vector::Zero(src->b.size());
    }
    return z;
}

Matrix permute_rows(const Matrix& x, const std::vector<int>& perm) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);
    return out;
}

Matrix unpermute_rows(const Matrix& x, const std::vector<int>& perm) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) out.row(perm[i]) = x.row(static_cast<Eigen::Index>(i));
    return out;
}

Matrix to_column(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

NfModel make_flow(int d, double clamp, std::vector<CouplingBlock> blocks) {
    NfModel m;
    m.d_ = d;
    m.clamp_ = clamp;
    m.shift_ = Vector::Zero(d);
    m.scale_ = Vector::Ones(d);
    m.blocks_ = std::move(blocks);
    m.validate();
    return m;
}

NfModel NfModel::create(int d, const FlowArch& arch, uint64_t seed, FlowInit init) {
    if (d < 2) throw ValidationError("flow dimension must be >= 2");
    if (arch.n_blocks < 1 || arch.hidden < 1 || !(arch.clamp > 0.0)) throw ValidationError("invalid flow architecture");
    std::mt19937_64 rng(seed);
    const int d1 = (d + 1) / 2;
    const int d2 = d / 2;
    std::vector<CouplingBlock> blocks;
    for (int b = 0; b < arch.n_blocks; ++b) {
        CouplingBlock blk;
        blk.perm.resize(d);
        std::iota(blk.perm.begin(), blk.perm.end(), 0);
        std::shuffle(blk.perm.begin(), blk.perm.end(), rng);
        blk.s = make_subnet(d1, arch.hidden, d2, rng, init);
        blk.t = make_subnet(d1, arch.hidden, d2, rng, init);
        blocks.push_back(std::move(blk));
    }
    return make_flow(d, arch.clamp, std::move(blocks));
}

void NfModel::set_standardization(Vector shift, Vector scale) {
    if (shift.size() != d_ || scale.size() != d_) throw ValidationError("standardisation dimension mismatch");
    if (!shift.allFinite() || !scale.allFinite() || (scale.array() <= 0.0).any())
        throw ValidationError("standardisation scale must be positive and finite");
    shift_ = std::move(shift);
    scale_ = std::move(scale);
}

void NfModel::validate() const {
    if (d_ < 2) throw ValidationError("flow dimension must be >= 2");
    if (!(clamp_ > 0.0)) throw ValidationError("clamp must be > 0");
    const int d1 = split();
    const int d2 = d_ - d1;
    for (const auto& b : blocks_) {
        if (static_cast<int>(b.perm.size()) != d_) throw ValidationError("permutation length mismatch");
        std::vector<int> sorted = b.perm;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < d_; ++i)
            if (sorted[i] != i) throw ValidationError("permutation is not a bijection");
        for (const Subnet* net : {&b.s, &b.t}) {
            const auto h = net->l1.w.rows();
            if (net->l1.w.cols() != d1 || net->l1.b.size() != h || net->l2.w.rows() != h || net->l2.w.cols() != h ||
                net->l2.b.size() != h || net->l3.w.rows() != d2 || net->l3.w.cols() != h || net->l3.b.size() != d2)
                throw ValidationError("subnet shape mismatch");
            for (const DenseLayer* l : {&net->l1, &net->l2, &net->l3})
                if (!l->w.allFinite() || !l->b.allFinite()) throw ValidationError("non-finite subnet weight");
        }
    }
}

std::pair<Matrix, Vector> NfModel::forward_batch(const Matrix& z) const {
    if (z.rows() != d_) throw ValidationError("dimension mismatch");
    const int d1 = split();
    const int d2 = d_ - d1;
    Matrix x = (z.colwise() - shift_).array().colwise() / scale_.array();
    Vector logdet = Vector::Constant(z.cols(), -scale_.array().log().sum());
    for (const auto& b : blocks_) {
        Matrix xp = permute_rows(x, b.perm);
        const Matrix z1 = xp.topRows(d1);
        const Matrix sraw = subnet_forward(b.s, z1, nullptr);
        const Matrix shat = clamp_ * (sraw.array() / clamp_).tanh();
        const Matrix t = subnet_forward(b.t, z1, nullptr);
        xp.bottomRows(d2) = (xp.bottomRows(d2).array() * shat.array().exp() + t.array()).matrix();
        logdet += shat.colwise().sum().transpose();
        x = std::move(xp);
    }
    return {std::move(x), std::move(logdet)};
}

std::pair<Vector, double> NfModel::forward(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != d_) throw ValidationError("dimension mismatch");
    auto [u, ld] = forward_batch(to_column(z));
    return {u.col(0), ld[0]};
}

Vector NfModel::inverse(std::span<const double> u) const {
    if (static_cast<int>(u.size()) != d_) throw ValidationError("dimension mismatch");
    const int d1 = split();
    const int d2 = d_ - d1;
    Matrix y = to_column(u);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
        const Matrix z1 = y.topRows(d1);
        const Matrix sraw = subnet_forward(it->s, z1, nullptr);
        const Matrix shat = clamp_ * (sraw.array() / clamp_).tanh();
        const Matrix t = subnet_forward(it->t, z1, nullptr);
        y.bottomRows(d2) = ((y.bottomRows(d2) - t).array() * (-shat.array()).exp()).matrix();
        y = unpermute_rows(y, it->perm);
    }
    return (y.col(0).array() * scale_.array() + shift_.array()).matrix();
}

Vector NfModel::log_density_batch(const Matrix& z) const {
    const auto [u, logdet] = forward_batch(z);
    return (-0.5 * u.colwise().squaredNorm().transpose().array() - 0.5 * d_ * kLog2Pi + logdet.array()).matrix();
}

double NfModel::log_density(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != d_) throw ValidationError("dimension mismatch");
    return log_density_batch(to_column(z))[0];
}

std::size_t NfModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) visit_block(b, [&](const double*, Eigen::Index sz) { n += static_cast<std::size_t>(sz); });
    return n;
}

Vector NfModel::parameters() const {
    Vector theta(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index pos = 0;
    for (const auto& b : blocks_)
        visit_block(b, [&](const double* p, Eigen::Index sz) {
            theta.segment(pos, sz) = Eigen::Map<const Vector>(p, sz);
            pos += sz;
        });
    return theta;
}

void NfModel::set_parameters(const Vector& theta) {
    if (theta.size() != static_cast<Eigen::Index>(parameter_count())) throw ValidationError("parameter count mismatch");
    Eigen::Index pos = 0;
    for (auto& b : blocks_)
        visit_block(b, [&](double* p, Eigen::Index sz) {
            Eigen::Map<Vector>(p, sz) = theta.segment(pos, sz);
            pos += sz;
        });
}

double NfModel::loss_and_gradient(const Matrix& batch, Vector& grad) const {
    if (batch.rows() != d_) throw ValidationError("dimension mismatch");
    const int d1 = split();
    const int d2 = d_ - d1;
    const auto nb = static_cast<double>(batch.cols());

    struct BlockTrace {
        Matrix z1, z2, th, shat;
        SubnetTrace s, t;
    };
    std::vector<BlockTrace> traces(blocks_.size());

    Matrix x = (batch.colwise() - shift_).array().colwise() / scale_.array();
    Vector logdet = Vector::Constant(batch.cols(), -scale_.array().log().sum());
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        const auto& b = blocks_[k];
        auto& tr = traces[k];
        Matrix xp = permute_rows(x, b.perm);
        tr.z1 = xp.topRows(d1);
        tr.z2 = xp.bottomRows(d2);
        const Matrix sraw = subnet_forward(b.s, tr.z1, &tr.s);
        tr.th = (sraw.array() / clamp_).tanh();
        tr.shat = clamp_ * tr.th;
        const Matrix t = subnet_forward(b.t, tr.z1, &tr.t);
        xp.bottomRows(d2) = (tr.z2.array() * tr.shat.array().exp() + t.array()).matrix();
        logdet += tr.shat.colwise().sum().transpose();
        x = std::move(xp);
    }
    const double loss =
        (0.5 * x.colwise().squaredNorm().transpose().array() + 0.5 * d_ * kLog2Pi - logdet.array()).mean();

    // Backward: loss = mean(0.5 |u|^2 - logdet) + const.
    std::vector<CouplingBlock> g(blocks_.size());
    Matrix gx = x / nb;
    const double g_logdet = -1.0 / nb;
    for (std::size_t kk = blocks_.size(); kk-- > 0;) {
        const auto& b = blocks_[kk];
        const auto& tr = traces[kk];
        g[kk].s = zero_like(b.s);
        g[kk].t = zero_like(b.t);
        const Matrix gy1 = gx.topRows(d1);
        const Matrix gy2 = gx.bottomRows(d2);
        const Matrix es = tr.shat.array().exp();
        const Matrix gz2 = (gy2.array() * es.array()).matrix();
        const Matrix gshat = (gy2.array() * tr.z2.array() * es.array() + g_logdet).matrix();
        const Matrix gsraw = (gshat.array() * (1.0 - tr.th.array().square())).matrix();
        Matrix gz1 = gy1;
        gz1 += subnet_backward(b.s, tr.z1, tr.s, gsraw, g[kk].s);
        gz1 += subnet_backward(b.t, tr.z1, tr.t, gy2, g[kk].t);
        Matrix gxp(d_, batch.cols());
        gxp.topRows(d1) = gz1;
        gxp.bottomRows(d2) = gz2;
        gx = unpermute_rows(gxp, b.perm);
    }

    grad.resize(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index pos = 0;
    for (const auto& gb : g)
        visit_block(gb, [&](const double* p, Eigen::Index sz) {
            grad.segment(pos, sz) = Eigen::Map<const Vector>(p, sz);
            pos += sz;
        });
    return loss;
}

void FlowFitConfig::validate() const {
    if (arch.n_blocks < 1 || arch.hidden < 1) throw ValidationError("n_blocks and hidden must be >= 1");
    if (!(arch.clamp > 0.0)) throw ValidationError("clamp must be > 0");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
}

FlowFitResult nf_fit(const DataMatrix& data, const FlowFitConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = data.rows();
    const auto d = static_cast<int>(data.cols());
    if (d < 2) throw ValidationError("flow dimension must be >= 2");
    if (n < cfg.batch_size) throw ValidationError("n < batch_size");
    if (!data.allFinite()) throw ValidationError("non-finite input");

    const Matrix cols = data.transpose(); // d x n
    NfModel model = NfModel::create(d, cfg.arch, cfg.seed, FlowInit::identity);
    if (cfg.standardize) {
        const Vector mean = cols.rowwise().mean();
        const Vector sd = ((cols.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
        model.set_standardization(mean, sd.unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; }));
    }

    // Adam
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    Vector theta = model.parameters();
    Vector m1 = Vector::Zero(theta.size());
    Vector m2 = Vector::Zero(theta.size());
    Vector grad;
    long step = 0;

    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    FlowFitResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
            Matrix batch(d, bs);
            for (Eigen::Index j = 0; j < bs; ++j) batch.col(j) = cols.col(order[static_cast<std::size_t>(start + j)]);
            const double loss = model.loss_and_gradient(batch, grad);
            if (!std::isfinite(loss) || !grad.allFinite())
                throw FlowDivergenceError("flow training diverged (non-finite loss)", model, result.loss_trace);
            ++step;
            m1 = beta1 * m1 + (1.0 - beta1) * grad;
            m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
            model.set_parameters(theta);
            epoch_loss += loss * static_cast<double>(bs);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
    }
    const double final_nll = -model.log_density_batch(cols).mean();
    if (!std::isfinite(final_nll))
        throw FlowDivergenceError("flow training diverged (non-finite loss)", model, result.loss_trace);
    result.final_mean_nll = final_nll;
    result.model = std::move(model);
    return result;
}

} // namespace lungad
