#include "sabma/posterior.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

namespace sabma {

void GaussianPosterior::validate() const {
    const int p = p1();
    if (log_sigma.size() != p) fail_config("posterior: mu/log_sigma size mismatch");
    if (lowrank.rows() != p && K() > 0) fail_config("posterior: lowrank row count mismatch");
    if (partition.p1() != p) fail_config("posterior: partition does not match mu size");
    if (frozen_values.size() != partition.p2()) fail_config("posterior: frozen_values size mismatch");
    if (prior_mu.size() != p || prior_sigma.size() != p)
        fail_config("posterior: prior size mismatch");
    for (int i = 0; i < p; ++i)
        if (std::isnan(mu(i)) || std::isnan(log_sigma(i)))
            fail_config("posterior: NaN in parameters");
}

NoisePair draw_noise(const GaussianPosterior& post, std::uint64_t seed) {
    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    NoisePair z;
    z.z1.resize(post.p1());
    for (int i = 0; i < post.p1(); ++i) z.z1(i) = gauss(eng);
    z.z2.resize(post.K());
    for (int i = 0; i < post.K(); ++i) z.z2(i) = gauss(eng);
    return z;
}

Vector sample_trainable(const GaussianPosterior& post, const NoisePair& z) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Vector noise = post.sigma().cwiseProduct(z.z1);
    if (post.K() > 0) noise += post.lowrank * z.z2;
    return post.mu + inv_sqrt2 * noise;
}

ParamVector sample(const GaussianPosterior& post, std::uint64_t seed) {
    return assemble(post, sample_trainable(post, draw_noise(post, seed)));
}

ParamVector assemble(const GaussianPosterior& post, const Vector& trainable_values) {
    if (trainable_values.size() != post.p1())
        fail_config("posterior assemble: trainable vector has wrong length");
    ParamVector out;
    out.registry = post.registry;
    out.values.assign(static_cast<size_t>(post.partition.p1() + post.partition.p2()), 0.0);
    for (int i = 0; i < post.partition.p1(); ++i)
        out.values[static_cast<size_t>(post.partition.trainable[static_cast<size_t>(i)])] =
            trainable_values(i);
    for (int i = 0; i < post.partition.p2(); ++i)
        out.values[static_cast<size_t>(post.partition.frozen[static_cast<size_t>(i)])] =
            post.frozen_values(i);
    return out;
}

namespace {

// Factored pieces of Sigma^-1 = D^-1 - V C^-1 V^T with D = diag(sigma^2/2),
// U = L/sqrt(2), V = D^-1 U, C = I + U^T V. Everything downstream touches only
// K x K solves.
struct Woodbury {
    Vector dinv;        // 1/d_i
    double logdet_d;    // sum log d_i
    Matrix V;           // p1 x K
    Eigen::LLT<Matrix> cllt;
    double logdet_c = 0.0;
    int K = 0;

    Vector solve(const Vector& x) const {
        Vector out = dinv.cwiseProduct(x);
        if (K > 0) out -= V * cllt.solve(V.transpose() * x);
        return out;
    }
};

Woodbury factor(const GaussianPosterior& post) {
    const int p = post.p1();
    Woodbury w;
    w.K = post.K();
    Vector sigma = post.sigma();
    w.dinv.resize(p);
    w.logdet_d = 0.0;
    for (int i = 0; i < p; ++i) {
        const double d = sigma(i) * sigma(i) / 2.0;
        if (!(d > 0.0) || !std::isfinite(d))
            fail_numeric("log_density: sigma must be positive and finite");
        w.dinv(i) = 1.0 / d;
        w.logdet_d += std::log(d);
    }
    if (w.K > 0) {
        static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        Matrix U = inv_sqrt2 * post.lowrank;
        w.V = w.dinv.asDiagonal() * U;
        Matrix C = Matrix::Identity(w.K, w.K) + U.transpose() * w.V;
        Eigen::SelfAdjointEigenSolver<Matrix> es(C, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || hi / lo > 1e12)
            fail_numeric("log_density: rank-K core is ill-conditioned (condition > 1e12)");
        w.cllt.compute(C);
        if (w.cllt.info() != Eigen::Success)
            fail_numeric("log_density: Cholesky of the rank-K core failed");
        w.logdet_c = 2.0 * w.cllt.matrixLLT().diagonal().array().log().sum();
    }
    return w;
}

} // namespace

double log_density(const GaussianPosterior& post, const Vector& w_s) {
    if (w_s.size() != post.p1()) fail_config("log_density: point has wrong length");
    const Woodbury w = factor(post);
    Vector delta = w_s - post.mu;
    const double quad = delta.dot(w.solve(delta));
    const double logdet = w.logdet_d + w.logdet_c;
    static const double log2pi = std::log(2.0 * std::numbers::pi);
    return -0.5 * (post.p1() * log2pi + logdet + quad);
}

ThetaGroups grad_log_density(const GaussianPosterior& post, const Vector& w_s) {
    if (w_s.size() != post.p1()) fail_config("grad_log_density: point has wrong length");
    const int p = post.p1();
    const Woodbury w = factor(post);
    Vector delta = w_s - post.mu;
    Vector a = w.solve(delta);

    ThetaGroups g;
    g.mu = a;

    Vector sigma = post.sigma();
    Vector diag_inv = w.dinv; // [Sigma^-1]_ii = 1/d_i - v_i^T C^-1 v_i
    Matrix sigma_inv_L;       // = sqrt(2) V C^-1
    if (w.K > 0) {
        Matrix CinvVt = w.cllt.solve(w.V.transpose()); // K x p1
        for (int i = 0; i < p; ++i) diag_inv(i) -= w.V.row(i).dot(CinvVt.col(i));
        sigma_inv_L = std::sqrt(2.0) * CinvVt.transpose();
    }
    g.log_sigma.resize(p);
    for (int i = 0; i < p; ++i)
        g.log_sigma(i) = 0.5 * sigma(i) * sigma(i) * (a(i) * a(i) - diag_inv(i));

    if (w.K > 0) {
        Eigen::RowVectorXd atL = a.transpose() * post.lowrank; // 1 x K
        g.lowrank = 0.5 * (a * atL - sigma_inv_L);
    } else {
        g.lowrank.resize(p, 0);
    }
    return g;
}

SwagCollector::SwagCollector(int p1, int K) : K_(K) {
    if (p1 < 1) fail_config("swag: p1 must be >= 1");
    if (K < 0) fail_config("swag: K must be >= 0");
    m1_ = Vector::Zero(p1);
    m2_ = Vector::Zero(p1);
}

void SwagCollector::add(const Vector& w_s) {
    if (w_s.size() != m1_.size()) fail_config("swag: snapshot has wrong length");
    ++n_;
    m1_ += (w_s - m1_) / n_;
    m2_ += (w_s.cwiseProduct(w_s) - m2_) / n_;
    if (K_ > 0) {
        dev_.push_back(w_s - m1_);
        if (static_cast<int>(dev_.size()) > K_) dev_.pop_front();
    }
}

GaussianPosterior swag_fit(const SwagCollector& collector, const ParamPartition& partition,
                           const std::vector<ParamRange>& registry, const Vector& frozen_values) {
    const int K = collector.K();
    if (collector.count() < std::max(2, K + 1))
        fail_config("swag_fit: need at least max(2, K+1) snapshots, got " +
                    std::to_string(collector.count()));
    GaussianPosterior post;
    post.mu = collector.mean();
    Vector var = (collector.second_moment() - post.mu.cwiseProduct(post.mu)).cwiseMax(1e-12);
    post.log_sigma = var.array().sqrt().log();
    post.lowrank.resize(post.mu.size(), K);
    if (K > 0) {
        const double scale = K >= 2 ? 1.0 / std::sqrt(static_cast<double>(K - 1)) : 1.0;
        int col = 0;
        for (const Vector& d : collector.deviations()) post.lowrank.col(col++) = scale * d;
    }
    post.partition = partition;
    post.frozen_values = frozen_values;
    post.registry = registry;
    post.prior_mu = post.mu;
    post.prior_sigma = post.sigma();
    post.validate();
    return post;
}

GaussianPosterior moped_from_dnn(const Model& model, const ParamVector& params,
                                 const ParamPartition& partition, double delta, double alpha) {
    if (!(delta > 0.0)) fail_config("moped: delta must be positive");
    if (!(alpha > 0.0)) fail_config("moped: alpha must be positive");
    if (partition.p1() + partition.p2() != model.param_count())
        fail_config("moped: partition does not cover the model");

    const int p1 = partition.p1();
    GaussianPosterior post;
    post.mu.resize(p1);
    post.log_sigma.resize(p1);
    post.lowrank.resize(p1, 0);

    std::vector<bool> is_head(params.values.size(), false);
    for (const ParamRange& r : model.registry)
        if (r.name.starts_with("head."))
            for (int i = 0; i < r.size; ++i) is_head[static_cast<size_t>(r.start + i)] = true;

    for (int i = 0; i < p1; ++i) {
        const int idx = partition.trainable[static_cast<size_t>(i)];
        const double w = params.values[static_cast<size_t>(idx)];
        if (is_head[static_cast<size_t>(idx)]) {
            post.mu(i) = 0.0;
            post.log_sigma(i) = 0.5 * std::log(alpha);
        } else {
            post.mu(i) = w;
            post.log_sigma(i) = std::log(std::max(delta * std::abs(w), 1e-6));
        }
    }
    post.partition = partition;
    post.frozen_values.resize(partition.p2());
    for (int i = 0; i < partition.p2(); ++i)
        post.frozen_values(i) = params.values[static_cast<size_t>(partition.frozen[static_cast<size_t>(i)])];
    post.registry = params.registry;
    post.prior_mu = post.mu;
    post.prior_sigma = post.sigma();
    post.validate();
    return post;
}

double kl_diag(const GaussianPosterior& post) {
    Vector sigma = post.sigma();
    double kl = 0.0;
    for (int i = 0; i < post.p1(); ++i) {
        const double s0 = post.prior_sigma(i);
        if (!(s0 > 0.0)) fail_numeric("elbo: prior sigma must be positive");
        const double dm = post.mu(i) - post.prior_mu(i);
        kl += std::log(s0 / sigma(i)) + (sigma(i) * sigma(i) + dm * dm) / (2.0 * s0 * s0) - 0.5;
    }
    return kl;
}

ThetaGroups kl_diag_grad(const GaussianPosterior& post, double beta) {
    ThetaGroups g;
    const int p = post.p1();
    g.mu.resize(p);
    g.log_sigma.resize(p);
    g.lowrank = Matrix::Zero(p, post.K());
    Vector sigma = post.sigma();
    for (int i = 0; i < p; ++i) {
        const double s0sq = post.prior_sigma(i) * post.prior_sigma(i);
        g.mu(i) = beta * (post.mu(i) - post.prior_mu(i)) / s0sq;
        g.log_sigma(i) = beta * (sigma(i) * sigma(i) / s0sq - 1.0);
    }
    return g;
}

double elbo_loss(const Model& model, const GaussianPosterior& post, const Dataset& batch,
                 const ParamVector& sample_w, double beta) {
    double out = nll_loss(model, sample_w, batch, 0.0);
    if (beta != 0.0) out += beta * kl_diag(post);
    return out;
}

} // namespace sabma
