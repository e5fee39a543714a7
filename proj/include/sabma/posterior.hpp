#pragma once

#include "sabma/models.hpp"

#include <cstdint>
#include <deque>

namespace sabma {

// Grouped variational parameters theta = (mu, log_sigma, lowrank) over the
// trainable coordinates; also the container for per-group gradients/scores.
struct ThetaGroups {
    Vector mu;        // p1
    Vector log_sigma; // p1
    Matrix lowrank;   // p1 x K
};

// Diagonal + rank-K Gaussian over the trainable slice:
//   w_s = mu + (sigma .* z1 + L z2)/sqrt(2),  z1 ~ N(0, I_p1), z2 ~ N(0, I_K)
// so Sigma = (diag(sigma^2) + L L^T)/2 with sigma = exp(log_sigma).
// Frozen coordinates keep frozen_values. prior_mu/prior_sigma record the
// initialization posterior (the KL anchor for the ELBO).
struct GaussianPosterior {
    Vector mu;
    Vector log_sigma;
    Matrix lowrank; // p1 x K (0 columns when K = 0)
    ParamPartition partition;
    Vector frozen_values;
    std::vector<ParamRange> registry;
    Vector prior_mu;
    Vector prior_sigma;
    bool train_mu = true;
    bool train_log_sigma = true;
    bool train_lowrank = true;

    int p1() const { return static_cast<int>(mu.size()); }
    int K() const { return static_cast<int>(lowrank.cols()); }
    Vector sigma() const { return log_sigma.array().exp(); }
    void validate() const; // shape/finite checks, throws Config
};

// Draw the noise pair for one sample (z1 then z2 from one engine).
struct NoisePair {
    Vector z1;
    Vector z2;
};
NoisePair draw_noise(const GaussianPosterior& post, std::uint64_t seed);

Vector sample_trainable(const GaussianPosterior& post, const NoisePair& z);
ParamVector sample(const GaussianPosterior& post, std::uint64_t seed);
ParamVector assemble(const GaussianPosterior& post, const Vector& trainable_values);

// log N(w_s; mu, Sigma) via the Woodbury identity and the matrix determinant
// lemma on the rank-K core C = I_K + U^T D^-1 U (D = diag(sigma^2/2),
// U = L/sqrt(2)); never materializes a p1 x p1 matrix. Requires sigma > 0;
// throws Numeric when the core's condition number exceeds 1e12.
double log_density(const GaussianPosterior& post, const Vector& w_s);

// Gradient of log_density w.r.t. (mu, log_sigma, L) at fixed w_s:
//   a = Sigma^-1 (w_s - mu)
//   d/dmu       = a
//   d/dlogsig_i = sigma_i^2 (a_i^2 - [Sigma^-1]_ii)/2
//   d/dL        = (a (a^T L) - Sigma^-1 L)/2,  Sigma^-1 L = sqrt(2) V C^-1
ThetaGroups grad_log_density(const GaussianPosterior& post, const Vector& w_s);

// Running first/second moments plus the last-K deviations (snapshot minus the
// running mean after including it).
class SwagCollector {
public:
    SwagCollector(int p1, int K);
    void add(const Vector& w_s);
    int count() const { return n_; }
    int K() const { return K_; }
    const Vector& mean() const { return m1_; }
    const Vector& second_moment() const { return m2_; }
    const std::deque<Vector>& deviations() const { return dev_; }

private:
    int K_;
    int n_ = 0;
    Vector m1_, m2_;
    std::deque<Vector> dev_;
};

// mu = running mean, sigma^2 = clamp(E[w^2] - mu^2, 1e-12), L columns = the
// last K deviations scaled by 1/sqrt(K-1) (1/sqrt(1) when K = 1). Requires
// n >= max(2, K+1) snapshots.
GaussianPosterior swag_fit(const SwagCollector& collector, const ParamPartition& partition,
                           const std::vector<ParamRange>& registry, const Vector& frozen_values);

// Deterministic DNN -> posterior conversion: mu_i = w_i,
// sigma_i = max(delta*|w_i|, 1e-6), K = 0; head-layer coordinates are reset to
// the prior N(0, alpha I): mu = 0, sigma = sqrt(alpha).
GaussianPosterior moped_from_dnn(const Model& model, const ParamVector& params,
                                 const ParamPartition& partition, double delta, double alpha);

// NLL(batch; sample_w) + beta * KL(q || N(prior_mu, diag(prior_sigma^2))),
// mean-field diagonal KL (the low-rank factor does not enter the KL).
double elbo_loss(const Model& model, const GaussianPosterior& post, const Dataset& batch,
                 const ParamVector& sample_w, double beta);
double kl_diag(const GaussianPosterior& post);
// Gradient of beta * KL w.r.t. (mu, log_sigma); lowrank block is zero.
ThetaGroups kl_diag_grad(const GaussianPosterior& post, double beta);

} // namespace sabma
