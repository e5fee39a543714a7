#pragma once

// Shared test fixtures and independent oracles. The oracles deliberately take
// a different route than the code under test: dense algebra instead of the
// Woodbury factorization, finite differences instead of the tape backward,
// full eigendecompositions instead of Lanczos.

#include "doctest.h"

#include "sabma/bma.hpp"
#include "sabma/models.hpp"
#include "sabma/posterior.hpp"
#include "sabma/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <random>

namespace testutil {

using namespace sabma;

inline Dataset random_dataset(int n, int d, int classes, std::uint64_t seed) {
    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> lab(0, classes - 1);
    Dataset out;
    out.classes = classes;
    out.X.resize(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.X(i, j) = gauss(eng);
    out.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.labels[static_cast<size_t>(i)] = lab(eng);
    return out;
}

// Small tanh MLP with randomized shape; smooth everywhere so finite-difference
// oracles hold to tight tolerances.
inline Model random_model(std::uint64_t seed, int input_dim = 0, int classes = 0) {
    auto eng = rng::engine(seed);
    std::uniform_int_distribution<int> d_in(2, 4), d_cls(2, 4), d_h(2, 6), d_layers(1, 2);
    std::uniform_int_distribution<int> coin(0, 1);
    if (input_dim == 0) input_dim = d_in(eng);
    if (classes == 0) classes = d_cls(eng);
    std::vector<int> hidden;
    const int L = d_layers(eng);
    for (int i = 0; i < L; ++i) hidden.push_back(d_h(eng));
    return build_mlp(input_dim, hidden, classes, coin(eng) == 1, Activation::Tanh);
}

inline ParamVector random_params(const Model& model, std::uint64_t seed, double scale = 0.8) {
    ParamVector p = init_params(model, seed);
    auto eng = rng::engine(rng::splitmix64(seed ^ 0x5eed));
    std::normal_distribution<double> gauss(0.0, scale);
    for (double& v : p.values) v += 0.1 * gauss(eng);
    return p;
}

// Dense covariance Sigma = (diag(sigma^2) + L L^T)/2.
inline Matrix dense_sigma(const GaussianPosterior& post) {
    Vector s = post.sigma();
    Matrix S = Matrix::Zero(post.p1(), post.p1());
    for (int i = 0; i < post.p1(); ++i) S(i, i) = s(i) * s(i);
    if (post.K() > 0) S += post.lowrank * post.lowrank.transpose();
    return 0.5 * S;
}

// Gaussian log-density through a dense Cholesky — no Woodbury anywhere.
inline double oracle_logpdf(const GaussianPosterior& post, const Vector& w) {
    Matrix S = dense_sigma(post);
    Eigen::LLT<Matrix> llt(S);
    REQUIRE(llt.info() == Eigen::Success);
    Vector delta = w - post.mu;
    const double quad = delta.dot(llt.solve(delta));
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * (post.p1() * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

// Random diag+low-rank posterior over a standalone registry (no model needed).
inline GaussianPosterior random_posterior(int p1, int K, std::uint64_t seed,
                                          double sigma_scale = 1.0) {
    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    GaussianPosterior post;
    post.mu.resize(p1);
    post.log_sigma.resize(p1);
    post.lowrank.resize(p1, K);
    for (int i = 0; i < p1; ++i) {
        post.mu(i) = gauss(eng);
        post.log_sigma(i) = std::log(sigma_scale * (0.5 + 0.4 * std::abs(gauss(eng))));
    }
    for (int i = 0; i < p1; ++i)
        for (int k = 0; k < K; ++k) post.lowrank(i, k) = 0.3 * gauss(eng);
    post.partition.trainable.resize(static_cast<size_t>(p1));
    for (int i = 0; i < p1; ++i) post.partition.trainable[static_cast<size_t>(i)] = i;
    post.frozen_values.resize(0);
    post.registry = {{"theta", 0, p1, 1, p1}};
    post.prior_mu = post.mu;
    post.prior_sigma = post.sigma();
    return post;
}

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double max_abs_diff(const Vector& a, const Vector& b) {
    REQUIRE(a.size() == b.size());
    return (a - b).cwiseAbs().maxCoeff();
}

} // namespace testutil
