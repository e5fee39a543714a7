#pragma once

#include "sabma/posterior.hpp"

#include <cstdint>
#include <functional>
#include <optional>

namespace sabma {

using MatVec = std::function<Vector(const Vector&)>;

struct SpectrumReport {
    std::vector<double> eigenvalues;   // top Ritz values, descending
    double lambda1 = 0.0;
    std::optional<double> ratio_1_5;   // lambda1/lambda5 when k >= 5 and lambda5 != 0
    int iterations = 0;
    std::vector<double> residuals;     // explicit ||A y - lambda y|| per eigenvalue
    bool converged = false;
    std::vector<double> lambda1_trace; // top Ritz value after each iteration
};

struct LanczosOptions {
    int max_iters = 100;
    double tol = 1e-8; // converged when residual < tol * max(1, |lambda1|)
};

// Symmetric Lanczos with full reorthogonalization; restarts with a fresh
// orthogonalized vector on breakdown (invariant subspace). The operator is
// only accessed through matvecs.
SpectrumReport lanczos_topk(const MatVec& matvec, int dim, int k, std::uint64_t seed,
                            const LanczosOptions& opts = {});

// Smallest eigenvalue via Lanczos on -A.
double lambda_min(const MatVec& matvec, int dim, std::uint64_t seed,
                  const LanczosOptions& opts = {});

// Dense symmetrized Hessian from an analytic gradient (finite differences,
// column step 1e-4*(1+|theta_j|)). Guarded to p <= 500.
Matrix dense_hessian(const autodiff::LossFn& f, const ParamVector& params);

// Two-sided bound on the largest eigenvalue of an average A = (1/M) sum A_i
// from per-term extremes:
//   max_i (lmax_i + sum_{j != i} lmin_j)/M  <=  lmax(A)  <=  (sum_i lmax_i)/M
struct WeylCertificate {
    double lower = 0.0;
    double upper = 0.0;
    double observed = 0.0;
    double slack = 0.0; // 1e-9 * (1 + |upper|)
    bool pass = false;
};
WeylCertificate weyl_certificate(const std::vector<double>& lambda_maxes,
                                 const std::vector<double>& lambda_mins, double observed);

// Hessian spectroscopy of the posterior: draw M weight samples, run Lanczos on
// the loss Hessian (finite-difference HVP over `data`, weight decay 0) at each.
struct PosteriorFlatness {
    std::vector<SpectrumReport> per_sample;
    double mean_lambda1 = 0.0;
    std::optional<double> mean_ratio_1_5;
};
PosteriorFlatness posterior_flatness(const Model& model, const GaussianPosterior& post,
                                     const Dataset& data, int M, int k, std::uint64_t seed,
                                     const LanczosOptions& opts = {});

// Same spectroscopy at a single weight vector.
SpectrumReport point_spectrum(const Model& model, const ParamVector& params, const Dataset& data,
                              int k, std::uint64_t seed, const LanczosOptions& opts = {});

// Weyl certificate for the posterior-averaged Hessian: draws the same M
// samples as posterior_flatness (identical seed derivation), takes per-sample
// (lambda_max, lambda_min) and checks the observed lambda_max of the averaged
// operator against the bound.
WeylCertificate posterior_weyl(const Model& model, const GaussianPosterior& post,
                               const Dataset& data, int M, std::uint64_t seed,
                               const LanczosOptions& opts = {});

} // namespace sabma
