#include "sabma/spectroscopy.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace sabma {

namespace {

Vector random_unit(int dim, std::mt19937_64& eng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = gauss(eng);
    const double n = v.norm();
    if (n == 0.0) return Vector::Unit(dim, 0);
    return v / n;
}

} // namespace

SpectrumReport lanczos_topk(const MatVec& matvec, int dim, int k, std::uint64_t seed,
                            const LanczosOptions& opts) {
    if (dim < 1) fail_config("lanczos: dim must be >= 1");
    if (k < 1 || k > dim) fail_config("lanczos: k must be in [1, dim]");
    if (opts.max_iters < 1) fail_config("lanczos: max_iters must be >= 1");

    auto eng = rng::engine(seed);
    const int m_max = std::min(opts.max_iters, dim);

    std::vector<Vector> basis; // orthonormal Lanczos vectors
    std::vector<double> alphas, betas; // betas[j] couples v_j and v_{j+1}
    basis.reserve(static_cast<size_t>(m_max));

    Vector v = random_unit(dim, eng);
    double beta_prev = 0.0;

    SpectrumReport report;
    Eigen::SelfAdjointEigenSolver<Matrix> es;

    auto ritz = [&](bool want_vectors) {
        const int m = static_cast<int>(alphas.size());
        Matrix T = Matrix::Zero(m, m);
        for (int i = 0; i < m; ++i) {
            T(i, i) = alphas[static_cast<size_t>(i)];
            if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = betas[static_cast<size_t>(i)];
        }
        es.compute(T, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    };

    for (int iter = 0; iter < m_max; ++iter) {
        Vector w = matvec(v);
        if (!w.allFinite()) fail_numeric("lanczos: operator returned a non-finite vector");
        const double alpha = v.dot(w);
        w -= alpha * v;
        if (beta_prev != 0.0 && basis.size() >= 1) w -= beta_prev * basis.back();
        basis.push_back(v);
        alphas.push_back(alpha);

        // full reorthogonalization, twice for good measure
        for (int pass = 0; pass < 2; ++pass)
            for (const Vector& u : basis) w -= u.dot(w) * u;

        ritz(true);
        const int m = static_cast<int>(alphas.size());
        report.lambda1_trace.push_back(es.eigenvalues()(m - 1));
        report.iterations = m;

        double beta = w.norm();
        const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        const bool breakdown = beta < 1e-12 * scale;

        // |beta * (last eigenvector component)| estimates the residual of each
        // Ritz pair; only spend matvecs on explicit residuals once it passes
        if (m >= k) {
            const double thresh = opts.tol * std::max(1.0, std::abs(es.eigenvalues()(m - 1)));
            bool cheap_ok = true;
            for (int j = 0; j < k && cheap_ok; ++j)
                if (std::abs(beta * es.eigenvectors()(m - 1, m - 1 - j)) >= thresh)
                    cheap_ok = false;
            if (cheap_ok) {
                std::vector<double> vals(static_cast<size_t>(k));
                std::vector<double> res(static_cast<size_t>(k));
                bool all_ok = true;
                for (int j = 0; j < k; ++j) {
                    const int col = m - 1 - j; // eigenvalues ascend
                    vals[static_cast<size_t>(j)] = es.eigenvalues()(col);
                    Vector y = Vector::Zero(dim);
                    for (int i = 0; i < m; ++i)
                        y += es.eigenvectors()(i, col) * basis[static_cast<size_t>(i)];
                    Vector r = matvec(y) - vals[static_cast<size_t>(j)] * y;
                    res[static_cast<size_t>(j)] = r.norm();
                    if (res[static_cast<size_t>(j)] >= thresh) all_ok = false;
                }
                if (all_ok) {
                    report.eigenvalues = vals;
                    report.residuals = res;
                    report.converged = true;
                    break;
                }
            }
        }

        if (breakdown) {
            if (static_cast<int>(basis.size()) >= dim) break;
            // invariant subspace: restart with a fresh direction orthogonal to
            // everything found so far
            Vector fresh;
            bool ok = false;
            for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
                fresh = random_unit(dim, eng);
                for (int pass = 0; pass < 2; ++pass)
                    for (const Vector& u : basis) fresh -= u.dot(fresh) * u;
                if (fresh.norm() > 1e-8) ok = true;
            }
            if (!ok) break;
            v = fresh / fresh.norm();
            betas.push_back(0.0);
            beta_prev = 0.0;
        } else {
            if (static_cast<int>(basis.size()) >= dim) break;
            betas.push_back(beta);
            beta_prev = beta;
            v = w / beta;
        }
    }

    if (report.eigenvalues.empty()) {
        // unconverged or fewer iterations than k: report the final Ritz state
        ritz(true);
        const int m = static_cast<int>(alphas.size());
        const int kk = std::min(k, m);
        report.eigenvalues.resize(static_cast<size_t>(kk));
        report.residuals.assign(static_cast<size_t>(kk), 0.0);
        for (int j = 0; j < kk; ++j) {
            const int col = m - 1 - j;
            report.eigenvalues[static_cast<size_t>(j)] = es.eigenvalues()(col);
            Vector y = Vector::Zero(dim);
            for (int i = 0; i < m; ++i) y += es.eigenvectors()(i, col) * basis[static_cast<size_t>(i)];
            Vector r = matvec(y) - report.eigenvalues[static_cast<size_t>(j)] * y;
            report.residuals[static_cast<size_t>(j)] = r.norm();
        }
    }
    report.lambda1 = report.eigenvalues[0];
    if (static_cast<int>(report.eigenvalues.size()) >= 5 && report.eigenvalues[4] != 0.0)
        report.ratio_1_5 = report.eigenvalues[0] / report.eigenvalues[4];
    return report;
}

double lambda_min(const MatVec& matvec, int dim, std::uint64_t seed, const LanczosOptions& opts) {
    MatVec neg = [&matvec](const Vector& x) { return Vector(-matvec(x)); };
    SpectrumReport r = lanczos_topk(neg, dim, 1, seed, opts);
    return -r.lambda1;
}

Matrix dense_hessian(const autodiff::LossFn& f, const ParamVector& params) {
    const int p = params.size();
    if (p > 500) fail_config("dense_hessian: guarded to p <= 500");
    Matrix H(p, p);
    ParamVector q = params;
    for (int j = 0; j < p; ++j) {
        const double orig = q.values[static_cast<size_t>(j)];
        const double h = 1e-4 * (1.0 + std::abs(orig));
        q.values[static_cast<size_t>(j)] = orig + h;
        ParamVector gp = f.grad(q);
        q.values[static_cast<size_t>(j)] = orig - h;
        ParamVector gm = f.grad(q);
        q.values[static_cast<size_t>(j)] = orig;
        for (int i = 0; i < p; ++i)
            H(i, j) = (gp.values[static_cast<size_t>(i)] - gm.values[static_cast<size_t>(i)]) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

WeylCertificate weyl_certificate(const std::vector<double>& lambda_maxes,
                                 const std::vector<double>& lambda_mins, double observed) {
    const size_t M = lambda_maxes.size();
    if (M == 0 || lambda_mins.size() != M)
        fail_config("weyl_certificate: need matching non-empty lambda lists");
    double sum_max = 0.0, sum_min = 0.0;
    for (size_t i = 0; i < M; ++i) {
        if (lambda_mins[i] > lambda_maxes[i])
            fail_config("weyl_certificate: lambda_min exceeds lambda_max at index " +
                        std::to_string(i));
        sum_max += lambda_maxes[i];
        sum_min += lambda_mins[i];
    }
    WeylCertificate cert;
    cert.upper = sum_max / static_cast<double>(M);
    double best = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < M; ++i)
        best = std::max(best, lambda_maxes[i] + (sum_min - lambda_mins[i]));
    cert.lower = best / static_cast<double>(M);
    cert.observed = observed;
    cert.slack = 1e-9 * (1.0 + std::abs(cert.upper));
    cert.pass = observed >= cert.lower - cert.slack && observed <= cert.upper + cert.slack;
    return cert;
}

namespace {

MatVec loss_hessian_matvec(const Model& model, const Dataset& data, const ParamVector& at) {
    autodiff::LossFn f = make_loss(model, data, 0.0);
    return [f = std::move(f), at](const Vector& x) {
        std::vector<double> v(x.data(), x.data() + x.size());
        std::vector<double> hv = autodiff::hvp(f, at, v);
        return Eigen::Map<Vector>(hv.data(), static_cast<Eigen::Index>(hv.size())).eval();
    };
}

} // namespace

SpectrumReport point_spectrum(const Model& model, const ParamVector& params, const Dataset& data,
                              int k, std::uint64_t seed, const LanczosOptions& opts) {
    return lanczos_topk(loss_hessian_matvec(model, data, params), params.size(), k, seed, opts);
}

WeylCertificate posterior_weyl(const Model& model, const GaussianPosterior& post,
                               const Dataset& data, int M, std::uint64_t seed,
                               const LanczosOptions& opts) {
    if (M < 1) fail_config("posterior_weyl: M must be >= 1");
    std::vector<ParamVector> ws;
    std::vector<MatVec> mvs;
    std::vector<double> maxes, mins;
    for (int i = 0; i < M; ++i) {
        ws.push_back(sample(post, rng::derive(seed, "spectrum", static_cast<std::uint64_t>(i))));
        mvs.push_back(loss_hessian_matvec(model, data, ws.back()));
        const std::uint64_t lseed = rng::derive(seed, "lanczos", static_cast<std::uint64_t>(i));
        maxes.push_back(lanczos_topk(mvs.back(), ws.back().size(), 1, lseed, opts).lambda1);
        mins.push_back(lambda_min(mvs.back(), ws.back().size(), lseed, opts));
    }
    MatVec avg = [&mvs, M](const Vector& x) {
        Vector acc = mvs[0](x);
        for (int i = 1; i < M; ++i) acc += mvs[static_cast<size_t>(i)](x);
        return Vector(acc / static_cast<double>(M));
    };
    const double observed =
        lanczos_topk(avg, ws[0].size(), 1, rng::derive(seed, "lanczos", 0xa11), opts).lambda1;
    return weyl_certificate(maxes, mins, observed);
}

PosteriorFlatness posterior_flatness(const Model& model, const GaussianPosterior& post,
                                     const Dataset& data, int M, int k, std::uint64_t seed,
                                     const LanczosOptions& opts) {
    if (M < 1) fail_config("posterior_flatness: M must be >= 1");
    PosteriorFlatness out;
    double sum_l1 = 0.0, sum_ratio = 0.0;
    int n_ratio = 0;
    for (int i = 0; i < M; ++i) {
        ParamVector w = sample(post, rng::derive(seed, "spectrum", static_cast<std::uint64_t>(i)));
        SpectrumReport r = point_spectrum(model, w, data, k,
                                          rng::derive(seed, "lanczos", static_cast<std::uint64_t>(i)),
                                          opts);
        sum_l1 += r.lambda1;
        if (r.ratio_1_5) {
            sum_ratio += *r.ratio_1_5;
            ++n_ratio;
        }
        out.per_sample.push_back(std::move(r));
    }
    out.mean_lambda1 = sum_l1 / M;
    if (n_ratio > 0) out.mean_ratio_1_5 = sum_ratio / n_ratio;
    return out;
}

} // namespace sabma
