#include "doctest.h"
#include "helpers.hpp"

#include "sabma/error.hpp"
#include "sabma/spectroscopy.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

using namespace sabma;

namespace {

MatVec dense_op(const Matrix& A) {
    return [A](const Vector& v) { return Vector(A * v); };
}

Matrix random_symmetric(int n, std::uint64_t seed, double scale = 1.0) {
    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, scale);
    Matrix A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = gauss(eng);
    return 0.5 * (A + A.transpose());
}

Vector dense_eigs_desc(const Matrix& A) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
    Vector v = es.eigenvalues();
    std::reverse(v.data(), v.data() + v.size());
    return v;
}

} // namespace

TEST_CASE("lanczos: diagonal operator recovers its spectrum exactly") {
    Matrix A = Vector::LinSpaced(5, 5.0, 1.0).asDiagonal();
    SpectrumReport r = lanczos_topk(dense_op(A), 5, 5, 1);
    REQUIRE(r.eigenvalues.size() == 5);
    for (int i = 0; i < 5; ++i)
        CHECK(r.eigenvalues[static_cast<size_t>(i)] == doctest::Approx(5.0 - i).epsilon(1e-10));
    CHECK(r.lambda1 == doctest::Approx(5.0).epsilon(1e-10));
    REQUIRE(r.ratio_1_5.has_value());
    CHECK(*r.ratio_1_5 == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(r.converged);
}

TEST_CASE("lanczos: identity operator (breakdown/restart path)") {
    const int n = 12;
    Matrix I = Matrix::Identity(n, n);
    SpectrumReport r = lanczos_topk(dense_op(I), n, 5, 3);
    REQUIRE(r.eigenvalues.size() == 5);
    for (double ev : r.eigenvalues) CHECK(ev == doctest::Approx(1.0).epsilon(1e-10));
    REQUIRE(r.ratio_1_5.has_value());
    CHECK(*r.ratio_1_5 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("lanczos: repeated-eigenvalue operator needs the restart machinery") {
    // diag(3, 3, 3, 1, 1): a single Krylov space only sees two distinct
    // eigenvalues, so reaching k = 4 requires restarting after breakdown.
    Vector d(5);
    d << 3.0, 3.0, 3.0, 1.0, 1.0;
    Matrix A = d.asDiagonal();
    SpectrumReport r = lanczos_topk(dense_op(A), 5, 4, 7);
    REQUIRE(r.eigenvalues.size() == 4);
    CHECK(r.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(r.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(r.eigenvalues[2] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(r.eigenvalues[3] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("lanczos: zero-lambda5 marks the ratio undefined") {
    Vector d(6);
    d << 2.0, 1.0, 1.0, 1.0, 0.0, 0.0;
    SpectrumReport r = lanczos_topk(dense_op(Matrix(d.asDiagonal())), 6, 5, 11);
    CHECK(r.lambda1 == doctest::Approx(2.0).epsilon(1e-9));
    CHECK_FALSE(r.ratio_1_5.has_value());
}

TEST_CASE("lanczos: matches dense eigendecomposition on random symmetric operators") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const int n = 50;
        Matrix A = random_symmetric(n, seed);
        const double norm2 = dense_eigs_desc(A).cwiseAbs().maxCoeff();
        SpectrumReport r = lanczos_topk(dense_op(A), n, 5, seed, {150, 1e-10});
        Vector want = dense_eigs_desc(A);
        CAPTURE(seed);
        REQUIRE(r.eigenvalues.size() == 5);
        for (int i = 0; i < 5; ++i)
            CHECK(std::abs(r.eigenvalues[static_cast<size_t>(i)] - want(i)) < 1e-8 * norm2);
    }
}

TEST_CASE("lanczos: lambda1 trace is recorded and ends at the answer") {
    Matrix A = random_symmetric(30, 77);
    SpectrumReport r = lanczos_topk(dense_op(A), 30, 3, 5);
    REQUIRE_FALSE(r.lambda1_trace.empty());
    CHECK(static_cast<int>(r.lambda1_trace.size()) == r.iterations);
    CHECK(r.lambda1_trace.back() == doctest::Approx(r.lambda1).epsilon(1e-12));
    // Ritz top values are monotone non-decreasing within a restart segment; a
    // restart can only extend the subspace, so the overall trace stays
    // non-decreasing up to roundoff.
    for (size_t i = 1; i < r.lambda1_trace.size(); ++i)
        CHECK(r.lambda1_trace[i] >= r.lambda1_trace[i - 1] - 1e-9);
}

TEST_CASE("lanczos: residuals certify the reported pairs") {
    Matrix A = random_symmetric(40, 99);
    SpectrumReport r = lanczos_topk(dense_op(A), 40, 4, 3, {200, 1e-9});
    REQUIRE(r.converged);
    REQUIRE(r.residuals.size() == 4);
    const double scale = std::max(1.0, std::abs(r.lambda1));
    for (double res : r.residuals) CHECK(res < 1e-8 * scale);
}

TEST_CASE("lambda_min: negated operator round trip") {
    Vector d(6);
    d << 4.0, 2.0, 0.5, -1.0, -3.5, 1.0;
    const double got = lambda_min(dense_op(Matrix(d.asDiagonal())), 6, 13);
    CHECK(got == doctest::Approx(-3.5).epsilon(1e-8));
}

TEST_CASE("dense_hessian: frozen quadratic and bilinear forms") {
    using autodiff::LossFn;
    LossFn quad;
    quad.value = [](const ParamVector& p) {
        return 0.5 * (2.0 * p.values[0] * p.values[0] + 6.0 * p.values[1] * p.values[1]);
    };
    quad.grad = [](const ParamVector& p) {
        ParamVector g = ParamVector::zeros_like(p);
        g.values[0] = 2.0 * p.values[0];
        g.values[1] = 6.0 * p.values[1];
        return g;
    };
    ParamVector p;
    p.values = {0.3, -0.7};
    p.registry = {{"x", 0, 2, 1, 2}};
    Matrix H = dense_hessian(quad, p);
    CHECK(std::abs(H(0, 0) - 2.0) < 1e-6);
    CHECK(std::abs(H(1, 1) - 6.0) < 1e-6);
    CHECK(std::abs(H(0, 1)) < 1e-6);

    LossFn bil;
    bil.value = [](const ParamVector& q) { return q.values[0] * q.values[1]; };
    bil.grad = [](const ParamVector& q) {
        ParamVector g = ParamVector::zeros_like(q);
        g.values[0] = q.values[1];
        g.values[1] = q.values[0];
        return g;
    };
    Matrix Hb = dense_hessian(bil, p);
    CHECK(std::abs(Hb(0, 1) - 1.0) < 1e-6);
    CHECK(std::abs(Hb(1, 0) - 1.0) < 1e-6);
    CHECK(std::abs(Hb(0, 0)) < 1e-6);
}

TEST_CASE("dense_hessian: MLP loss is symmetric before symmetrization") {
    Model m = build_mlp(2, {5}, 2, false, Activation::Tanh); // 2*5+5+5*2+2 = 27
    ParamVector params = testutil::random_params(m, 55);
    Dataset d = testutil::random_dataset(6, 2, 2, 56);
    autodiff::LossFn f = make_loss(m, d, 0.0);
    const int n = params.size();
    // Raw (unsymmetrized) finite-difference Hessian from the analytic gradient.
    Matrix H(n, n);
    for (int j = 0; j < n; ++j) {
        const double step = 1e-4 * (1.0 + std::abs(params.values[static_cast<size_t>(j)]));
        ParamVector plus = params, minus = params;
        plus.values[static_cast<size_t>(j)] += step;
        minus.values[static_cast<size_t>(j)] -= step;
        ParamVector gp = f.grad(plus), gm = f.grad(minus);
        for (int i = 0; i < n; ++i)
            H(i, j) = (gp.values[static_cast<size_t>(i)] - gm.values[static_cast<size_t>(i)]) /
                      (2.0 * step);
    }
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() < 1e-5);

    // And the library's symmetrized version agrees with it.
    Matrix Hs = dense_hessian(f, params);
    CHECK((Hs - 0.5 * (H + H.transpose())).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("dense_hessian: dimension guard") {
    autodiff::LossFn f;
    f.value = [](const ParamVector&) { return 0.0; };
    f.grad = [](const ParamVector& q) { return ParamVector::zeros_like(q); };
    ParamVector big;
    big.values.assign(501, 0.0);
    big.registry = {{"x", 0, 501, 1, 501}};
    CHECK_THROWS_AS(dense_hessian(f, big), Error);
}

TEST_CASE("weyl_certificate: frozen diagonal example and the M = 1 identity") {
    // A1 = diag(1,3), A2 = diag(2,0): lmax(avg) = max(1.5, 1.5) = 1.5;
    // upper = (3+2)/2 = 2.5; lower = max((3+0)/2, (2+1)/2) = 1.5.
    WeylCertificate c = weyl_certificate({3.0, 2.0}, {1.0, 0.0}, 1.5);
    CHECK(c.upper == doctest::Approx(2.5));
    CHECK(c.lower == doctest::Approx(1.5));
    CHECK(c.pass);

    WeylCertificate one = weyl_certificate({4.2}, {-1.0}, 4.2);
    CHECK(one.lower == doctest::Approx(4.2));
    CHECK(one.upper == doctest::Approx(4.2));
    CHECK(one.pass);

    CHECK_THROWS_AS(weyl_certificate({1.0}, {2.0}, 1.5), Error); // min > max
    CHECK_THROWS_AS(weyl_certificate({1.0, 2.0}, {0.0}, 1.0), Error); // length mismatch
}

TEST_CASE("weyl_certificate: random 8x8 pairs always satisfy the bound") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Matrix A1 = random_symmetric(8, seed);
        Matrix A2 = random_symmetric(8, seed + 1000);
        Matrix avg = 0.5 * (A1 + A2);
        Vector e1 = dense_eigs_desc(A1);
        Vector e2 = dense_eigs_desc(A2);
        const double observed = dense_eigs_desc(avg)(0);
        WeylCertificate c =
            weyl_certificate({e1(0), e2(0)}, {e1(7), e2(7)}, observed);
        CAPTURE(seed);
        CHECK(c.pass);
        CHECK(c.lower <= c.upper + c.slack);
    }
}

TEST_CASE("posterior_flatness: tiny-model lambda1 matches the dense oracle") {
    // <= 60 parameters, M = 3; each per-sample lambda1 must match a dense
    // eigendecomposition of the finite-difference Hessian at the same weights.
    Model m = build_mlp(2, {4}, 2, false, Activation::Tanh); // 22 params
    ParamVector p = testutil::random_params(m, 66);
    ParamPartition part = partition_params(m, PartitionPolicy::All);
    GaussianPosterior post = moped_from_dnn(m, p, part, 0.05, 1e-4);
    Dataset d = testutil::random_dataset(12, 2, 2, 67);
    const std::uint64_t seed = 4242;
    const int M = 3;

    PosteriorFlatness flat = posterior_flatness(m, post, d, M, 3, seed, {200, 1e-10});
    REQUIRE(flat.per_sample.size() == 3);

    autodiff::LossFn f = make_loss(m, d, 0.0);
    double mean = 0.0;
    for (int i = 0; i < M; ++i) {
        ParamVector w = sample(post, rng::derive(seed, "spectrum", static_cast<std::uint64_t>(i)));
        Matrix H = dense_hessian(f, w);
        const double want = dense_eigs_desc(H)(0);
        const double got = flat.per_sample[static_cast<size_t>(i)].lambda1;
        CAPTURE(i);
        CHECK(testutil::rel_err(got, want) < 1e-6);
        mean += got;
    }
    CHECK(flat.mean_lambda1 == doctest::Approx(mean / M).epsilon(1e-12));
}

TEST_CASE("posterior_flatness: degenerate posterior collapses all samples") {
    Model m = build_mlp(2, {3}, 2, false, Activation::Tanh);
    ParamVector p = testutil::random_params(m, 71);
    ParamPartition part = partition_params(m, PartitionPolicy::All);
    GaussianPosterior post = moped_from_dnn(m, p, part, 0.05, 1e-4);
    post.log_sigma.setConstant(-40.0); // sigma ~ 0: every sample is the mean
    Dataset d = testutil::random_dataset(10, 2, 2, 72);

    // Tight solver options: agreement between runs with different Lanczos
    // start vectors is limited by the convergence tolerance.
    const LanczosOptions tight{300, 1e-12};
    PosteriorFlatness flat = posterior_flatness(m, post, d, 3, 2, 99, tight);
    SpectrumReport at_mean = point_spectrum(m, assemble(post, post.mu), d, 2, 99, tight);
    for (const SpectrumReport& r : flat.per_sample)
        CHECK(testutil::rel_err(r.lambda1, at_mean.lambda1) < 1e-9);

    PosteriorFlatness single = posterior_flatness(m, post, d, 1, 2, 99, tight);
    CHECK(single.mean_lambda1 == doctest::Approx(single.per_sample[0].lambda1));
}

TEST_CASE("posterior_weyl: bound holds on a real posterior") {
    Model m = build_mlp(2, {3}, 2, false, Activation::Tanh);
    ParamVector p = testutil::random_params(m, 81);
    ParamPartition part = partition_params(m, PartitionPolicy::All);
    GaussianPosterior post = moped_from_dnn(m, p, part, 0.05, 1e-4);
    Dataset d = testutil::random_dataset(10, 2, 2, 82);
    WeylCertificate c = posterior_weyl(m, post, d, 3, 4711);
    CHECK(c.pass);
    CHECK(c.lower <= c.observed + c.slack);
    CHECK(c.observed <= c.upper + c.slack);
}
