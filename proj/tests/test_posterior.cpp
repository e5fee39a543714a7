#include "doctest.h"
#include "helpers.hpp"

#include "sabma/error.hpp"
#include "sabma/posterior.hpp"
#include "sabma/rng.hpp"

#include <cmath>
#include <numbers>

using namespace sabma;
using testutil::random_posterior;

namespace {

// Unit-variance 1-D posterior: sigma = sqrt(2) so Sigma = sigma^2/2 = 1.
GaussianPosterior unit_1d() {
    GaussianPosterior post = random_posterior(1, 0, 1);
    post.mu(0) = 0.0;
    post.log_sigma(0) = 0.5 * std::log(2.0);
    post.prior_mu = post.mu;
    post.prior_sigma = post.sigma();
    return post;
}

} // namespace

TEST_CASE("sample: degenerate sigma collapses onto the mean") {
    GaussianPosterior post = random_posterior(6, 0, 3);
    post.log_sigma.setConstant(-40.0);
    for (std::uint64_t s = 0; s < 4; ++s) {
        ParamVector w = sample(post, s);
        for (int i = 0; i < 6; ++i)
            CHECK(std::abs(w.values[static_cast<size_t>(i)] - post.mu(i)) < 1e-15);
    }
}

TEST_CASE("sample: 1-D variance matches sigma^2/2 over 1e5 draws") {
    GaussianPosterior post = unit_1d();
    const int n = 100000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Vector w = sample_trainable(post, draw_noise(post, static_cast<std::uint64_t>(i)));
        s1 += w(0);
        s2 += w(0) * w(0);
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("sample: rank-1 low-rank support lies on the line x = y") {
    GaussianPosterior post = random_posterior(2, 1, 7);
    post.mu.setZero();
    post.log_sigma.setConstant(-40.0);
    post.lowrank.col(0) << 1.0, 1.0;
    for (std::uint64_t s = 0; s < 32; ++s) {
        Vector w = sample_trainable(post, draw_noise(post, s));
        CHECK(std::abs(w(0) - w(1)) < 1e-12);
    }
}

TEST_CASE("sample: deterministic in the seed, and noise shapes are right") {
    GaussianPosterior post = random_posterior(5, 2, 9);
    NoisePair z = draw_noise(post, 123);
    CHECK(z.z1.size() == 5);
    CHECK(z.z2.size() == 2);
    ParamVector a = sample(post, 123);
    ParamVector b = sample(post, 123);
    CHECK(a.values == b.values);
}

TEST_CASE("log_density: frozen 1-D values") {
    GaussianPosterior post = unit_1d();
    Vector w0(1), w1(1);
    w0 << 0.0;
    w1 << 1.0;
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    CHECK(log_density(post, w0) == doctest::Approx(-half_log_2pi).epsilon(1e-9));
    CHECK(log_density(post, w0) == doctest::Approx(-0.918939).epsilon(1e-6));
    CHECK(log_density(post, w1) == doctest::Approx(-half_log_2pi - 0.5).epsilon(1e-9));
}

TEST_CASE("log_density: Woodbury route matches the dense Cholesky oracle") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const int p1 = 3 + static_cast<int>(seed % 18); // up to 20
        const int K = static_cast<int>(seed % 6);       // up to 5
        GaussianPosterior post = random_posterior(p1, K, seed);
        auto eng = rng::engine(seed + 500);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vector w(p1);
        for (int i = 0; i < p1; ++i) w(i) = post.mu(i) + gauss(eng);
        const double got = log_density(post, w);
        const double want = testutil::oracle_logpdf(post, w);
        CAPTURE(seed);
        CHECK(std::abs(got - want) < 1e-8);
    }
}

TEST_CASE("log_density: ill-conditioned low-rank core raises a numeric error") {
    GaussianPosterior post = random_posterior(4, 2, 11);
    post.log_sigma.setConstant(std::log(1e-6));
    post.lowrank.setZero();
    post.lowrank(0, 0) = 1.0;
    post.lowrank(0, 1) = 1.0; // two identical directions: core condition ~ 4e12
    Vector w = post.mu;
    try {
        log_density(post, w);
        FAIL("expected a numeric error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numeric);
    }
}

TEST_CASE("grad_log_density: frozen values at and off the mean") {
    GaussianPosterior post = unit_1d();
    Vector at_mu(1);
    at_mu << 0.0;
    ThetaGroups g0 = grad_log_density(post, at_mu);
    CHECK(g0.mu(0) == 0.0); // exact: a = Sigma^-1 * 0

    Vector w(1);
    w << 1.0;
    ThetaGroups g1 = grad_log_density(post, w);
    CHECK(g1.mu(0) == doctest::Approx(1.0).epsilon(1e-12)); // Sigma^-1 (w - mu) = 1
}

TEST_CASE("grad_log_density: matches finite differences of log_density") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const int p1 = 4 + static_cast<int>(seed % 4);
        const int K = static_cast<int>(seed % 3);
        GaussianPosterior post = random_posterior(p1, K, seed * 13);
        auto eng = rng::engine(seed + 900);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vector w(p1);
        for (int i = 0; i < p1; ++i) w(i) = post.mu(i) + 0.7 * gauss(eng);

        ThetaGroups g = grad_log_density(post, w);
        const double h = 1e-6;
        auto fd = [&](auto&& bump) {
            GaussianPosterior plus = post, minus = post;
            bump(plus, h);
            bump(minus, -h);
            return (log_density(plus, w) - log_density(minus, w)) / (2.0 * h);
        };
        CAPTURE(seed);
        for (int i = 0; i < p1; ++i) {
            double d_mu = fd([&](GaussianPosterior& q, double e) { q.mu(i) += e; });
            CHECK(testutil::rel_err(g.mu(i), d_mu) < 1e-6);
            double d_ls = fd([&](GaussianPosterior& q, double e) { q.log_sigma(i) += e; });
            CHECK(testutil::rel_err(g.log_sigma(i), d_ls) < 1e-6);
        }
        for (int i = 0; i < p1 && K > 0; ++i)
            for (int k = 0; k < K; ++k) {
                double d_l = fd([&](GaussianPosterior& q, double e) { q.lowrank(i, k) += e; });
                CHECK(testutil::rel_err(g.lowrank(i, k), d_l) < 1e-6);
            }
    }
}

TEST_CASE("log_density: normalizes to one under grid quadrature (p1 <= 3)") {
    SUBCASE("1-D") {
        GaussianPosterior post = random_posterior(1, 0, 17, 0.8);
        const double lo = post.mu(0) - 8.0, hi = post.mu(0) + 8.0;
        const int n = 4001;
        const double dx = (hi - lo) / (n - 1);
        double mass = 0.0;
        Vector w(1);
        for (int i = 0; i < n; ++i) {
            w(0) = lo + i * dx;
            mass += std::exp(log_density(post, w)) * dx;
        }
        CHECK(std::abs(mass - 1.0) < 0.02);
    }
    SUBCASE("2-D with a low-rank column") {
        GaussianPosterior post = random_posterior(2, 1, 19, 0.7);
        post.lowrank *= 0.5;
        const int n = 281;
        double mass = 0.0;
        Vector w(2);
        const double half = 7.0;
        const double dx = 2.0 * half / (n - 1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                w(0) = post.mu(0) - half + i * dx;
                w(1) = post.mu(1) - half + j * dx;
                mass += std::exp(log_density(post, w)) * dx * dx;
            }
        CHECK(std::abs(mass - 1.0) < 0.02);
    }
}

TEST_CASE("swag_fit: two 1-D snapshots give mu = 1, sigma^2 = 1") {
    SwagCollector c(1, 0);
    Vector a(1), b(1);
    a << 0.0;
    b << 2.0;
    c.add(a);
    c.add(b);
    ParamPartition part;
    part.trainable = {0};
    std::vector<ParamRange> reg = {{"theta", 0, 1, 1, 1}};
    GaussianPosterior post = swag_fit(c, part, reg, Vector());
    CHECK(post.mu(0) == doctest::Approx(1.0));
    CHECK(post.sigma()(0) * post.sigma()(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(post.K() == 0);
}

TEST_CASE("swag_fit: identical snapshots floor the variance and zero the deviations") {
    SwagCollector c(3, 1);
    Vector w(3);
    w << 0.5, -1.0, 2.0;
    for (int i = 0; i < 5; ++i) c.add(w);
    ParamPartition part;
    part.trainable = {0, 1, 2};
    std::vector<ParamRange> reg = {{"theta", 0, 3, 1, 3}};
    GaussianPosterior post = swag_fit(c, part, reg, Vector());
    for (int i = 0; i < 3; ++i) {
        CHECK(post.sigma()(i) * post.sigma()(i) == doctest::Approx(1e-12).epsilon(1e-6));
        CHECK(std::abs(post.lowrank(i, 0)) < 1e-12);
    }
}

TEST_CASE("swag_fit: insufficient snapshots is a config error") {
    SwagCollector c(2, 2);
    Vector w(2);
    w << 1.0, 2.0;
    c.add(w);
    c.add(w); // n = 2 < K+1 = 3
    ParamPartition part;
    part.trainable = {0, 1};
    std::vector<ParamRange> reg = {{"theta", 0, 2, 1, 2}};
    CHECK_THROWS_AS(swag_fit(c, part, reg, Vector()), Error);
}

TEST_CASE("swag_fit: Monte Carlo covariance of the fitted posterior") {
    // 50 random snapshots -> fit with K = 5 -> the sampler's empirical
    // covariance must match (diag sigma^2 + L L^T)/2 within five standard
    // errors elementwise.
    const int p1 = 6, K = 5, snaps = 50;
    SwagCollector c(p1, K);
    auto eng = rng::engine(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < snaps; ++s) {
        Vector w(p1);
        for (int i = 0; i < p1; ++i) w(i) = 0.3 * i + 0.8 * gauss(eng);
        c.add(w);
    }
    ParamPartition part;
    for (int i = 0; i < p1; ++i) part.trainable.push_back(i);
    std::vector<ParamRange> reg = {{"theta", 0, p1, 1, p1}};
    GaussianPosterior post = swag_fit(c, part, reg, Vector());

    const int n = 100000;
    Matrix draws(n, p1);
    for (int i = 0; i < n; ++i)
        draws.row(i) =
            sample_trainable(post, draw_noise(post, static_cast<std::uint64_t>(i))).transpose();
    Vector mean = draws.colwise().mean();
    Matrix centered = draws.rowwise() - mean.transpose();
    Matrix emp = (centered.transpose() * centered) / n;
    Matrix want = testutil::dense_sigma(post);

    for (int i = 0; i < p1; ++i)
        for (int j = 0; j < p1; ++j) {
            // SE of a sample covariance entry ~ sqrt((S_ii S_jj + S_ij^2)/n).
            const double se = std::sqrt((want(i, i) * want(j, j) + want(i, j) * want(i, j)) / n);
            CHECK(std::abs(emp(i, j) - want(i, j)) < 5.0 * se + 1e-12);
        }
    for (int i = 0; i < p1; ++i)
        CHECK(std::abs(mean(i) - post.mu(i)) < 5.0 * std::sqrt(want(i, i) / n));
}

TEST_CASE("moped_from_dnn: sigma floors, head prior, and mean copy") {
    Model m = build_mlp(2, {4}, 2, false, Activation::Tanh);
    ParamVector p = init_params(m, 41);
    // Pin two non-head coordinates to decided values.
    const ParamRange& l1 = p.range("layer1.weight");
    p.values[static_cast<size_t>(l1.start)] = 0.4;
    p.values[static_cast<size_t>(l1.start + 1)] = 0.0;
    ParamPartition part = partition_params(m, PartitionPolicy::All);
    const double delta = 0.05, alpha = 1e-4;
    GaussianPosterior post = moped_from_dnn(m, p, part, delta, alpha);

    CHECK(post.K() == 0);
    CHECK(post.p1() == m.param_count());
    Vector sig = post.sigma();

    const ParamRange& hw = p.range("head.weight");
    const ParamRange& hb = p.range("head.bias");
    auto is_head = [&](int idx) {
        return (idx >= hw.start && idx < hw.start + hw.size) ||
               (idx >= hb.start && idx < hb.start + hb.size);
    };
    for (int i = 0; i < post.p1(); ++i) {
        const int idx = post.partition.trainable[static_cast<size_t>(i)];
        if (is_head(idx)) {
            CHECK(post.mu(i) == 0.0);
            CHECK(sig(i) == doctest::Approx(std::sqrt(alpha)).epsilon(1e-12)); // 0.01
        } else {
            CHECK(post.mu(i) == p.values[static_cast<size_t>(idx)]);
            const double expect = std::max(delta * std::abs(post.mu(i)), 1e-6);
            CHECK(sig(i) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    // The two pinned coordinates hit the decided formulas exactly.
    CHECK(sig(0) == doctest::Approx(0.02));
    CHECK(sig(1) == doctest::Approx(1e-6));
    // The conversion is its own KL anchor.
    CHECK((post.prior_mu - post.mu).cwiseAbs().maxCoeff() == 0.0);
    CHECK((post.prior_sigma - sig).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kl_diag: zero at the prior, 0.5 for a unit mean shift") {
    GaussianPosterior post = random_posterior(3, 0, 55);
    CHECK(kl_diag(post) == 0.0); // random_posterior anchors the prior at itself

    GaussianPosterior shifted = random_posterior(1, 0, 56);
    shifted.log_sigma(0) = 0.0;
    shifted.prior_sigma(0) = 1.0;
    shifted.prior_mu(0) = shifted.mu(0) - 1.0; // KL(N(mu,1) || N(mu-1,1)) = 0.5
    CHECK(kl_diag(shifted) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("elbo_loss: beta = 0 reduces to the plain NLL; beta scales the KL shift") {
    Model m = build_mlp(2, {4}, 2, false, Activation::Tanh);
    ParamVector p = init_params(m, 71);
    ParamPartition part = partition_params(m, PartitionPolicy::All);
    GaussianPosterior post = moped_from_dnn(m, p, part, 0.05, 1e-4);
    Dataset d = testutil::random_dataset(8, 2, 2, 72);
    ParamVector w = sample(post, 5);

    CHECK(elbo_loss(m, post, d, w, 0.0) == doctest::Approx(nll_loss(m, w, d, 0.0)).epsilon(1e-15));

    post.mu(0) += 1.0; // move one coordinate off its own prior
    const double kl = kl_diag(post);
    CHECK(kl > 0.0);
    const double beta = 0.3;
    CHECK(elbo_loss(m, post, d, w, beta) ==
          doctest::Approx(nll_loss(m, w, d, 0.0) + beta * kl).epsilon(1e-12));
}

TEST_CASE("kl_diag_grad: matches finite differences of beta * kl_diag") {
    GaussianPosterior post = random_posterior(5, 2, 81);
    post.prior_mu = post.mu * 0.5;
    post.prior_sigma = post.sigma() * 1.4;
    const double beta = 0.7;
    ThetaGroups g = kl_diag_grad(post, beta);
    CHECK(g.lowrank.cwiseAbs().maxCoeff() == 0.0);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
        GaussianPosterior plus = post, minus = post;
        plus.mu(i) += h;
        minus.mu(i) -= h;
        const double d_mu = beta * (kl_diag(plus) - kl_diag(minus)) / (2.0 * h);
        CHECK(testutil::rel_err(g.mu(i), d_mu) < 1e-6);
        GaussianPosterior p2 = post, m2 = post;
        p2.log_sigma(i) += h;
        m2.log_sigma(i) -= h;
        const double d_ls = beta * (kl_diag(p2) - kl_diag(m2)) / (2.0 * h);
        CHECK(testutil::rel_err(g.log_sigma(i), d_ls) < 1e-6);
    }
}

TEST_CASE("posterior validate rejects shape mismatches") {
    GaussianPosterior post = random_posterior(4, 2, 91);
    CHECK_NOTHROW(post.validate());
    post.log_sigma.resize(3);
    CHECK_THROWS_AS(post.validate(), Error);
}

TEST_CASE("assemble: posterior sample lands trainable values on partition slots") {
    Model m = build_mlp(2, {4}, 2, true, Activation::Tanh);
    ParamVector p = init_params(m, 95);
    ParamPartition part = partition_params(m, PartitionPolicy::Head);
    GaussianPosterior post = moped_from_dnn(m, p, part, 0.05, 1e-4);
    ParamVector w = sample(post, 7);
    // Frozen coordinates keep the original values bitwise.
    for (int idx : part.frozen)
        CHECK(w.values[static_cast<size_t>(idx)] == p.values[static_cast<size_t>(idx)]);
    CHECK(w.registry.size() == m.registry.size());
}
