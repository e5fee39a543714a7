#include "doctest.h"
#include "helpers.hpp"

#include "sabma/error.hpp"
#include "sabma/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace sabma;

TEST_CASE("build_mlp: parameter counts and registry names") {
    Model m = build_mlp(2, {8}, 2, true, Activation::Tanh);
    // 2*8 + 8 (layer) + 8 + 8 (norm scale/shift) + 8*2 + 2 (head)
    CHECK(m.param_count() == 58);
    std::set<std::string> names;
    for (const auto& r : m.registry) names.insert(r.name);
    CHECK(names.count("layer1.weight") == 1);
    CHECK(names.count("norm1.scale") == 1);
    CHECK(names.count("norm1.shift") == 1);
    CHECK(names.count("head.weight") == 1);
    CHECK(names.count("head.bias") == 1);

    Model logreg = build_mlp(2, {}, 2, false);
    CHECK(logreg.param_count() == 6);

    Model deep = build_mlp(4, {16, 16}, 3, true);
    std::set<std::string> dn;
    for (const auto& r : deep.registry) dn.insert(r.name);
    CHECK(dn.count("norm1.scale") == 1);
    CHECK(dn.count("norm2.scale") == 1);
    CHECK(dn.count("layer2.weight") == 1);

    CHECK_THROWS_AS(build_mlp(2, {4}, 1, false), Error); // classes < 2
}

TEST_CASE("build_mlp: registry ranges tile the flat vector") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        Model m = testutil::random_model(seed);
        int expect_start = 0;
        for (const auto& r : m.registry) {
            CHECK(r.start == expect_start);
            CHECK(r.size == r.rows * r.cols);
            expect_start += r.size;
        }
        CHECK(expect_start == m.param_count());
    }
}

TEST_CASE("init_params: Glorot weights, unit scales, zero biases, deterministic") {
    Model m = build_mlp(3, {8}, 2, true, Activation::Relu);
    ParamVector p = init_params(m, 77);
    ParamVector q = init_params(m, 77);
    CHECK(p.values == q.values); // bitwise reproducible

    for (const auto& r : m.registry) {
        const bool weight = r.name.find(".weight") != std::string::npos;
        const bool scale = r.name.find(".scale") != std::string::npos;
        const double limit = std::sqrt(6.0 / (r.rows + r.cols));
        for (int i = 0; i < r.size; ++i) {
            const double v = p.values[static_cast<size_t>(r.start + i)];
            if (weight) {
                CHECK(std::abs(v) <= limit);
            } else if (scale) {
                CHECK(v == 1.0);
            } else {
                CHECK(v == 0.0);
            }
        }
    }
    // Different seed moves the weights.
    ParamVector r2 = init_params(m, 78);
    CHECK(p.values != r2.values);
}

TEST_CASE("predict: zero weights give all-zero logits; logreg passes input through") {
    Model m = build_mlp(2, {5}, 3, false, Activation::Relu);
    ParamVector zeros;
    zeros.registry = m.registry;
    zeros.values.assign(static_cast<size_t>(m.param_count()), 0.0);
    Matrix X(4, 2);
    X << 1, 2, -3, 4, 0, 0, 5, -5;
    Matrix L = predict(m, zeros, X);
    CHECK(L.rows() == 4);
    CHECK(L.cols() == 3);
    CHECK(L.cwiseAbs().maxCoeff() == 0.0);

    // Identity head on a no-hidden model reproduces the input as logits.
    Model lr = build_mlp(2, {}, 2, false);
    ParamVector w;
    w.registry = lr.registry;
    w.values.assign(6, 0.0);
    const ParamRange& hw = w.range("head.weight"); // 2 x 2 row-major
    w.values[static_cast<size_t>(hw.start + 0)] = 1.0;
    w.values[static_cast<size_t>(hw.start + 3)] = 1.0;
    Matrix L2 = predict(lr, w, X);
    CHECK((L2 - X).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("predict: softmax of logits sums to one per row") {
    Model m = testutil::random_model(3);
    ParamVector p = testutil::random_params(m, 4);
    Dataset d = testutil::random_dataset(9, m.input_dim, m.classes, 5);
    Matrix L = predict(m, p, d.X);
    for (int i = 0; i < L.rows(); ++i) {
        double denom = L.row(i).array().exp().sum();
        CHECK(std::abs((L.row(i).array().exp() / denom).sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("nll_loss: frozen values and scalar-oracle agreement") {
    Model m = build_mlp(2, {}, 2, false);
    ParamVector zeros;
    zeros.registry = m.registry;
    zeros.values.assign(6, 0.0);
    Dataset d;
    d.classes = 2;
    d.X = Matrix::Zero(4, 2);
    d.labels = {0, 1, 0, 1};
    CHECK(nll_loss(m, zeros, d, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Near-one-hot logits at scale 50 drive the loss to ~0.
    ParamVector sharp = zeros;
    const ParamRange& hb = sharp.range("head.bias");
    sharp.values[static_cast<size_t>(hb.start)] = 50.0; // class 0 logit
    Dataset d0 = d;
    d0.labels = {0, 0, 0, 0};
    CHECK(nll_loss(m, sharp, d0, 0.0) < 1e-10);

    // Random case against a hand-rolled scalar computation.
    Model rm = testutil::random_model(21);
    ParamVector rp = testutil::random_params(rm, 22);
    Dataset rd = testutil::random_dataset(6, rm.input_dim, rm.classes, 23);
    const double wd = 0.037;
    Matrix logits = predict(rm, rp, rd.X);
    double oracle = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
        const double mx = logits.row(i).maxCoeff();
        double lse = 0.0;
        for (int c = 0; c < logits.cols(); ++c) lse += std::exp(logits(i, c) - mx);
        lse = mx + std::log(lse);
        oracle -= logits(i, rd.labels[static_cast<size_t>(i)]) - lse;
    }
    oracle /= logits.rows();
    double sq = 0.0;
    for (double v : rp.values) sq += v * v;
    oracle += 0.5 * wd * sq;
    CHECK(testutil::rel_err(nll_loss(rm, rp, rd, wd), oracle) < 1e-12);
}

TEST_CASE("nll_grad: weight-decay term is exactly wd * theta") {
    Model m = testutil::random_model(31);
    ParamVector p = testutil::random_params(m, 32);
    Dataset d = testutil::random_dataset(5, m.input_dim, m.classes, 33);
    ParamVector g0 = nll_grad(m, p, d, 0.0);
    ParamVector g1 = nll_grad(m, p, d, 0.25);
    for (int i = 0; i < p.size(); ++i)
        CHECK(std::abs((g1.values[static_cast<size_t>(i)] - g0.values[static_cast<size_t>(i)]) -
                       0.25 * p.values[static_cast<size_t>(i)]) < 1e-12);
}

TEST_CASE("partition_params: policy slices") {
    Model m = build_mlp(2, {8}, 2, true, Activation::Tanh); // p = 58
    ParamPartition all = partition_params(m, PartitionPolicy::All);
    CHECK(all.p1() == 58);
    CHECK(all.p2() == 0);

    ParamPartition head = partition_params(m, PartitionPolicy::Head);
    CHECK(head.p1() == 18); // 8*2 + 2
    CHECK(head.p2() == 40);

    ParamPartition nh = partition_params(m, PartitionPolicy::NormHead);
    CHECK(nh.p1() == 34); // 8 + 8 + 18
    CHECK(nh.p2() == 24);

    // Trainable/frozen are disjoint, sorted, and cover the vector.
    std::vector<int> merged = nh.trainable;
    merged.insert(merged.end(), nh.frozen.begin(), nh.frozen.end());
    std::sort(merged.begin(), merged.end());
    for (int i = 0; i < 58; ++i) CHECK(merged[static_cast<size_t>(i)] == i);
    CHECK(std::is_sorted(nh.trainable.begin(), nh.trainable.end()));
    CHECK(std::is_sorted(nh.frozen.begin(), nh.frozen.end()));

    ParamPartition nh2 = partition_params(build_mlp(2, {4}, 2, false), PartitionPolicy::NormHead);
    CHECK(nh2.p1() == 10); // no norm params: reduces to the head slice
}

TEST_CASE("parse_partition_policy and parse_activation reject unknown names") {
    CHECK(parse_partition_policy("norm_head") == PartitionPolicy::NormHead);
    CHECK(parse_partition_policy("head") == PartitionPolicy::Head);
    CHECK(parse_partition_policy("all") == PartitionPolicy::All);
    CHECK_THROWS_AS(parse_partition_policy("half"), Error);
    CHECK(parse_activation("tanh") == Activation::Tanh);
    CHECK(parse_activation("relu") == Activation::Relu);
    CHECK_THROWS_AS(parse_activation("gelu"), Error);
}

TEST_CASE("restrict_to / assemble round-trip the flat vector") {
    Model m = build_mlp(3, {6}, 3, true, Activation::Tanh);
    ParamVector p = testutil::random_params(m, 51);
    ParamPartition part = partition_params(m, PartitionPolicy::NormHead);
    Vector tr = restrict_to(p, part);
    CHECK(tr.size() == part.p1());

    Vector frozen(part.p2());
    for (int i = 0; i < part.p2(); ++i)
        frozen(i) = p.values[static_cast<size_t>(part.frozen[static_cast<size_t>(i)])];
    ParamVector back = assemble(m, part, tr, frozen);
    CHECK(back.values == p.values);
    CHECK(back.registry.size() == p.registry.size());

    // Changing a trainable slot lands on the right coordinate.
    Vector tr2 = tr;
    tr2(0) += 1.0;
    ParamVector moved = assemble(m, part, tr2, frozen);
    CHECK(moved.values[static_cast<size_t>(part.trainable[0])] ==
          doctest::Approx(p.values[static_cast<size_t>(part.trainable[0])] + 1.0));
}

TEST_CASE("norm model: forward is identical in any call order (no running stats)") {
    Model m = build_mlp(2, {8}, 2, true, Activation::Relu);
    ParamVector p = testutil::random_params(m, 61);
    Dataset d = testutil::random_dataset(10, 2, 2, 62);
    Matrix a = predict(m, p, d.X);
    // Interleave another batch; the first batch must still map identically.
    Dataset other = testutil::random_dataset(4, 2, 2, 63);
    predict(m, p, other.X);
    Matrix b = predict(m, p, d.X);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}
