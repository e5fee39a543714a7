#include "sabma/bma.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sabma {

Matrix softmax_rows(const Matrix& logits) {
    Vector rowmax = logits.rowwise().maxCoeff();
    Matrix e = (logits.colwise() - rowmax).array().exp();
    Vector sums = e.rowwise().sum();
    return e.array().colwise() / sums.array();
}

Matrix bma_predict(const Model& model, const std::vector<ParamVector>& samples, const Matrix& X) {
    if (samples.empty()) fail_config("bma_predict: no samples");
    Matrix acc = softmax_rows(predict(model, samples[0], X));
    for (size_t i = 1; i < samples.size(); ++i)
        acc += softmax_rows(predict(model, samples[i], X));
    return acc / static_cast<double>(samples.size());
}

Metrics metrics(const Matrix& probs, const std::vector<int>& labels) {
    const int n = static_cast<int>(probs.rows());
    if (n < 1) fail_config("metrics: empty probability matrix");
    if (static_cast<int>(labels.size()) != n) fail_config("metrics: label count mismatch");

    constexpr int BINS = 15;
    double bin_conf[BINS] = {};
    double bin_acc[BINS] = {};
    int bin_n[BINS] = {};

    Metrics out;
    int correct = 0;
    double nll = 0.0;
    for (int i = 0; i < n; ++i) {
        int pred = 0;
        double conf = probs(i, 0);
        for (int c = 1; c < probs.cols(); ++c)
            if (probs(i, c) > conf) { // strict: ties keep the lowest class index
                conf = probs(i, c);
                pred = c;
            }
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= probs.cols()) fail_config("metrics: label out of range");
        const bool hit = pred == y;
        correct += hit ? 1 : 0;
        nll -= std::log(std::max(probs(i, y), 1e-12));

        int b = static_cast<int>(std::ceil(conf * BINS)) - 1;
        b = std::clamp(b, 0, BINS - 1);
        bin_conf[b] += conf;
        bin_acc[b] += hit ? 1.0 : 0.0;
        bin_n[b] += 1;
    }
    out.acc = static_cast<double>(correct) / n;
    out.nll = nll / n;
    double ece = 0.0;
    for (int b = 0; b < BINS; ++b)
        if (bin_n[b] > 0)
            ece += (static_cast<double>(bin_n[b]) / n) *
                   std::abs(bin_acc[b] / bin_n[b] - bin_conf[b] / bin_n[b]);
    out.ece = ece;
    return out;
}

BmaOrder parse_bma_order(const std::string& s) {
    if (s == "flat") return BmaOrder::Flat;
    if (s == "sharp") return BmaOrder::Sharp;
    if (s == "random") return BmaOrder::Random;
    if (s == "given") return BmaOrder::Given;
    fail_config("unknown bma order '" + s + "'");
}

BmaReport ordered_bma(const Model& model, const std::vector<ParamVector>& samples,
                      const std::vector<double>& lambda1, BmaOrder order, const Matrix& X,
                      const std::vector<int>& labels, std::uint64_t seed) {
    const int M = static_cast<int>(samples.size());
    if (M < 1) fail_config("ordered_bma: no samples");
    if ((order == BmaOrder::Flat || order == BmaOrder::Sharp) &&
        static_cast<int>(lambda1.size()) != M)
        fail_config("ordered_bma: lambda1 list must match sample count");

    BmaReport report;
    report.M = M;
    report.lambda1 = lambda1;
    std::vector<int> idx(static_cast<size_t>(M));
    std::iota(idx.begin(), idx.end(), 0);
    switch (order) {
        case BmaOrder::Flat:
            report.ordering = "flat";
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return lambda1[static_cast<size_t>(a)] < lambda1[static_cast<size_t>(b)];
            });
            break;
        case BmaOrder::Sharp:
            report.ordering = "sharp";
            std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
                return lambda1[static_cast<size_t>(a)] > lambda1[static_cast<size_t>(b)];
            });
            break;
        case BmaOrder::Random: {
            report.ordering = "random";
            auto eng = rng::engine(seed);
            std::shuffle(idx.begin(), idx.end(), eng);
            break;
        }
        case BmaOrder::Given:
            report.ordering = "given";
            break;
    }
    report.order_indices = idx;

    std::vector<Matrix> probs;
    probs.reserve(static_cast<size_t>(M));
    for (const ParamVector& w : samples) probs.push_back(softmax_rows(predict(model, w, X)));

    // prefix averages accumulate in original sample-index order so that the
    // k = M average is bit-identical no matter the ordering
    for (int k = 1; k <= M; ++k) {
        std::vector<int> chosen(idx.begin(), idx.begin() + k);
        std::sort(chosen.begin(), chosen.end());
        Matrix acc = probs[static_cast<size_t>(chosen[0])];
        for (int j = 1; j < k; ++j) acc += probs[static_cast<size_t>(chosen[static_cast<size_t>(j)])];
        acc /= static_cast<double>(k);
        report.prefix.push_back({k, metrics(acc, labels)});
    }
    report.final_metrics = report.prefix.back().m;
    return report;
}

} // namespace sabma
