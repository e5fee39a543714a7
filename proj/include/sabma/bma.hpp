#pragma once

#include "sabma/models.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sabma {

Matrix softmax_rows(const Matrix& logits);

// Equal-weight posterior average of softmax probabilities.
Matrix bma_predict(const Model& model, const std::vector<ParamVector>& samples, const Matrix& X);

struct Metrics {
    double acc = 0.0;
    double ece = 0.0;
    double nll = 0.0;
};

// ACC (argmax, ties -> lowest class index), ECE (15 equal-width confidence
// bins, right-closed: bin = ceil(conf*15)-1 clamped to [0,14]), NLL with the
// predicted probability floored at 1e-12.
Metrics metrics(const Matrix& probs, const std::vector<int>& labels);

enum class BmaOrder { Flat, Sharp, Random, Given };
BmaOrder parse_bma_order(const std::string& s);

struct PrefixMetrics {
    int k = 0;
    Metrics m;
};

struct BmaReport {
    int M = 0;
    std::string ordering;
    std::vector<int> order_indices;   // permutation of [0, M)
    std::vector<double> lambda1;      // per sample, original order (empty if unused)
    std::vector<PrefixMetrics> prefix; // k = 1..M
    Metrics final_metrics;             // k = M
};

// Prefix-averaged BMA under an ordering of the samples. "flat" sorts by
// ascending lambda1 (ties by original index), "sharp" descending, "random"
// shuffles with `seed`, "given" keeps input order. Prefix averages sum the
// selected per-sample probability matrices in original sample order, so the
// k = M entry is identical bits for every ordering.
BmaReport ordered_bma(const Model& model, const std::vector<ParamVector>& samples,
                      const std::vector<double>& lambda1, BmaOrder order, const Matrix& X,
                      const std::vector<int>& labels, std::uint64_t seed = 0);

} // namespace sabma
