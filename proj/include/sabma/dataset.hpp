#pragma once

#include "sabma/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sabma {

struct Dataset {
    Matrix X;                // n x d
    std::vector<int> labels; // n, values in [0, classes)
    int classes = 0;

    int size() const { return static_cast<int>(X.rows()); }
    int dim() const { return static_cast<int>(X.cols()); }
};

enum class DataKind { TwoMoons, Spirals, Blobs };

DataKind parse_data_kind(const std::string& s); // throws Config on unknown kind

// Synthetic 2-D (blobs honor `dim` >= 2 by zero-padding extra features with
// noise) classification sets, fully determined by the seed.
Dataset gen_dataset(DataKind kind, int n_per_class, double noise, std::uint64_t seed,
                    int classes = 2, int dim = 2);

// CSV with a header row `f0,...,f{d-1},label`; labels must be contiguous
// integers starting at 0. Errors name the offending line number.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& data, const std::string& path);

// Covariate shift: additive Gaussian noise on the inputs, scaled per feature by
// 0.1 * severity * train-std of that feature. Severity in [1, 5].
Dataset corrupt(const Dataset& data, int severity, std::uint64_t seed,
                const Vector& feature_std);
double severity_scale(int severity);
Vector feature_std(const Dataset& data);

} // namespace sabma
