#pragma once

#include "sabma/autodiff.hpp"
#include "sabma/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sabma {

enum class Activation { Relu, Tanh };
Activation parse_activation(const std::string& s);

// MLP classifier description plus its parameter registry. Layer k (1-based)
// owns "layerk.weight" (in x out) and "layerk.bias" (1 x out); with
// normalization also "normk.scale"/"normk.shift" (1 x out, applied after a
// per-sample feature standardization). The output layer is "head.weight"/
// "head.bias". Normalization uses no running statistics, so train and eval
// forward passes are identical.
struct Model {
    int input_dim = 0;
    std::vector<int> hidden;
    int classes = 0;
    bool norm = false;
    Activation activation = Activation::Relu;
    std::vector<ParamRange> registry;

    int param_count() const;
};

Model build_mlp(int input_dim, std::vector<int> hidden, int classes, bool norm,
                Activation activation = Activation::Relu);

// Graphs. logits_tape ends at the logits; loss_tape appends log-softmax + mean
// NLL and needs labels bound.
autodiff::Tape logits_tape(const Model& model);
autodiff::Tape loss_tape(const Model& model, const std::vector<int>& labels);

// Glorot-uniform weights (half-width sqrt(6/(fan_in+fan_out))), zero biases and
// shifts, unit scales; fully determined by the seed.
ParamVector init_params(const Model& model, std::uint64_t seed);

Matrix predict(const Model& model, const ParamVector& params, const Matrix& X);

// Mean NLL over the batch plus (weight_decay/2)*||theta||^2 over all
// parameters; nll_grad is its exact gradient.
double nll_loss(const Model& model, const ParamVector& params, const Dataset& batch,
                double weight_decay);
ParamVector nll_grad(const Model& model, const ParamVector& params, const Dataset& batch,
                     double weight_decay);
autodiff::LossFn make_loss(const Model& model, const Dataset& batch, double weight_decay);

// Disjoint, sorted index split of the flat parameter vector.
struct ParamPartition {
    std::vector<int> trainable;
    std::vector<int> frozen;

    int p1() const { return static_cast<int>(trainable.size()); }
    int p2() const { return static_cast<int>(frozen.size()); }
};

enum class PartitionPolicy { All, Head, NormHead };
PartitionPolicy parse_partition_policy(const std::string& s);

ParamPartition partition_params(const Model& model, PartitionPolicy policy);

// Gather/scatter between the full vector and the trainable subvector.
Vector restrict_to(const ParamVector& params, const ParamPartition& part);
ParamVector assemble(const Model& model, const ParamPartition& part,
                     const Vector& trainable_values, const Vector& frozen_values);

} // namespace sabma
