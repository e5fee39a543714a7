#include "sabma/models.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <algorithm>
#include <cmath>

namespace sabma {

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    fail_config("unknown activation '" + s + "'");
}

int Model::param_count() const {
    return registry.empty() ? 0 : registry.back().start + registry.back().size;
}

Model build_mlp(int input_dim, std::vector<int> hidden, int classes, bool norm,
                Activation activation) {
    if (input_dim < 1) fail_config("build_mlp: input_dim must be >= 1");
    if (classes < 2) fail_config("build_mlp: classes must be >= 2");
    for (int h : hidden)
        if (h < 1) fail_config("build_mlp: hidden widths must be >= 1");

    Model m;
    m.input_dim = input_dim;
    m.hidden = std::move(hidden);
    m.classes = classes;
    m.norm = norm;
    m.activation = activation;

    int offset = 0;
    auto push = [&](std::string name, int rows, int cols) {
        m.registry.push_back({std::move(name), offset, rows * cols, rows, cols});
        offset += rows * cols;
    };
    int in = input_dim;
    for (size_t k = 0; k < m.hidden.size(); ++k) {
        const int out = m.hidden[k];
        const std::string idx = std::to_string(k + 1);
        push("layer" + idx + ".weight", in, out);
        push("layer" + idx + ".bias", 1, out);
        if (norm) {
            push("norm" + idx + ".scale", 1, out);
            push("norm" + idx + ".shift", 1, out);
        }
        in = out;
    }
    push("head.weight", in, classes);
    push("head.bias", 1, classes);
    return m;
}

autodiff::Tape logits_tape(const Model& model) {
    autodiff::Tape tape;
    int x = tape.input();
    for (size_t k = 0; k < model.hidden.size(); ++k) {
        const std::string idx = std::to_string(k + 1);
        int w = tape.param("layer" + idx + ".weight");
        int b = tape.param("layer" + idx + ".bias");
        x = tape.add(tape.matmul(x, w), b);
        if (model.norm) {
            int scale = tape.param("norm" + idx + ".scale");
            int shift = tape.param("norm" + idx + ".shift");
            x = tape.scale_shift(tape.standardize(x), scale, shift);
        }
        x = model.activation == Activation::Relu ? tape.relu(x) : tape.tanh(x);
    }
    int w = tape.param("head.weight");
    int b = tape.param("head.bias");
    tape.add(tape.matmul(x, w), b);
    return tape;
}

autodiff::Tape loss_tape(const Model& model, const std::vector<int>& labels) {
    autodiff::Tape tape;
    int x = tape.input();
    for (size_t k = 0; k < model.hidden.size(); ++k) {
        const std::string idx = std::to_string(k + 1);
        int w = tape.param("layer" + idx + ".weight");
        int b = tape.param("layer" + idx + ".bias");
        x = tape.add(tape.matmul(x, w), b);
        if (model.norm) {
            int scale = tape.param("norm" + idx + ".scale");
            int shift = tape.param("norm" + idx + ".shift");
            x = tape.scale_shift(tape.standardize(x), scale, shift);
        }
        x = model.activation == Activation::Relu ? tape.relu(x) : tape.tanh(x);
    }
    int w = tape.param("head.weight");
    int b = tape.param("head.bias");
    int logits = tape.add(tape.matmul(x, w), b);
    tape.nll_mean(tape.log_softmax(logits));
    tape.set_labels(labels);
    return tape;
}

ParamVector init_params(const Model& model, std::uint64_t seed) {
    ParamVector p;
    p.registry = model.registry;
    p.values.assign(static_cast<size_t>(model.param_count()), 0.0);
    auto eng = rng::engine(seed);
    for (const ParamRange& r : model.registry) {
        if (r.name.ends_with(".weight")) {
            const double a = std::sqrt(6.0 / (r.rows + r.cols));
            std::uniform_real_distribution<double> uni(-a, a);
            for (int i = 0; i < r.size; ++i)
                p.values[static_cast<size_t>(r.start + i)] = uni(eng);
        } else if (r.name.ends_with(".scale")) {
            for (int i = 0; i < r.size; ++i)
                p.values[static_cast<size_t>(r.start + i)] = 1.0;
        }
        // biases and shifts stay zero
    }
    return p;
}

Matrix predict(const Model& model, const ParamVector& params, const Matrix& X) {
    if (X.cols() != model.input_dim) fail_config("predict: input width does not match model");
    autodiff::Tape tape = logits_tape(model);
    return tape.forward(params, X);
}

double nll_loss(const Model& model, const ParamVector& params, const Dataset& batch,
                double weight_decay) {
    if (batch.size() < 1) fail_config("nll_loss: empty batch");
    autodiff::Tape tape = loss_tape(model, batch.labels);
    double loss = tape.forward(params, batch.X)(0, 0);
    if (weight_decay != 0.0) {
        double sq = 0.0;
        for (double v : params.values) sq += v * v;
        loss += 0.5 * weight_decay * sq;
    }
    return loss;
}

ParamVector nll_grad(const Model& model, const ParamVector& params, const Dataset& batch,
                     double weight_decay) {
    if (batch.size() < 1) fail_config("nll_grad: empty batch");
    autodiff::Tape tape = loss_tape(model, batch.labels);
    tape.forward(params, batch.X);
    ParamVector g = tape.backward();
    if (weight_decay != 0.0)
        for (size_t i = 0; i < g.values.size(); ++i)
            g.values[i] += weight_decay * params.values[i];
    return g;
}

autodiff::LossFn make_loss(const Model& model, const Dataset& batch, double weight_decay) {
    autodiff::LossFn f;
    f.value = [&model, &batch, weight_decay](const ParamVector& p) {
        return nll_loss(model, p, batch, weight_decay);
    };
    f.grad = [&model, &batch, weight_decay](const ParamVector& p) {
        return nll_grad(model, p, batch, weight_decay);
    };
    return f;
}

PartitionPolicy parse_partition_policy(const std::string& s) {
    if (s == "all") return PartitionPolicy::All;
    if (s == "head") return PartitionPolicy::Head;
    if (s == "norm_head") return PartitionPolicy::NormHead;
    fail_config("unknown partition policy '" + s + "'");
}

ParamPartition partition_params(const Model& model, PartitionPolicy policy) {
    ParamPartition part;
    for (const ParamRange& r : model.registry) {
        bool trainable = false;
        switch (policy) {
            case PartitionPolicy::All: trainable = true; break;
            case PartitionPolicy::Head: trainable = r.name.starts_with("head."); break;
            case PartitionPolicy::NormHead:
                trainable = r.name.starts_with("head.") || r.name.starts_with("norm");
                break;
        }
        auto& dst = trainable ? part.trainable : part.frozen;
        for (int i = 0; i < r.size; ++i) dst.push_back(r.start + i);
    }
    // registry order is ascending already, but keep the contract explicit
    std::sort(part.trainable.begin(), part.trainable.end());
    std::sort(part.frozen.begin(), part.frozen.end());
    if (part.trainable.empty()) fail_config("partition has no trainable parameters");
    return part;
}

Vector restrict_to(const ParamVector& params, const ParamPartition& part) {
    Vector out(part.p1());
    for (int i = 0; i < part.p1(); ++i)
        out(i) = params.values[static_cast<size_t>(part.trainable[static_cast<size_t>(i)])];
    return out;
}

ParamVector assemble(const Model& model, const ParamPartition& part,
                     const Vector& trainable_values, const Vector& frozen_values) {
    if (trainable_values.size() != part.p1() || frozen_values.size() != part.p2())
        fail_config("assemble: partition sizes do not match value vectors");
    if (part.p1() + part.p2() != model.param_count())
        fail_config("assemble: partition does not cover the model");
    ParamVector out;
    out.registry = model.registry;
    out.values.assign(static_cast<size_t>(model.param_count()), 0.0);
    for (int i = 0; i < part.p1(); ++i)
        out.values[static_cast<size_t>(part.trainable[static_cast<size_t>(i)])] = trainable_values(i);
    for (int i = 0; i < part.p2(); ++i)
        out.values[static_cast<size_t>(part.frozen[static_cast<size_t>(i)])] = frozen_values(i);
    return out;
}

} // namespace sabma
