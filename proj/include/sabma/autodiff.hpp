#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sabma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A named, contiguous slice of the flat parameter vector. Matrix-valued
// parameters are stored row-major inside the slice: element (r, c) lives at
// start + r*cols + c.
struct ParamRange {
    std::string name;
    int start = 0;
    int size = 0;
    int rows = 0;
    int cols = 0;
};

// Flat f64 parameter vector plus its registry. All optimizer state, posterior
// means etc. share this layout so indices mean the same thing everywhere.
struct ParamVector {
    std::vector<double> values;
    std::vector<ParamRange> registry;

    int size() const { return static_cast<int>(values.size()); }
    const ParamRange& range(std::string_view name) const; // throws Config if absent
    const ParamRange* find(std::string_view name) const;  // nullptr if absent
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        matrix(const ParamRange& r) const;
    bool all_finite() const;

    static ParamVector zeros_like(const ParamVector& other);
};

namespace autodiff {

enum class Op {
    Input,        // data placeholder, bound at forward time
    Param,        // named parameter leaf, bound through the registry
    MatMul,       // a * b
    Add,          // a + b, b may be a 1 x cols row (bias broadcast over rows)
    Mul,          // elementwise a .* b (same shape)
    Relu,         // max(x, 0), subgradient 0 at 0
    Tanh,
    Standardize,  // per-row: (x - mean)/(std + eps) over the feature axis
    ScaleShift,   // x .* scale + shift, scale/shift are 1 x cols rows
    LogSoftmax,   // row-wise log softmax
    NllMean,      // scalar: -mean_i logprob[i, y_i]
};

const char* op_name(Op op);

struct Node {
    Op op;
    int a = -1, b = -1, c = -1; // input node ids
    std::string param_name;     // Param only
    double eps = 0.0;           // Standardize only
    Matrix value;
    Matrix grad;
    Matrix aux; // op-specific forward cache (Standardize: mean/std rows)
};

// Static computation graph over f64 matrices. Build once, then bind parameters
// and inputs per forward() call; backward() walks the same graph in reverse.
class Tape {
public:
    int input();
    int param(std::string name);
    int matmul(int a, int b);
    int add(int a, int b);
    int mul(int a, int b);
    int relu(int x);
    int tanh(int x);
    int standardize(int x, double eps = 1e-5);
    int scale_shift(int x, int scale, int shift);
    int log_softmax(int x);
    int nll_mean(int logprobs);

    void set_labels(std::vector<int> labels) { labels_ = std::move(labels); }
    const std::vector<int>& labels() const { return labels_; }

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const Matrix& value(int id) const { return nodes_.at(id).value; }

    // Evaluates every node; returns the value of the last node added. Throws a
    // Config error naming the offending node on any shape mismatch, and a
    // Numeric error if a non-finite value appears.
    const Matrix& forward(const ParamVector& params, const Matrix& X);

    // Reverse sweep from the last node, which must be scalar (1 x 1). One
    // backward per forward yields gradients for every Param leaf; leaves the
    // forward values intact. Returns the gradient in registry layout (zeros
    // for parameters the graph does not touch).
    ParamVector backward();

private:
    std::vector<Node> nodes_;
    std::vector<int> labels_;
    std::vector<ParamRange> bound_registry_;
    int add_node(Node n);
    [[noreturn]] void node_fail(int id, const std::string& what) const;
};

// Convenience free-function spellings.
inline const Matrix& forward(Tape& tape, const ParamVector& params, const Matrix& X) {
    return tape.forward(params, X);
}
inline ParamVector backward(Tape& tape) { return tape.backward(); }

// Scalar loss with an analytic gradient; the handle hvp() and the oracles use.
struct LossFn {
    std::function<double(const ParamVector&)> value;
    std::function<ParamVector(const ParamVector&)> grad;
};

// Central finite-difference gradient of `value` with per-coordinate step
// h * (1 + |theta_i|). Independent of the tape; used as the gradient oracle.
std::vector<double> finite_diff_grad(const std::function<double(const ParamVector&)>& value,
                                     const ParamVector& params, double h);

// Hessian-vector product via central differences of the analytic gradient:
//   H v ~= (grad(theta + h u) - grad(theta - h u)) * ||v|| / (2 h),  u = v/||v||,
// with h = 1e-4 * (1 + ||theta||_inf). Throws Numeric (naming the first bad
// coordinate) if the result is not finite, Config if v == 0.
std::vector<double> hvp(const LossFn& f, const ParamVector& params, const std::vector<double>& v);

} // namespace autodiff
} // namespace sabma
