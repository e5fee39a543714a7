#include "sabma/autodiff.hpp"
#include "sabma/error.hpp"

#include <cmath>
#include <sstream>

namespace sabma {

const ParamRange* ParamVector::find(std::string_view name) const {
    for (const auto& r : registry)
        if (r.name == name) return &r;
    return nullptr;
}

const ParamRange& ParamVector::range(std::string_view name) const {
    const ParamRange* r = find(name);
    if (!r) fail_config("unknown parameter name '" + std::string(name) + "'");
    return *r;
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
ParamVector::matrix(const ParamRange& r) const {
    return {values.data() + r.start, r.rows, r.cols};
}

bool ParamVector::all_finite() const {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
    ParamVector out;
    out.values.assign(other.values.size(), 0.0);
    out.registry = other.registry;
    return out;
}

namespace autodiff {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Standardize: return "standardize";
        case Op::ScaleShift: return "scale_shift";
        case Op::LogSoftmax: return "log_softmax";
        case Op::NllMean: return "nll_mean";
    }
    return "?";
}

int Tape::add_node(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input() { return add_node({.op = Op::Input}); }

int Tape::param(std::string name) {
    Node n{.op = Op::Param};
    n.param_name = std::move(name);
    return add_node(std::move(n));
}

int Tape::matmul(int a, int b) { return add_node({.op = Op::MatMul, .a = a, .b = b}); }
int Tape::add(int a, int b) { return add_node({.op = Op::Add, .a = a, .b = b}); }
int Tape::mul(int a, int b) { return add_node({.op = Op::Mul, .a = a, .b = b}); }
int Tape::relu(int x) { return add_node({.op = Op::Relu, .a = x}); }
int Tape::tanh(int x) { return add_node({.op = Op::Tanh, .a = x}); }

int Tape::standardize(int x, double eps) {
    Node n{.op = Op::Standardize, .a = x};
    n.eps = eps;
    return add_node(std::move(n));
}

int Tape::scale_shift(int x, int scale, int shift) {
    return add_node({.op = Op::ScaleShift, .a = x, .b = scale, .c = shift});
}

int Tape::log_softmax(int x) { return add_node({.op = Op::LogSoftmax, .a = x}); }
int Tape::nll_mean(int logprobs) { return add_node({.op = Op::NllMean, .a = logprobs}); }

void Tape::node_fail(int id, const std::string& what) const {
    std::ostringstream os;
    os << "tape node " << id << " (" << op_name(nodes_[id].op) << "): " << what;
    fail_config(os.str());
}

const Matrix& Tape::forward(const ParamVector& params, const Matrix& X) {
    if (nodes_.empty()) fail_config("forward on empty tape");
    bound_registry_ = params.registry;
    for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
        Node& n = nodes_[id];
        switch (n.op) {
            case Op::Input:
                n.value = X;
                break;
            case Op::Param: {
                const ParamRange* r = params.find(n.param_name);
                if (!r) node_fail(id, "parameter '" + n.param_name + "' not in registry");
                if (r->size != r->rows * r->cols ||
                    r->start + r->size > params.size())
                    node_fail(id, "registry entry '" + n.param_name + "' is inconsistent");
                n.value = params.matrix(*r);
                break;
            }
            case Op::MatMul: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                if (A.cols() != B.rows()) {
                    std::ostringstream os;
                    os << "inner dimensions " << A.cols() << " vs " << B.rows();
                    node_fail(id, os.str());
                }
                n.value = A * B;
                break;
            }
            case Op::Add: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                if (A.rows() == B.rows() && A.cols() == B.cols()) {
                    n.value = A + B;
                } else if (B.rows() == 1 && B.cols() == A.cols()) {
                    n.value = A.rowwise() + B.row(0);
                } else {
                    std::ostringstream os;
                    os << "shapes " << A.rows() << "x" << A.cols() << " vs "
                       << B.rows() << "x" << B.cols();
                    node_fail(id, os.str());
                }
                break;
            }
            case Op::Mul: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& B = nodes_[n.b].value;
                if (A.rows() != B.rows() || A.cols() != B.cols()) {
                    std::ostringstream os;
                    os << "shapes " << A.rows() << "x" << A.cols() << " vs "
                       << B.rows() << "x" << B.cols();
                    node_fail(id, os.str());
                }
                n.value = A.cwiseProduct(B);
                break;
            }
            case Op::Relu:
                n.value = nodes_[n.a].value.cwiseMax(0.0);
                break;
            case Op::Tanh:
                n.value = nodes_[n.a].value.array().tanh();
                break;
            case Op::Standardize: {
                const Matrix& A = nodes_[n.a].value;
                if (A.cols() < 1) node_fail(id, "needs at least one feature");
                const double D = static_cast<double>(A.cols());
                Vector mean = A.rowwise().mean();
                Matrix centered = A.colwise() - mean;
                Vector sd = (centered.array().square().rowwise().sum() / D).sqrt();
                n.aux.resize(A.rows(), 2);
                n.aux.col(0) = mean;
                n.aux.col(1) = sd;
                n.value = centered.array().colwise() / (sd.array() + n.eps);
                break;
            }
            case Op::ScaleShift: {
                const Matrix& A = nodes_[n.a].value;
                const Matrix& S = nodes_[n.b].value;
                const Matrix& T = nodes_[n.c].value;
                if (S.rows() != 1 || T.rows() != 1 || S.cols() != A.cols() || T.cols() != A.cols()) {
                    std::ostringstream os;
                    os << "scale/shift must be 1x" << A.cols();
                    node_fail(id, os.str());
                }
                n.value = (A.array().rowwise() * S.row(0).array()).rowwise() + T.row(0).array();
                break;
            }
            case Op::LogSoftmax: {
                const Matrix& A = nodes_[n.a].value;
                Vector rowmax = A.rowwise().maxCoeff();
                Matrix shifted = A.colwise() - rowmax;
                Vector lse = shifted.array().exp().rowwise().sum().log();
                n.value = shifted.colwise() - lse;
                break;
            }
            case Op::NllMean: {
                const Matrix& LP = nodes_[n.a].value;
                if (static_cast<int>(labels_.size()) != LP.rows())
                    node_fail(id, "label count does not match batch rows");
                double s = 0.0;
                for (int i = 0; i < LP.rows(); ++i) {
                    int y = labels_[static_cast<size_t>(i)];
                    if (y < 0 || y >= LP.cols()) node_fail(id, "label out of range");
                    s -= LP(i, y);
                }
                n.value.resize(1, 1);
                n.value(0, 0) = s / static_cast<double>(LP.rows());
                break;
            }
        }
        if (!n.value.allFinite()) {
            std::ostringstream os;
            os << "non-finite value at tape node " << id << " (" << op_name(n.op) << ")";
            fail_numeric(os.str());
        }
    }
    return nodes_.back().value;
}

ParamVector Tape::backward() {
    if (nodes_.empty()) fail_config("backward on empty tape");
    const Node& root = nodes_.back();
    if (root.value.rows() != 1 || root.value.cols() != 1)
        fail_config("backward requires a scalar root node");

    for (Node& n : nodes_) {
        n.grad.resize(n.value.rows(), n.value.cols());
        n.grad.setZero();
    }
    nodes_.back().grad(0, 0) = 1.0;

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[id];
        const Matrix& g = n.grad;
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::MatMul:
                nodes_[n.a].grad.noalias() += g * nodes_[n.b].value.transpose();
                nodes_[n.b].grad.noalias() += nodes_[n.a].value.transpose() * g;
                break;
            case Op::Add: {
                nodes_[n.a].grad += g;
                Node& b = nodes_[n.b];
                if (b.value.rows() == g.rows()) {
                    b.grad += g;
                } else {
                    b.grad.row(0) += g.colwise().sum();
                }
                break;
            }
            case Op::Mul:
                nodes_[n.a].grad += g.cwiseProduct(nodes_[n.b].value);
                nodes_[n.b].grad += g.cwiseProduct(nodes_[n.a].value);
                break;
            case Op::Relu:
                nodes_[n.a].grad += g.cwiseProduct(
                    (nodes_[n.a].value.array() > 0.0).cast<double>().matrix());
                break;
            case Op::Tanh:
                nodes_[n.a].grad.array() += g.array() * (1.0 - n.value.array().square());
                break;
            case Op::Standardize: {
                // y = (x - m)/(s + eps) with s = population std over the row.
                // dX = c*(dY - mean(dY)) - (x - m) * <dY, x - m> / (D s (s+eps)^2),
                // c = 1/(s + eps); the s-term vanishes when s == 0 (x == m).
                const Matrix& X = nodes_[n.a].value;
                const double D = static_cast<double>(X.cols());
                Matrix dX(g.rows(), g.cols());
                for (int i = 0; i < X.rows(); ++i) {
                    double s = n.aux(i, 1);
                    double c = 1.0 / (s + n.eps);
                    double gmean = g.row(i).mean();
                    Eigen::RowVectorXd centered = X.row(i).array() - n.aux(i, 0);
                    dX.row(i) = c * (g.row(i).array() - gmean);
                    if (s > 0.0) {
                        double dot = g.row(i).dot(centered);
                        dX.row(i).array() -= centered.array() * (dot / (D * s * (s + n.eps) * (s + n.eps)));
                    }
                }
                nodes_[n.a].grad += dX;
                break;
            }
            case Op::ScaleShift: {
                const Matrix& X = nodes_[n.a].value;
                const Matrix& S = nodes_[n.b].value;
                nodes_[n.a].grad += (g.array().rowwise() * S.row(0).array()).matrix();
                nodes_[n.b].grad.row(0) += g.cwiseProduct(X).colwise().sum();
                nodes_[n.c].grad.row(0) += g.colwise().sum();
                break;
            }
            case Op::LogSoftmax: {
                // dX = dY - softmax(x) .* rowsum(dY)
                Matrix sm = n.value.array().exp();
                Vector rowsum = g.rowwise().sum();
                nodes_[n.a].grad += g - (sm.array().colwise() * rowsum.array()).matrix();
                break;
            }
            case Op::NllMean: {
                Node& a = nodes_[n.a];
                const double scale = g(0, 0) / static_cast<double>(a.value.rows());
                for (int i = 0; i < a.value.rows(); ++i)
                    a.grad(i, labels_[static_cast<size_t>(i)]) -= scale;
                break;
            }
        }
    }

    ParamVector out;
    out.registry = bound_registry_;
    out.values.assign(bound_registry_.empty() ? 0
                          : static_cast<size_t>(bound_registry_.back().start + bound_registry_.back().size),
                      0.0);
    for (const Node& n : nodes_) {
        if (n.op != Op::Param) continue;
        const ParamRange* r = nullptr;
        for (const auto& e : bound_registry_)
            if (e.name == n.param_name) { r = &e; break; }
        if (!r) continue;
        for (int i = 0; i < r->rows; ++i)
            for (int j = 0; j < r->cols; ++j)
                out.values[static_cast<size_t>(r->start + i * r->cols + j)] += n.grad(i, j);
    }
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double(const ParamVector&)>& value,
                                     const ParamVector& params, double h) {
    if (h <= 0.0) fail_config("finite_diff_grad: step must be positive");
    ParamVector p = params;
    std::vector<double> grad(p.values.size());
    for (size_t i = 0; i < p.values.size(); ++i) {
        const double orig = p.values[i];
        const double step = h * (1.0 + std::abs(orig));
        p.values[i] = orig + step;
        const double fp = value(p);
        p.values[i] = orig - step;
        const double fm = value(p);
        p.values[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    return grad;
}

std::vector<double> hvp(const LossFn& f, const ParamVector& params, const std::vector<double>& v) {
    if (v.size() != params.values.size())
        fail_config("hvp: direction length does not match parameter count");
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) fail_config("hvp: zero direction");

    double theta_inf = 0.0;
    for (double x : params.values) theta_inf = std::max(theta_inf, std::abs(x));
    const double h = 1e-4 * (1.0 + theta_inf);

    ParamVector p = params;
    for (size_t i = 0; i < v.size(); ++i) p.values[i] = params.values[i] + h * v[i] / norm;
    ParamVector gp = f.grad(p);
    for (size_t i = 0; i < v.size(); ++i) p.values[i] = params.values[i] - h * v[i] / norm;
    ParamVector gm = f.grad(p);

    std::vector<double> out(v.size());
    const double scale = norm / (2.0 * h);
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = (gp.values[i] - gm.values[i]) * scale;
        if (!std::isfinite(out[i])) {
            std::ostringstream os;
            os << "hvp: non-finite result at coordinate " << i;
            fail_numeric(os.str());
        }
    }
    return out;
}

} // namespace autodiff
} // namespace sabma
