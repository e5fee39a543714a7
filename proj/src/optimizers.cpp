#include "sabma/optimizers.hpp"
#include "sabma/error.hpp"

#include <cmath>
#include <numbers>

namespace sabma {

void sgd_step(std::vector<double>& params, const std::vector<double>& grad, double lr,
              double momentum, double weight_decay, std::vector<double>& state) {
    if (grad.size() != params.size()) fail_config("sgd_step: gradient length mismatch");
    if (state.size() != params.size()) fail_config("sgd_step: momentum state length mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        state[i] = momentum * state[i] + grad[i] + weight_decay * params[i];
        params[i] -= lr * state[i];
    }
}

void sgd_step(Vector& params, const Vector& grad, double lr, double momentum,
              double weight_decay, Vector& state) {
    if (grad.size() != params.size()) fail_config("sgd_step: gradient length mismatch");
    if (state.size() != params.size()) fail_config("sgd_step: momentum state length mismatch");
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        state(i) = momentum * state(i) + grad(i) + weight_decay * params(i);
        params(i) -= lr * state(i);
    }
}

Vector sam_perturb(const Vector& grad, double gamma, double eps) {
    const double norm = grad.norm();
    if (norm < eps) return Vector::Zero(grad.size());
    return (gamma / norm) * grad;
}

Vector fsam_perturb(const Vector& grad, const Vector& diag_fim, double gamma,
                    double eta_fisher, double eps) {
    if (diag_fim.size() != grad.size()) fail_config("fsam_perturb: Fisher length mismatch");
    for (Eigen::Index i = 0; i < diag_fim.size(); ++i)
        if (diag_fim(i) < 0.0) fail_config("fsam_perturb: Fisher entries must be >= 0");
    Vector d(grad.size());
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
        const double denom = diag_fim(i) + eta_fisher;
        if (!(denom > 0.0)) fail_numeric("fsam_perturb: singular Fisher denominator");
        d(i) = grad(i) / denom;
    }
    const double quad = grad.dot(d); // = || (F+eta)^{-1/2} g ||^2 >= 0
    if (quad < eps * eps) return Vector::Zero(grad.size());
    return (gamma / std::sqrt(quad)) * d;
}

void ng_step(Vector& params, const Vector& grad, const Vector& diag_fim, double lr, double eps) {
    if (grad.size() != params.size() || diag_fim.size() != params.size())
        fail_config("ng_step: length mismatch");
    for (Eigen::Index i = 0; i < params.size(); ++i)
        params(i) -= lr * grad(i) / (diag_fim(i) + eps);
}

std::vector<Vector> sabma_perturb(const std::vector<Vector>& loss_grads,
                                  const std::vector<Vector>& scores, double gamma, double eps) {
    if (loss_grads.size() != scores.size())
        fail_config("sabma_perturb: group count mismatch");
    const size_t G = loss_grads.size();
    std::vector<double> coeff(G, 0.0); // (g . l)/||g||^4 per live group
    // eps^2 keeps the radicand strictly positive (guarding the all-degenerate
    // 0/0 case) without measurably distorting live groups: the closed-form
    // group formula must hold to 1e-12 absolute.
    double denom_sq = eps * eps;
    for (size_t g = 0; g < G; ++g) {
        if (loss_grads[g].size() != scores[g].size())
            fail_config("sabma_perturb: group size mismatch");
        const double norm = scores[g].norm();
        if (norm < eps) continue;
        const double n4 = norm * norm * norm * norm;
        const double dot = scores[g].dot(loss_grads[g]);
        coeff[g] = dot / n4;
        denom_sq += dot * dot / n4;
    }
    const double D = std::sqrt(denom_sq);
    std::vector<Vector> out(G);
    for (size_t g = 0; g < G; ++g) {
        if (coeff[g] == 0.0) {
            out[g] = Vector::Zero(loss_grads[g].size());
        } else {
            out[g] = (gamma * coeff[g] / D) * scores[g];
        }
    }
    return out;
}

ScheduleKind parse_schedule_kind(const std::string& s) {
    if (s == "constant") return ScheduleKind::Constant;
    if (s == "cosine_warmup") return ScheduleKind::CosineWarmup;
    if (s == "swag_lr") return ScheduleKind::SwagLr;
    fail_config("unknown schedule kind '" + s + "'");
}

double lr_at(const LrSchedule& sched, int t) {
    if (sched.total_steps < 1) fail_config("lr_at: total_steps must be >= 1");
    if (t < 0 || t > sched.total_steps)
        fail_config("lr_at: step " + std::to_string(t) + " outside [0, total_steps]");
    switch (sched.kind) {
        case ScheduleKind::Constant:
            return sched.base_lr;
        case ScheduleKind::CosineWarmup: {
            if (sched.warmup_steps > 0 && t < sched.warmup_steps)
                return sched.base_lr * (t + 1) / static_cast<double>(sched.warmup_steps);
            const double span = static_cast<double>(sched.total_steps - sched.warmup_steps);
            const double progress = span > 0.0 ? (t - sched.warmup_steps) / span : 1.0;
            return 0.5 * sched.base_lr * (1.0 + std::cos(std::numbers::pi * progress));
        }
        case ScheduleKind::SwagLr: {
            const double frac = t / static_cast<double>(sched.total_steps);
            const double floor_lr = sched.swag_floor_fraction * sched.base_lr;
            if (frac <= 0.5) return sched.base_lr;
            if (frac >= 0.9) return floor_lr;
            const double u = (frac - 0.5) / 0.4;
            return sched.base_lr + u * (floor_lr - sched.base_lr);
        }
    }
    fail_config("lr_at: bad schedule kind");
}

Vector diag_predictive_fim(const Model& model, const ParamVector& params, const Dataset& batch) {
    if (batch.size() < 1) fail_config("diag_predictive_fim: empty batch");
    Vector fim = Vector::Zero(params.size());
    Dataset one;
    one.classes = batch.classes;
    one.X.resize(1, batch.X.cols());
    one.labels.resize(1);
    for (int e = 0; e < batch.size(); ++e) {
        one.X.row(0) = batch.X.row(e);
        one.labels[0] = batch.labels[static_cast<size_t>(e)];
        ParamVector g = nll_grad(model, params, one, 0.0);
        for (int i = 0; i < params.size(); ++i)
            fim(i) += g.values[static_cast<size_t>(i)] * g.values[static_cast<size_t>(i)];
    }
    return fim / static_cast<double>(batch.size());
}

FimMode parse_fim_mode(const std::string& s) {
    if (s == "identity") return FimMode::Identity;
    if (s == "diagonal_predictive") return FimMode::DiagonalPredictive;
    if (s == "samelson_posterior") return FimMode::SamelsonPosterior;
    fail_config("unknown fim_mode '" + s + "'");
}

Vector flatten_theta(const GaussianPosterior& post, const ThetaGroups& g) {
    const int p = post.p1();
    int len = 0;
    if (post.train_mu) len += p;
    if (post.train_log_sigma) len += p;
    if (post.train_lowrank) len += p * post.K();
    Vector out(len);
    int off = 0;
    if (post.train_mu) {
        out.segment(off, p) = g.mu;
        off += p;
    }
    if (post.train_log_sigma) {
        out.segment(off, p) = g.log_sigma;
        off += p;
    }
    if (post.train_lowrank && post.K() > 0) {
        for (int i = 0; i < p; ++i)
            out.segment(off + i * post.K(), post.K()) = g.lowrank.row(i).transpose();
    }
    return out;
}

void unflatten_theta(const GaussianPosterior& post, const Vector& flat, ThetaGroups& g) {
    const int p = post.p1();
    int off = 0;
    if (post.train_mu) {
        g.mu = flat.segment(off, p);
        off += p;
    }
    if (post.train_log_sigma) {
        g.log_sigma = flat.segment(off, p);
        off += p;
    }
    if (post.train_lowrank && post.K() > 0) {
        g.lowrank.resize(p, post.K());
        for (int i = 0; i < p; ++i)
            g.lowrank.row(i) = flat.segment(off + i * post.K(), post.K()).transpose();
    }
}

namespace {

// Reparameterized loss gradient in theta space at the posterior's current
// parameters, holding the noise fixed:
//   d/dmu = g_w;  d/dlogsig = g_w .* z1 .* sigma/sqrt(2);  d/dL = g_w z2^T/sqrt(2)
ThetaGroups reparam_grads(const GaussianPosterior& post, const Vector& gw, const NoisePair& z) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    ThetaGroups g;
    g.mu = gw;
    g.log_sigma = inv_sqrt2 * gw.cwiseProduct(z.z1).cwiseProduct(post.sigma());
    g.lowrank = inv_sqrt2 * gw * z.z2.transpose();
    return g;
}

Vector trainable_loss_grad(const Model& model, const GaussianPosterior& post,
                           const Dataset& batch, const Vector& w_train) {
    ParamVector w = assemble(post, w_train);
    ParamVector g = nll_grad(model, w, batch, 0.0);
    Vector out(post.p1());
    for (int i = 0; i < post.p1(); ++i)
        out(i) = g.values[static_cast<size_t>(post.partition.trainable[static_cast<size_t>(i)])];
    return out;
}

// theta-space loss gradient (reparameterized NLL plus the beta*KL term).
ThetaGroups theta_grad(const Model& model, const GaussianPosterior& post, const Dataset& batch,
                       const NoisePair& z, double beta) {
    Vector w_train = sample_trainable(post, z);
    Vector gw = trainable_loss_grad(model, post, batch, w_train);
    ThetaGroups g = reparam_grads(post, gw, z);
    if (beta != 0.0) {
        ThetaGroups kg = kl_diag_grad(post, beta);
        g.mu += kg.mu;
        g.log_sigma += kg.log_sigma;
    }
    return g;
}

// Predictive Fisher diagonal pushed into theta space through the same
// reparameterization chain (per-example, then averaged).
Vector theta_diag_fim(const Model& model, const GaussianPosterior& post, const Dataset& batch,
                      const NoisePair& z) {
    static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Vector w_train = sample_trainable(post, z);
    ParamVector w = assemble(post, w_train);
    Vector sigma = post.sigma();

    ThetaGroups acc;
    acc.mu = Vector::Zero(post.p1());
    acc.log_sigma = Vector::Zero(post.p1());
    acc.lowrank = Matrix::Zero(post.p1(), post.K());

    Dataset one;
    one.classes = batch.classes;
    one.X.resize(1, batch.X.cols());
    one.labels.resize(1);
    for (int e = 0; e < batch.size(); ++e) {
        one.X.row(0) = batch.X.row(e);
        one.labels[0] = batch.labels[static_cast<size_t>(e)];
        ParamVector gfull = nll_grad(model, w, one, 0.0);
        for (int i = 0; i < post.p1(); ++i) {
            const double gw =
                gfull.values[static_cast<size_t>(post.partition.trainable[static_cast<size_t>(i)])];
            acc.mu(i) += gw * gw;
            const double gls = inv_sqrt2 * gw * z.z1(i) * sigma(i);
            acc.log_sigma(i) += gls * gls;
            for (int k = 0; k < post.K(); ++k) {
                const double gl = inv_sqrt2 * gw * z.z2(k);
                acc.lowrank(i, k) += gl * gl;
            }
        }
    }
    const double n = static_cast<double>(batch.size());
    acc.mu /= n;
    acc.log_sigma /= n;
    if (post.K() > 0) acc.lowrank /= n;
    return flatten_theta(post, acc);
}

} // namespace

void sabma_step(const Model& model, GaussianPosterior& post, const Dataset& batch,
                const PerturbationConfig& cfg, double lr, double momentum,
                double weight_decay, double beta, std::uint64_t seed, SabmaState& state) {
    post.validate();
    const NoisePair z = draw_noise(post, seed);

    ThetaGroups grad0 = theta_grad(model, post, batch, z, beta);
    ThetaGroups final_grad;

    if (cfg.gamma == 0.0) {
        final_grad = grad0;
    } else {
        Vector flat_delta;
        switch (cfg.fim_mode) {
            case FimMode::Identity:
                flat_delta = sam_perturb(flatten_theta(post, grad0), cfg.gamma, cfg.eps);
                break;
            case FimMode::DiagonalPredictive: {
                Vector fim = theta_diag_fim(model, post, batch, z);
                flat_delta = fsam_perturb(flatten_theta(post, grad0), fim, cfg.gamma,
                                          cfg.eta_fisher, cfg.eps);
                break;
            }
            case FimMode::SamelsonPosterior: {
                Vector w_train = sample_trainable(post, z);
                ThetaGroups score = grad_log_density(post, w_train);
                std::vector<Vector> loss_groups, score_groups;
                if (post.train_mu) {
                    loss_groups.push_back(grad0.mu);
                    score_groups.push_back(score.mu);
                }
                if (post.train_log_sigma) {
                    loss_groups.push_back(grad0.log_sigma);
                    score_groups.push_back(score.log_sigma);
                }
                if (post.train_lowrank && post.K() > 0) {
                    loss_groups.push_back(grad0.lowrank.reshaped<Eigen::RowMajor>());
                    score_groups.push_back(score.lowrank.reshaped<Eigen::RowMajor>());
                }
                std::vector<Vector> deltas = sabma_perturb(loss_groups, score_groups, cfg.gamma, cfg.eps);
                ThetaGroups dg;
                dg.mu = Vector::Zero(post.p1());
                dg.log_sigma = Vector::Zero(post.p1());
                dg.lowrank = Matrix::Zero(post.p1(), post.K());
                size_t gi = 0;
                if (post.train_mu) dg.mu = deltas[gi++];
                if (post.train_log_sigma) dg.log_sigma = deltas[gi++];
                if (post.train_lowrank && post.K() > 0)
                    dg.lowrank = deltas[gi].reshaped<Eigen::RowMajor>(post.p1(), post.K());
                flat_delta = flatten_theta(post, dg);
                break;
            }
        }

        // evaluate the gradient at theta + delta with the same noise, then restore
        const Vector mu0 = post.mu;
        const Vector ls0 = post.log_sigma;
        const Matrix lr0 = post.lowrank;
        ThetaGroups delta;
        delta.mu = Vector::Zero(post.p1());
        delta.log_sigma = Vector::Zero(post.p1());
        delta.lowrank = Matrix::Zero(post.p1(), post.K());
        unflatten_theta(post, flat_delta, delta);
        if (post.train_mu) post.mu += delta.mu;
        if (post.train_log_sigma) post.log_sigma += delta.log_sigma;
        if (post.train_lowrank && post.K() > 0) post.lowrank += delta.lowrank;

        final_grad = theta_grad(model, post, batch, z, beta);

        post.mu = mu0;
        post.log_sigma = ls0;
        post.lowrank = lr0;
    }

    Vector theta = flatten_theta(post, {post.mu, post.log_sigma, post.lowrank});
    Vector grad = flatten_theta(post, final_grad);
    if (state.momentum.size() != theta.size()) state.momentum = Vector::Zero(theta.size());
    sgd_step(theta, grad, lr, momentum, weight_decay, state.momentum);

    ThetaGroups updated{post.mu, post.log_sigma, post.lowrank};
    unflatten_theta(post, theta, updated);
    if (post.train_mu) post.mu = updated.mu;
    if (post.train_log_sigma) post.log_sigma = updated.log_sigma;
    if (post.train_lowrank && post.K() > 0) post.lowrank = updated.lowrank;
}

} // namespace sabma
