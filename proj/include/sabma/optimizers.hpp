#pragma once

#include "sabma/posterior.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sabma {

// SGD with classical momentum and decoupled weight decay:
//   v <- momentum*v + g + wd*theta;  theta <- theta - lr*v
// `state` is the momentum buffer (same length, zero-initialized by caller).
void sgd_step(std::vector<double>& params, const std::vector<double>& grad, double lr,
              double momentum, double weight_decay, std::vector<double>& state);
void sgd_step(Vector& params, const Vector& grad, double lr, double momentum,
              double weight_decay, Vector& state);

// SAM ascent direction: gamma * g/||g||_2; zero gradient -> zero perturbation.
Vector sam_perturb(const Vector& grad, double gamma, double eps = 1e-12);

// Fisher SAM ascent direction with a diagonal Fisher estimate:
//   d = g/(F + eta);  gamma * d / sqrt(g . d)
// (the denominator is ||F_reg^{-1/2} g||_2); zero gradient -> zero.
Vector fsam_perturb(const Vector& grad, const Vector& diag_fim, double gamma,
                    double eta_fisher = 1.0, double eps = 1e-12);

// Natural-gradient step with the same diagonal Fisher: theta -= lr*g/(F+eps).
void ng_step(Vector& params, const Vector& grad, const Vector& diag_fim, double lr,
             double eps = 1e-12);

// Per-group Samelson-inverse perturbation on the variational parameters.
// For groups g_1..g_G (scores) with loss gradients l_1..l_G:
//   numerator_g = g_g (g_g . l_g)/||g_g||^4
//   D = sqrt( sum_g (g_g . l_g)^2/||g_g||^4 + eps )
//   delta_g = gamma * numerator_g / D
// A group with ||g_g|| < eps contributes nothing and gets a zero perturbation.
std::vector<Vector> sabma_perturb(const std::vector<Vector>& loss_grads,
                                  const std::vector<Vector>& scores, double gamma,
                                  double eps = 1e-12);

// Learning-rate schedules over a fixed horizon; t in [0, total_steps].
enum class ScheduleKind { Constant, CosineWarmup, SwagLr };
ScheduleKind parse_schedule_kind(const std::string& s);

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::Constant;
    double base_lr = 0.1;
    int warmup_steps = 0;           // cosine_warmup: linear ramp (t+1)/warmup
    int total_steps = 1;
    double swag_floor_fraction = 0.1; // swag_lr: constant, then linear decay to
                                      // floor*base between 50% and 90%, flat after
};
double lr_at(const LrSchedule& sched, int t);

// Diagonal empirical Fisher of the predictive distribution: mean over examples
// of the squared per-example log-likelihood gradient, over all parameters.
Vector diag_predictive_fim(const Model& model, const ParamVector& params, const Dataset& batch);

enum class FimMode { Identity, DiagonalPredictive, SamelsonPosterior };
FimMode parse_fim_mode(const std::string& s);

struct PerturbationConfig {
    double gamma = 0.1;
    FimMode fim_mode = FimMode::SamelsonPosterior;
    double eta_fisher = 1.0;
    double eps = 1e-12;
};

struct SabmaState {
    Vector momentum; // over the flattened trainable theta, zero-initialized lazily
};

// One SA-BMA step on the posterior's variational parameters:
//   1. draw (z1, z2) from `seed`, form w_s and the assembled weights
//   2. reparameterized loss gradient at theta (plus beta*KL term)
//   3. ascent direction per fim_mode (identity -> SAM; diagonal_predictive ->
//      FSAM with the theta-space predictive Fisher; samelson_posterior ->
//      per-group Samelson perturbation from the posterior score)
//   4. re-evaluate the gradient at theta + delta with the same (z1, z2)
//   5. SGD-with-momentum update of theta from the perturbed gradient
// gamma = 0 skips 3-4 and reduces to plain reparameterized SGD bitwise.
void sabma_step(const Model& model, GaussianPosterior& post, const Dataset& batch,
                const PerturbationConfig& cfg, double lr, double momentum,
                double weight_decay, double beta, std::uint64_t seed, SabmaState& state);

// Flatten/unflatten trainable theta groups in the fixed order
// [mu | log_sigma | lowrank row-major], honoring the train_* flags.
Vector flatten_theta(const GaussianPosterior& post, const ThetaGroups& g);
void unflatten_theta(const GaussianPosterior& post, const Vector& flat, ThetaGroups& g);

} // namespace sabma
