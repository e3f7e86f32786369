#pragma once

#include <vector>

#include "mvsde/girsanov.hpp"
#include "mvsde/sim.hpp"

namespace mvsde {

// Direction phi in the tangent space L^k(mu): a vector field evaluated on the
// initial cloud.
struct PerturbationDirection {
    std::function<void(std::span<const double> x, std::span<double> out)> phi;

    static PerturbationDirection constant(std::vector<double> v);
    static PerturbationDirection identity();
    static PerturbationDirection sine();  // componentwise sin

    double norm_lk(const EmpiricalMeasure& mu, double k) const;
};

// Vector-valued payoff f : R^d -> R^q (q = 1 for scalar statistics, q = m_b
// when differentiating P_t V).
struct Payoff {
    std::size_t dim = 1;
    std::function<void(std::span<const double> x, std::span<double> out)> f;

    static Payoff scalar(std::function<double(std::span<const double>)> g);
    static Payoff coordinate();          // f(x) = x_0
    static Payoff square();              // f(x) = |x|^2
    static Payoff tanh_bounded();        // f(x) = tanh(x_0)
    static Payoff from_structured_V(const CoefficientModel& model);
};

// Pathwise derivative flows: (steps+1) x N x d in the state layout. Both are
// exact derivatives of the discrete Euler scheme, which keeps them consistent
// with the finite-difference oracle to machine precision at fixed dt.
struct JacobianFlow {
    std::size_t n = 0, d = 0;
    std::vector<double> flow;
    std::span<const double> at(std::size_t j, std::size_t i) const {
        return {flow.data() + (j * n + i) * d, d};
    }
    // E sup_t |J_t|^p (the (EX)-audit statistic)
    double sup_moment(double p) const;
};
using MeanFieldDerivativeFlow = JacobianFlow;

// Frozen-measure Jacobian: dJ = grad b(X) J dt + grad sigma(X)[J] dW along
// the stored path, J_0 = v for every particle.
JacobianFlow jacobian_flow(const CoefficientModel& model, const PathBundle& bundle,
                           const FrozenFlow& flow, std::span<const double> v);

// N-coupled linearization of the interacting system along phi:
// dD^i = [grad_x b(X^i) D^i + grad_z B(X^i) (1/N) sum_l dV(X^l)[D^l]
//         + (1/N) sum_l D^L B(X^i,.,z)(mu)(X^l) D^l] dt + grad sigma(X^i)[D^i] dW^i,
// D^i_0 = phi(X^i_0).
MeanFieldDerivativeFlow mean_field_derivative_flow(const CoefficientModel& model,
                                                   const PathBundle& bundle,
                                                   const FrozenFlow& flow,
                                                   const PerturbationDirection& phi);

struct IntrinsicDerivativeEstimate {
    std::vector<double> value;        // payoff dim
    std::vector<double> stderr_;
    std::vector<double> i_term, n_term, ntilde_term;
    std::size_t n_paths = 0;
    double t = 0.0;
    double phi_norm_lk = 0.0;
    double btt_ratio = 0.0;           // sqrt(t) |value| / ||phi||_{L^k(mu)}
    double pt_abs_f_kstar = 0.0;      // empirical (P_t |f|^{k*})^{1/k*}
    int picard_iterations = 0;
};

struct EstimatorConfig {
    SimConfig sim;
    std::size_t reps = 1;        // pooled independent repetitions
    std::size_t picard_max_iter = 32;
    double picard_tol = 1e-4;
    std::size_t picard_grid = 24;  // geometric t-grid size, refined near 0
};

// Frozen-flow Bismut estimate of the derivative along the decoupled
// dynamics: (1/t) E[ f(X_t) int_0^t <zeta_s grad_phi X_s, dW_s> ].
IntrinsicDerivativeEstimate frozen_flow_bismut(const CoefficientModel& model,
                                               const EmpiricalMeasure& mu, const Payoff& f,
                                               const PerturbationDirection& phi, double t,
                                               const EstimatorConfig& cfg);
// Same simulation reused across a t-grid.
std::vector<IntrinsicDerivativeEstimate> frozen_flow_bismut_grid(
    const CoefficientModel& model, const EmpiricalMeasure& mu, const Payoff& f,
    const PerturbationDirection& phi, std::span<const double> t_grid,
    const EstimatorConfig& cfg);

struct PicardResult {
    std::vector<double> t_grid;
    std::vector<double> v;            // grid x m_b, weighted fixed-point variable
    std::vector<double> d_intrinsic;  // grid x m_b, D^I_phi P_t V(mu)
    std::vector<double> d_zero;       // exact anchor D(0) = mu( dV[phi] )
    std::vector<double> sup_diffs;    // successive sup-norm differences
    bool converged = false;
    int iterations = 0;
};

// Fixed-point system for (v, v-tilde) in the regular regime: v-tilde is
// realized by the mean-field derivative flow and v iterates
//   v <- sqrt(t tilde_a(r sqrt t)) / a(r sqrt t) * { I_t^V + I~_t^V(v, vt) },
// with r = 1 + kappa ||mu||_k. D^I_phi P_t V is recovered by undoing the
// weight.
PicardResult picard_v_system(const CoefficientModel& model, const EmpiricalMeasure& mu,
                             const PerturbationDirection& phi, std::span<const double> t_grid,
                             const EstimatorConfig& cfg);

// Full formula: I_t^f plus the correction
// E[f(X_t) int_0^t <zeta_s (N_s + N~_s), dW_s>] with
// N_s = grad^B_{D^I_phi P_s V} B(X_s, P_s mu, .)(P_s V) and N~_s the
// leave-one-out Lions-kernel cross average against grad_phi X_s.
IntrinsicDerivativeEstimate intrinsic_derivative(const CoefficientModel& model,
                                                 const EmpiricalMeasure& mu, const Payoff& f,
                                                 const PerturbationDirection& phi, double t,
                                                 const EstimatorConfig& cfg);
std::vector<IntrinsicDerivativeEstimate> intrinsic_derivative_grid(
    const CoefficientModel& model, const EmpiricalMeasure& mu, const Payoff& f,
    const PerturbationDirection& phi, std::span<const double> t_grid,
    const EstimatorConfig& cfg);

struct FiniteDifferenceEstimate {
    std::vector<double> value;       // central difference at the smallest eps
    std::vector<double> richardson;  // extrapolated across the two largest eps
    std::vector<double> stderr_;     // per-particle scatter of the extrapolation
    std::size_t n_paths = 0;
};

// Independent oracle: re-simulates the interacting system from shifted
// initials x + eps phi(x) under the identical noise stream and differences
// the payoff means.
FiniteDifferenceEstimate finite_difference_intrinsic(const CoefficientModel& model,
                                                     const EmpiricalMeasure& mu, const Payoff& f,
                                                     const PerturbationDirection& phi, double t,
                                                     std::span<const double> eps_list,
                                                     const EstimatorConfig& cfg);

}  // namespace mvsde
