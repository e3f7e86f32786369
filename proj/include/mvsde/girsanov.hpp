#pragma once

#include <vector>

#include "mvsde/sim.hpp"

namespace mvsde {

// eta_s = zeta_s(X_s) { b_s(X_s, flow_b(s)) - b_s(X_s, flow_a(s)) } along the
// paths of `bundle` (simulated under flow_a's dynamics). Result is
// steps x N x m in the increment layout.
std::vector<double> eta_between_flows(const CoefficientModel& model, const PathBundle& bundle,
                                      const FrozenFlow& flow_a, const FrozenFlow& flow_b);

// Per-particle Doleans exponential along stored increments, left-point Ito
// sums: log R_t = sum_j <eta_j, dW_j> - (1/2) sum_j |eta_j|^2 dt.
struct WeightBundle {
    std::size_t n = 0;
    std::size_t steps = 0;
    double dt = 0.0;
    std::vector<double> log_r;     // (steps+1) x N, log R at each grid time
    std::vector<double> int_eta2;  // (steps+1) x N, running sum |eta|^2 dt

    double log_r_at(std::size_t j, std::size_t i) const { return log_r[j * n + i]; }
    std::vector<double> r_at(std::size_t j) const;  // R_{t_j} per particle
    std::vector<double> r_terminal() const { return r_at(steps); }
};

WeightBundle weight_path(std::span<const double> eta, const PathBundle& bundle);

struct SecondMomentLog {
    double value = 0.0;    // log E[R^2]
    double stderr_ = 0.0;  // delta-method error of the log
    bool degenerate = false;
    bool tail_warning = false;  // top 1% of paths carry > 50% of the mean
};

SecondMomentLog second_moment_log(std::span<const double> r_values);

// Discrete analogue of the esssup second-moment bound: pathwise
// R_t^2 = Z_t exp(int |eta|^2 ds) with Z the doubled-drift Doleans
// exponential, so mean(R^2) <= exp(B) mean(Z) holds exactly for
// B = sum_j max_i |eta_j^i|^2 dt. Hard identity, no tolerance.
struct ExponentialBoundCheck {
    double log_mean_r2 = 0.0;
    double bound = 0.0;  // B + log mean(Z)
    double sup_eta_sq_integral = 0.0;  // B alone
    double mean_z = 0.0;               // should be ~1 (martingale of doubled weight)
    bool pass = false;
};

ExponentialBoundCheck exponential_bound_check(std::span<const double> eta,
                                              const PathBundle& bundle, std::size_t j_end);

}  // namespace mvsde
