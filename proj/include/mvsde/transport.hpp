#pragma once

#include <cstdint>
#include <vector>

#include "mvsde/dini.hpp"
#include "mvsde/measure.hpp"

namespace mvsde {

enum class OTMethod { Auto, Quantile1D, ExactLP, Entropic };

// Sparse coupling between two clouds plus marginal diagnostics. The exact
// solver also exposes its dual potentials so optimality is certifiable.
struct TransportPlan {
    struct Entry {
        std::uint32_t i, j;
        double mass;
    };
    std::vector<Entry> entries;
    double row_residual = 0.0;  // max |sum_j pi_ij - a_i|
    double col_residual = 0.0;
    double cost = 0.0;                     // sum pi_ij c_ij
    std::vector<double> dual_u, dual_v;    // ExactLP only
    double dual_violation = 0.0;           // max over edges of u_i + v_j - c_ij
    bool converged = true;                 // Entropic: residual target reached
    int iterations = 0;

    std::vector<double> dense(std::size_t n, std::size_t m) const;
};

struct OTResult {
    double value = 0.0;  // W_k or W_alpha
    OTMethod method_used = OTMethod::ExactLP;
    TransportPlan plan;
};

struct OTOptions {
    OTMethod method = OTMethod::Auto;
    double entropic_reg = 0.01;
    double entropic_residual_target = 1e-7;
    int entropic_max_iter = 10000;
    // Auto picks Quantile1D when d == 1 (convex costs only), ExactLP up to
    // this many cost entries, Entropic beyond.
    std::size_t exact_auto_cap = 250000;
    std::size_t exact_hard_cap = 1000000;
};

// W_k(mu, nu) with ground cost |x-y|^k; value is cost^{1/k}.
OTResult wasserstein_k(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double k,
                       const OTOptions& opts = {});

// W_alpha(mu, nu): transport cost with ground metric alpha(|x-y|). For
// concave increasing alpha with alpha(0) = 0 this equals the dual form
// sup_{[f]_alpha <= 1} |mu(f) - nu(f)| (Kantorovich-Rubinstein for the metric
// d_alpha). The monotone 1D coupling is not optimal for concave costs, so
// Quantile1D is rejected here.
OTResult wasserstein_alpha(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                           const DiniModulus& m, const OTOptions& opts = {});

// Test-side device: sup_{|f| <= 1 + |.|^k} |mu(f) - nu(f)| on the union
// support. Separable, so the optimum is sum |mu_i - nu_i| (1 + |x_i|^k).
double w_k_var(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double k);

// Exact min-cost transport by successive shortest paths with potentials on
// the bipartite support graph (Hungarian handles the equal-size uniform
// case). Cost callback receives (i, j).
TransportPlan exact_transport(std::span<const double> a, std::span<const double> b,
                              const std::function<double(std::size_t, std::size_t)>& cost);

// Assignment between equal-size clouds, minimizing total cost; returns the
// column assigned to each row.
std::vector<std::size_t> hungarian_assignment(
    std::size_t n, const std::function<double(std::size_t, std::size_t)>& cost);

}  // namespace mvsde
