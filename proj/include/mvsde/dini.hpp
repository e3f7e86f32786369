#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvsde/common.hpp"

namespace mvsde {

// Concave modulus alpha with alpha(0) = 0 and finite square-Dini integral
// int_0^1 alpha(r)^2 / r dr. Three families: A r^eps, A (log(e + 1/r))^-beta,
// and piecewise-linear tabulated knots.
class DiniModulus {
public:
    enum class Family { Power, LogPower, Tabulated };

    static DiniModulus power(double A, double eps, double r_max = 1e6);
    static DiniModulus log_power(double A, double beta, double r_max = 1e6);
    // Knots must be strictly increasing in r and start at (0, 0). Beyond the
    // last knot the final segment slope continues.
    static DiniModulus tabulated(std::vector<std::pair<double, double>> knots,
                                 double r_max = 1e6);
    // min(r, cap): the capped-linear member used by the structured gallery.
    static DiniModulus capped_linear(double cap = 1.0, double r_max = 1e6);

    Family family() const { return family_; }
    double r_max() const { return r_max_; }
    double param_a() const { return a_; }
    double param_b() const { return b_; }
    const std::vector<std::pair<double, double>>& knots() const { return knots_; }
    std::string describe() const;

    // alpha(r); DomainExceeded beyond r_max.
    double operator()(double r) const;

    // tilde_alpha(r) = (int_0^r alpha(t)^2/t dt)^{1/2}. Closed form for Power
    // and Tabulated; log-substitution quadrature with an asymptotic tail for
    // LogPower.
    double tilde_alpha(double r) const;
    double dini_square_integral(double r) const;  // tilde_alpha(r)^2

    // alpha_k(s) = alpha(s^{1/(k-1)}). The flag reports sampled concavity of
    // s -> alpha_k(s), required by the distance-decay lemma hypotheses.
    struct AlphaK {
        double value;
        bool concave;
    };
    AlphaK alpha_k(double k, double s, int grid = 64) const;

private:
    DiniModulus() = default;
    double eval_raw(double r) const;  // no domain check

    Family family_ = Family::Power;
    double a_ = 1.0;  // A for Power/LogPower
    double b_ = 0.5;  // eps or beta
    std::vector<std::pair<double, double>> knots_;
    double r_max_ = 1e6;

    friend struct DiniQuadrature;
};

struct ValidationCheck {
    std::string name;
    bool pass = false;
    double worst_violation = 0.0;
    double worst_location = 0.0;
    std::string note;
};

struct ValidationReport {
    bool passes = false;
    // Largest r0 such that every pointwise invariant holds on [r0, r_max];
    // 0 when the full domain passes. Concavity of LogPower near 0 depends on
    // (A, beta), so the report localizes failures instead of guessing.
    double valid_from = 0.0;
    double dini_integral_01 = 0.0;
    bool dini_convergent = false;
    std::vector<ValidationCheck> checks;
};

ValidationReport validate_modulus(const DiniModulus& m, int grid_size = 256,
                                  double tol = 1e-9);

struct CheckResult {
    bool pass = false;
    double lhs = 0.0;
    double rhs = 0.0;
};

// Empirical Hoelder-for-concave check: mean(alpha(xi) eta) <= ||eta||_p *
// alpha(||xi||_{p/(p-1)}) on the paired sample.
CheckResult concave_holder_check(const DiniModulus& m, std::span<const double> xi,
                                 std::span<const double> eta, double p, double tol = 1e-10);

// Quadrature identities tying alpha to tilde_alpha. Both integrate the left
// side directly in log-time with family-specific singular tails and compare
// against the tilde_alpha closed/quadrature route.
struct IdentityCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double rel_error = 0.0;
};

// int_0^t alpha(r sqrt(s))^2 / (s * tilde_alpha(r sqrt(s))) ds  vs  4 tilde_alpha(r sqrt(t))
IdentityCheck check_identity_c1(const DiniModulus& m, double r, double t);
// int_0^T alpha(r sqrt(s))^2 / s ds  vs  2 tilde_alpha(r sqrt(T))^2
IdentityCheck check_identity_ass(const DiniModulus& m, double r, double T);

// Adaptive Simpson on [a, b]; shared by the module and by oracle code.
double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double tol = 1e-10, int max_depth = 48);

}  // namespace mvsde
