#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "mvsde/dini.hpp"
#include "mvsde/measure.hpp"

namespace mvsde {

// Callbacks receive caller-owned output buffers; all are required to be pure
// and re-entrant (the audit calls them twice and compares).
using FieldFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
using DirDerivFn = std::function<void(double t, std::span<const double> x,
                                      std::span<const double> dir, std::span<double> out)>;

// Mean-field drift of the structured form B(t, x, mu, mu(V)) with V mapping
// into R^{m_b}. grad_* are directional derivatives; dl_b is the Lions
// derivative kernel y -> D^L B(x,.,z)(mu)(y) as a d x d matrix.
struct StructuredMeanField {
    std::size_t m_b = 1;
    std::function<void(std::span<const double> x, std::span<double> out)> V;
    std::function<void(std::span<const double> x, std::span<const double> dir,
                       std::span<double> out)>
        grad_V;
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure* mu,
                       std::span<const double> z, std::span<double> out)>
        B;
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure* mu,
                       std::span<const double> z, std::span<const double> dir_x,
                       std::span<double> out)>
        grad_x_B;
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure* mu,
                       std::span<const double> z, std::span<const double> dz,
                       std::span<double> out)>
        grad_z_B;
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure* mu,
                       std::span<const double> z, std::span<const double> y,
                       std::span<double> out_dxd)>
        dl_B;               // optional
    bool uses_measure = false;  // B reads mu beyond mu(V)
};

struct GeneralMeanField {
    std::function<void(double t, std::span<const double> x, const EmpiricalMeasure& mu,
                       std::span<double> out)>
        b1;
};

struct ModelConstants {
    double K = 1.0;
    double kappa = 0.0;
    double k = 2.0;
    DiniModulus modulus = DiniModulus::power(1.0, 0.5);
};

class CoefficientModel {
public:
    std::string name;
    std::size_t dim_x = 1;
    std::size_t dim_w = 1;

    FieldFn sigma;             // (t, x) -> d x m row-major
    DirDerivFn grad_sigma;     // directional dsigma(x)[v], d x m; empty + constant => 0
    bool sigma_constant = true;

    FieldFn b0;                // optional irregular drift
    DirDerivFn grad_b0;        // required for Bismut when b0 is present
    double b0_cap = 1e3;       // |b0| is clamped at this magnitude (reported)

    std::variant<std::monostate, GeneralMeanField, StructuredMeanField> mean_field;

    ModelConstants constants;

    bool has_mean_field() const {
        return !std::holds_alternative<std::monostate>(mean_field);
    }
    const StructuredMeanField* structured() const {
        return std::get_if<StructuredMeanField>(&mean_field);
    }
    const GeneralMeanField* general() const { return std::get_if<GeneralMeanField>(&mean_field); }

    // b0 with the singular cap applied
    void eval_b0(double t, std::span<const double> x, std::span<double> out) const;
    // mean-field part; structured models take z = mu(V) precomputed
    void eval_mean_field(double t, std::span<const double> x, const EmpiricalMeasure* mu,
                         std::span<const double> z, std::span<double> out) const;
    // zeta = sigma^T (sigma sigma^T)^{-1}, m x d row-major; SingularDiffusion on failure
    void eval_zeta(double t, std::span<const double> x, std::span<double> out_md) const;

    // derivative callbacks needed by the Bismut estimators
    void require_smooth_for_bismut() const;
};

// Builtin gallery addressable from config files:
//   pure_bm{dim}, mean_field_ou{a}, kuramoto_like{coupling},
//   bounded_b1_tanh{a}, singular_b0_power{gamma, cap}
CoefficientModel make_gallery_model(const std::string& name,
                                    const std::map<std::string, double>& params = {});
std::vector<std::string> gallery_model_names();

// ---------------------------------------------------------------------------
// Assumption audits (sampling-based certificates, not proofs)

struct AuditCheck {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double bound = 0.0;
    std::string note;
};

struct AuditReport {
    bool passes = false;
    std::vector<AuditCheck> checks;
    std::size_t samples_used = 0;
};

struct AuditSampleSpec {
    std::size_t n_time = 4;
    std::size_t n_space = 48;
    std::size_t n_measure_pairs = 12;
    std::size_t cloud_size = 16;
    double space_radius = 3.0;
    double tol = 0.10;  // relative slack on declared constants
    std::uint64_t seed = 12345;
};

AuditReport audit_assumption_A(const CoefficientModel& model, const AuditSampleSpec& spec = {});

// (p, q) in the admissible integrability class: p, q > 2 and d/p + 2/q < 1.
bool scr_K_check(double p, double q, std::size_t d);

struct LatticeSpec {
    std::vector<std::vector<double>> centers;  // candidate unit-ball centers
    int n_axis = 65;                           // midpoint cells per axis
    int n_time = 33;                           // midpoint cells in [0, T]
};

struct IntegrabilityProbe {
    double p = 0.0, q = 0.0;
    double estimated_norm = 0.0;  // lower bound: sup over the finite lattice only
    std::vector<double> center;   // argmax center
};

// sup_y ( int_0^T ( int_{B(y,1)} |f|^p dx )^{q/p} dt )^{1/q} over the lattice
// centers, by tensor midpoint quadrature.
IntegrabilityProbe localized_Lpq_norm(
    const std::function<double(double t, std::span<const double> x)>& f, double p, double q,
    double T, std::size_t dim, const LatticeSpec& lattice);

}  // namespace mvsde
