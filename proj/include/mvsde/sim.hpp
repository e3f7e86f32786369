#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvsde/measure.hpp"
#include "mvsde/model.hpp"

namespace mvsde {

enum class ExecMode { OpenMP, Serial };

struct SimConfig {
    std::size_t n_particles = 1000;
    double dt = 0.01;
    double t_end = 1.0;
    std::uint64_t seed = 1;
    bool store_increments = true;
    std::vector<double> snapshot_times;
    ExecMode exec = ExecMode::OpenMP;

    std::size_t steps() const;  // t_end / dt, integral within 1e-9
};

// Full per-step trajectories. states is (steps+1) x N x d, increments is
// steps x N x m; desk-scale sizes keep this in memory so the Girsanov and
// Bismut estimators can re-read paths.
struct PathBundle {
    std::size_t n = 0, d = 0, m = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::string model_id;
    std::vector<double> times;       // 0 .. steps inclusive
    std::vector<double> states;
    std::vector<double> increments;  // empty when not stored

    std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
    std::span<const double> state(std::size_t j, std::size_t i) const {
        return {states.data() + (j * n + i) * d, d};
    }
    std::span<const double> incr(std::size_t j, std::size_t i) const {
        return {increments.data() + (j * n + i) * m, m};
    }
    bool has_increments() const { return !increments.empty(); }
    EmpiricalMeasure cloud_at(std::size_t j) const;
    std::size_t snapshot_index(double t) const;  // grid index of time t
};

// Piecewise-constant measure flow: the measure argument (and mu_t(V) for
// structured drifts) frozen from a previous run or supplied analytically.
struct FrozenFlow {
    std::vector<double> times;
    // measure snapshots are kept only when the drift actually reads the cloud
    // (GeneralB1, or structured B with uses_measure); otherwise z suffices
    std::vector<EmpiricalMeasure> measures;
    std::vector<std::vector<double>> z;  // mu_t(V); empty when not structured

    std::size_t lookup(double t) const;  // FlowGridMismatch when uncovered
    const EmpiricalMeasure* measure_at(std::size_t idx) const {
        return measures.empty() ? nullptr : &measures[idx];
    }
    static FrozenFlow from_bundle(const PathBundle& bundle, const CoefficientModel& model);
};

struct CoupledPathBundle {
    PathBundle a, b;
};

enum class CouplingMode { Comonotone1D, AssignmentOT, Independent };

// Draw n starting points from mu0: exact reuse when mu0 already has n
// uniform atoms, otherwise inverse-CDF sampling with counter-based draws.
std::vector<double> sample_initial(const EmpiricalMeasure& mu0, std::size_t n,
                                   std::uint64_t seed);

// Interacting N-particle Euler-Maruyama for the McKean-Vlasov dynamics: the
// drift sees the running empirical cloud (and its V-average for structured
// models).
PathBundle simulate_mckean_vlasov(const CoefficientModel& model, const EmpiricalMeasure& mu0,
                                  const SimConfig& cfg);

// Same dynamics but the measure argument is read from a frozen flow, making
// each particle an independent Markov path.
PathBundle simulate_decoupled(const CoefficientModel& model, const FrozenFlow& flow,
                              const std::vector<double>& x0_list, const SimConfig& cfg);

// Two interacting systems driven by the identical increment stream; initial
// pairing realizes (or approximates) the W_k-optimal coupling.
CoupledPathBundle simulate_coupled(const CoefficientModel& model, const EmpiricalMeasure& mu0_a,
                                   const EmpiricalMeasure& mu0_b, CouplingMode coupling,
                                   const SimConfig& cfg, double pairing_k = 2.0);

// Memory-light variant: returns only the terminal states (finite-difference
// oracle path).
std::vector<double> simulate_terminal_state(const CoefficientModel& model,
                                            const std::vector<double>& x0_list,
                                            const SimConfig& cfg);

struct DiagnosticsRow {
    double p = 0.0;
    std::vector<double> t;
    std::vector<double> moment;  // E |X_t - X_0|^p
    double loglog_slope = 0.0;
    double slope_se = 0.0;
};

// E|X_t - X_0|^p against t on the snapshot grid with the fitted log-log
// slope (short-time moment law diagnostics).
std::vector<DiagnosticsRow> moment_diagnostics(const PathBundle& bundle,
                                               std::span<const double> p_list,
                                               std::span<const double> t_grid);

struct CoupledGapDiagnostics {
    double p = 0.0;
    double initial_gap_p = 0.0;      // E |X0^a - X0^b|^p
    double sup_ratio = 0.0;          // E sup_t |gap_t|^p / E |gap_0|^p
    std::vector<double> t;
    std::vector<double> gap_moment;  // E |gap_t|^p
};

CoupledGapDiagnostics coupled_gap_diagnostics(const CoupledPathBundle& cpl, double p,
                                              std::span<const double> t_grid);

}  // namespace mvsde
