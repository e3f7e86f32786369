#include "mvsde/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvsde/philox.hpp"
#include "mvsde/transport.hpp"

namespace mvsde {

namespace {

constexpr double kExplosionGuard = 1e12;

struct StepMeasure {
    std::vector<double> z;  // mu(V) for structured models
    std::optional<EmpiricalMeasure> cloud;
    const EmpiricalMeasure* cloud_ptr = nullptr;
};

// Cloud statistics entering the drift at one step; deterministic pairwise
// reductions keyed by particle index.
StepMeasure compute_step_measure(const CoefficientModel& model, const double* states,
                                 std::size_t n, std::size_t d, std::vector<double>& vbuf) {
    StepMeasure out;
    const auto* s = model.structured();
    if (s) {
        const std::size_t mb = s->m_b;
        if (vbuf.size() != n * mb) vbuf.assign(n * mb, 0.0);
        #pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            s->V({states + i * d, d}, {vbuf.data() + i * mb, mb});
        out.z.resize(mb);
        std::vector<double> comp(n);
        for (std::size_t c = 0; c < mb; ++c) {
            for (std::size_t i = 0; i < n; ++i) comp[i] = vbuf[i * mb + c];
            out.z[c] = pairwise_mean(comp);
        }
    }
    const bool needs_cloud = model.general() != nullptr || (s && s->uses_measure);
    if (needs_cloud) {
        out.cloud.emplace(std::vector<double>(states, states + n * d), d);
        out.cloud_ptr = &*out.cloud;
    }
    return out;
}

struct Scratch {
    std::vector<double> drift, mf, sig, dw, xnew;
    explicit Scratch(std::size_t d, std::size_t m)
        : drift(d), mf(d), sig(d * m), dw(m), xnew(d) {}
};

// One explicit Euler-Maruyama particle update. Shared verbatim by the OpenMP
// kernel and the serial reference, so the two are bitwise identical.
inline bool em_update_particle(const CoefficientModel& model, double t, double dt,
                               std::uint64_t seed, std::size_t step, std::size_t i,
                               const double* x_in, double* x_out, double* incr_out,
                               const StepMeasure& meas, Scratch& sc) {
    const std::size_t d = model.dim_x, m = model.dim_w;
    std::span<const double> x{x_in, d};
    model.eval_b0(t, x, sc.drift);
    model.eval_mean_field(t, x, meas.cloud_ptr, meas.z, sc.mf);
    for (std::size_t c = 0; c < d; ++c) sc.drift[c] += sc.mf[c];
    const double sq = std::sqrt(dt);
    for (std::size_t c = 0; c < m; ++c)
        sc.dw[c] = sq * philox_normal(seed, RngStream::Increments, step, i,
                                      static_cast<std::uint32_t>(c));
    model.sigma(t, x, sc.sig);
    for (std::size_t r = 0; r < d; ++r) {
        double diff = 0.0;
        for (std::size_t c = 0; c < m; ++c) diff += sc.sig[r * m + c] * sc.dw[c];
        sc.xnew[r] = x_in[r] + sc.drift[r] * dt + diff;
    }
    bool ok = true;
    for (std::size_t r = 0; r < d; ++r) {
        if (!std::isfinite(sc.xnew[r]) || std::fabs(sc.xnew[r]) > kExplosionGuard) ok = false;
        x_out[r] = sc.xnew[r];
    }
    if (incr_out)
        for (std::size_t c = 0; c < m; ++c) incr_out[c] = sc.dw[c];
    return ok;
}

template <class MeasureProvider>
PathBundle run_em(const CoefficientModel& model, std::vector<double> x0, const SimConfig& cfg,
                  MeasureProvider&& measure_at) {
    const std::size_t n = cfg.n_particles, d = model.dim_x, m = model.dim_w;
    const std::size_t steps = cfg.steps();
    PathBundle out;
    out.n = n;
    out.d = d;
    out.m = m;
    out.dt = cfg.dt;
    out.seed = cfg.seed;
    out.model_id = model.name;
    out.times.resize(steps + 1);
    for (std::size_t j = 0; j <= steps; ++j) out.times[j] = static_cast<double>(j) * cfg.dt;
    out.states.resize((steps + 1) * n * d);
    if (cfg.store_increments) out.increments.assign(steps * n * m, 0.0);
    std::copy(x0.begin(), x0.end(), out.states.begin());

    for (std::size_t j = 0; j < steps; ++j) {
        const double t = out.times[j];
        const double* in = out.states.data() + j * n * d;
        double* outp = out.states.data() + (j + 1) * n * d;
        double* incp = cfg.store_increments ? out.increments.data() + j * n * m : nullptr;
        const StepMeasure meas = measure_at(j, in);

        bool ok = true;
        if (cfg.exec == ExecMode::Serial) {
            Scratch sc(d, m);
            for (std::size_t i = 0; i < n; ++i)
                ok = em_update_particle(model, t, cfg.dt, cfg.seed, j, i, in + i * d,
                                        outp + i * d, incp ? incp + i * m : nullptr, meas, sc) &&
                     ok;
        } else {
            #pragma omp parallel reduction(&& : ok)
            {
                Scratch sc(d, m);
                #pragma omp for schedule(static)
                for (std::size_t i = 0; i < n; ++i)
                    ok = em_update_particle(model, t, cfg.dt, cfg.seed, j, i, in + i * d,
                                            outp + i * d, incp ? incp + i * m : nullptr, meas,
                                            sc) &&
                         ok;
            }
        }
        if (!ok)
            fail("Explosion", "particle state exceeded guard at t = " + std::to_string(t));
    }
    return out;
}

}  // namespace

std::size_t SimConfig::steps() const {
    if (!(dt > 0.0) || !(t_end > 0.0)) fail("InvalidArgument", "dt and t_end must be positive");
    const double raw = t_end / dt;
    const double rounded = std::round(raw);
    if (std::fabs(raw - rounded) > 1e-9 * std::max(1.0, raw))
        fail("InvalidArgument", "t_end / dt must be an integer number of steps");
    return static_cast<std::size_t>(rounded);
}

EmpiricalMeasure PathBundle::cloud_at(std::size_t j) const {
    return EmpiricalMeasure(std::vector<double>(states.begin() + j * n * d,
                                                states.begin() + (j + 1) * n * d),
                            d);
}

std::size_t PathBundle::snapshot_index(double t) const {
    const double raw = t / dt;
    const double rounded = std::round(raw);
    if (std::fabs(raw - rounded) > 1e-9 * std::max(1.0, raw) || rounded < 0 ||
        rounded > static_cast<double>(steps()))
        fail("FlowGridMismatch", "time not on the step grid: " + std::to_string(t));
    return static_cast<std::size_t>(rounded);
}

std::size_t FrozenFlow::lookup(double t) const {
    if (times.empty()) fail("FlowGridMismatch", "empty frozen flow");
    // piecewise-constant from the left
    auto it = std::upper_bound(times.begin(), times.end(), t + 1e-12);
    if (it == times.begin()) fail("FlowGridMismatch", "flow does not cover t");
    return static_cast<std::size_t>(it - times.begin()) - 1;
}

FrozenFlow FrozenFlow::from_bundle(const PathBundle& bundle, const CoefficientModel& model) {
    FrozenFlow flow;
    flow.times = bundle.times;
    const auto* s = model.structured();
    const bool keep_measures = model.general() != nullptr || (s && s->uses_measure);
    for (std::size_t j = 0; j <= bundle.steps(); ++j) {
        if (keep_measures) flow.measures.push_back(bundle.cloud_at(j));
        if (s) {
            const std::size_t n = bundle.n;
            std::vector<double> z(s->m_b, 0.0);
            std::vector<double> vall(n * s->m_b);
            #pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < n; ++i)
                s->V(bundle.state(j, i), {vall.data() + i * s->m_b, s->m_b});
            std::vector<double> comp(n);
            for (std::size_t c = 0; c < s->m_b; ++c) {
                for (std::size_t i = 0; i < n; ++i) comp[i] = vall[i * s->m_b + c];
                z[c] = pairwise_mean(comp);
            }
            flow.z.push_back(std::move(z));
        }
    }
    return flow;
}

std::vector<double> sample_initial(const EmpiricalMeasure& mu0, std::size_t n,
                                   std::uint64_t seed) {
    const std::size_t d = mu0.dim();
    std::vector<double> x0(n * d);
    const double uniform_w = 1.0 / static_cast<double>(mu0.size());
    bool is_uniform = mu0.size() == n;
    for (std::size_t i = 0; is_uniform && i < n; ++i)
        if (std::fabs(mu0.weight(i) - uniform_w) > 1e-15) is_uniform = false;
    if (is_uniform) {
        std::copy(mu0.points().begin(), mu0.points().end(), x0.begin());
        return x0;
    }
    std::vector<double> cdf(mu0.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < mu0.size(); ++i) {
        acc += mu0.weight(i);
        cdf[i] = acc;
    }
    cdf.back() = 1.0;
    #pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const double u = philox_uniform(seed, RngStream::InitialDraw, 0, i, 0);
        const std::size_t idx = static_cast<std::size_t>(
            std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const auto p = mu0.point(std::min(idx, mu0.size() - 1));
        std::copy(p.begin(), p.end(), x0.begin() + i * d);
    }
    return x0;
}

PathBundle simulate_mckean_vlasov(const CoefficientModel& model, const EmpiricalMeasure& mu0,
                                  const SimConfig& cfg) {
    if (cfg.n_particles < 2 && model.has_mean_field())
        fail("InvalidArgument", "mean-field interaction needs n_particles >= 2");
    if (mu0.dim() != model.dim_x) fail("DimensionMismatch", "initial measure dimension");
    auto x0 = sample_initial(mu0, cfg.n_particles, cfg.seed);
    std::vector<double> vbuf;
    return run_em(model, std::move(x0), cfg, [&](std::size_t, const double* states) {
        return compute_step_measure(model, states, cfg.n_particles, model.dim_x, vbuf);
    });
}

PathBundle simulate_decoupled(const CoefficientModel& model, const FrozenFlow& flow,
                              const std::vector<double>& x0_list, const SimConfig& cfg) {
    if (x0_list.size() != cfg.n_particles * model.dim_x)
        fail("DimensionMismatch", "x0_list size");
    const auto* s = model.structured();
    if (s && flow.z.empty())
        fail("FlowGridMismatch", "frozen flow lacks mu(V) snapshots for a structured model");
    return run_em(model, x0_list, cfg, [&](std::size_t j, const double*) {
        const double t = static_cast<double>(j) * cfg.dt;
        const std::size_t fi = flow.lookup(t);
        StepMeasure meas;
        if (s) meas.z = flow.z[fi];
        meas.cloud_ptr = flow.measure_at(fi);
        return meas;
    });
}

CoupledPathBundle simulate_coupled(const CoefficientModel& model, const EmpiricalMeasure& mu0_a,
                                   const EmpiricalMeasure& mu0_b, CouplingMode coupling,
                                   const SimConfig& cfg, double pairing_k) {
    if (mu0_a.dim() != mu0_b.dim()) fail("DimensionMismatch", "coupled initial measures");
    const std::size_t n = cfg.n_particles, d = mu0_a.dim();
    auto xa = sample_initial(mu0_a, n, cfg.seed);
    auto xb = sample_initial(mu0_b, n, cfg.seed ^ 0x5851F42D4C957F2Dull);

    // pairing: particle i of cloud A shares noise with particle i of cloud B
    if (coupling == CouplingMode::Comonotone1D) {
        if (d != 1) fail("InvalidArgument", "Comonotone1D needs d == 1");
        std::sort(xa.begin(), xa.end());
        std::sort(xb.begin(), xb.end());
    } else if (coupling == CouplingMode::AssignmentOT) {
        if (n * n > 4000000) fail("SizeExceeded", "AssignmentOT pairing too large");
        auto cost = [&](std::size_t i, std::size_t j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = xa[i * d + c] - xb[j * d + c];
                sq += diff * diff;
            }
            return std::pow(std::sqrt(sq), pairing_k);
        };
        const auto asg = hungarian_assignment(n, cost);
        std::vector<double> xb2(n * d);
        for (std::size_t i = 0; i < n; ++i)
            std::copy(xb.begin() + asg[i] * d, xb.begin() + (asg[i] + 1) * d,
                      xb2.begin() + i * d);
        xb = std::move(xb2);
    }

    std::vector<double> vbuf_a, vbuf_b;
    CoupledPathBundle out;
    out.a = run_em(model, std::move(xa), cfg, [&](std::size_t, const double* states) {
        return compute_step_measure(model, states, n, d, vbuf_a);
    });
    out.b = run_em(model, std::move(xb), cfg, [&](std::size_t, const double* states) {
        return compute_step_measure(model, states, n, d, vbuf_b);
    });
    return out;
}

std::vector<double> simulate_terminal_state(const CoefficientModel& model,
                                            const std::vector<double>& x0_list,
                                            const SimConfig& cfg) {
    const std::size_t n = cfg.n_particles, d = model.dim_x, m = model.dim_w;
    if (x0_list.size() != n * d) fail("DimensionMismatch", "x0_list size");
    const std::size_t steps = cfg.steps();
    std::vector<double> cur = x0_list, nxt(n * d), vbuf;
    for (std::size_t j = 0; j < steps; ++j) {
        const double t = static_cast<double>(j) * cfg.dt;
        const StepMeasure meas = compute_step_measure(model, cur.data(), n, d, vbuf);
        bool ok = true;
        if (cfg.exec == ExecMode::Serial) {
            Scratch sc(d, m);
            for (std::size_t i = 0; i < n; ++i)
                ok = em_update_particle(model, t, cfg.dt, cfg.seed, j, i, cur.data() + i * d,
                                        nxt.data() + i * d, nullptr, meas, sc) &&
                     ok;
        } else {
            #pragma omp parallel reduction(&& : ok)
            {
                Scratch sc(d, m);
                #pragma omp for schedule(static)
                for (std::size_t i = 0; i < n; ++i)
                    ok = em_update_particle(model, t, cfg.dt, cfg.seed, j, i,
                                            cur.data() + i * d, nxt.data() + i * d, nullptr,
                                            meas, sc) &&
                         ok;
            }
        }
        if (!ok) fail("Explosion", "particle state exceeded guard");
        std::swap(cur, nxt);
    }
    return cur;
}

std::vector<DiagnosticsRow> moment_diagnostics(const PathBundle& bundle,
                                               std::span<const double> p_list,
                                               std::span<const double> t_grid) {
    if (t_grid.size() < 4) fail("InvalidArgument", "need >= 4 snapshot times");
    std::vector<DiagnosticsRow> rows;
    const std::size_t n = bundle.n, d = bundle.d;
    for (double p : p_list) {
        DiagnosticsRow row;
        row.p = p;
        std::vector<double> logt, logm;
        for (double t : t_grid) {
            const std::size_t j = bundle.snapshot_index(t);
            std::vector<double> terms(n);
            #pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < n; ++i) {
                double sq = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = bundle.states[(j * n + i) * d + c] -
                                        bundle.states[i * d + c];
                    sq += diff * diff;
                }
                terms[i] = std::pow(std::sqrt(sq), p);
            }
            const double m = pairwise_mean(terms);
            row.t.push_back(t);
            row.moment.push_back(m);
            if (t > 0.0 && m > 0.0) {
                logt.push_back(std::log(t));
                logm.push_back(std::log(m));
            }
        }
        if (logt.size() >= 3) {
            const auto fit = fit_slope(logt, logm);
            row.loglog_slope = fit.slope;
            row.slope_se = fit.slope_se;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

CoupledGapDiagnostics coupled_gap_diagnostics(const CoupledPathBundle& cpl, double p,
                                              std::span<const double> t_grid) {
    const auto& a = cpl.a;
    const auto& b = cpl.b;
    if (a.n != b.n || a.steps() != b.steps()) fail("LengthMismatch", "coupled bundles differ");
    CoupledGapDiagnostics out;
    out.p = p;
    const std::size_t n = a.n, d = a.d;
    std::vector<double> terms(n);

    auto gap_p_at = [&](std::size_t j) {
        #pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = a.states[(j * n + i) * d + c] - b.states[(j * n + i) * d + c];
                sq += diff * diff;
            }
            terms[i] = std::pow(std::sqrt(sq), p);
        }
        return pairwise_mean(terms);
    };

    out.initial_gap_p = gap_p_at(0);
    for (double t : t_grid) {
        const std::size_t j = a.snapshot_index(t);
        out.t.push_back(t);
        out.gap_moment.push_back(gap_p_at(j));
    }
    // E sup_t |gap|^p over the whole grid
    std::vector<double> sup_terms(n, 0.0);
    for (std::size_t j = 0; j <= a.steps(); ++j) {
        #pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = a.states[(j * n + i) * d + c] - b.states[(j * n + i) * d + c];
                sq += diff * diff;
            }
            sup_terms[i] = std::max(sup_terms[i], std::pow(std::sqrt(sq), p));
        }
    }
    const double sup_mean = pairwise_mean(sup_terms);
    out.sup_ratio = out.initial_gap_p > 0.0 ? sup_mean / out.initial_gap_p : 0.0;
    return out;
}

}  // namespace mvsde
