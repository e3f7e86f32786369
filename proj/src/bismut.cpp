#include "mvsde/bismut.hpp"

#include <algorithm>
#include <cmath>

namespace mvsde {

namespace {

// zeta = sigma^T (sigma sigma^T)^{-1}; cached once for constant sigma
struct ZetaProvider {
    const CoefficientModel* model;
    bool constant;
    std::vector<double> cached;

    explicit ZetaProvider(const CoefficientModel& m) : model(&m), constant(m.sigma_constant) {
        if (constant) {
            cached.resize(m.dim_w * m.dim_x);
            std::vector<double> origin(m.dim_x, 0.0);
            m.eval_zeta(0.0, origin, cached);
        }
    }
    const double* at(double t, std::span<const double> x, std::vector<double>& buf) const {
        if (constant) return cached.data();
        model->eval_zeta(t, x, buf);
        return buf.data();
    }
};

std::vector<std::size_t> snap_step_indices(const PathBundle& bundle,
                                           std::span<const double> t_grid) {
    std::vector<std::size_t> idx;
    for (double t : t_grid) {
        if (!(t > 0.0)) fail("InvalidArgument", "estimator times must be positive");
        idx.push_back(bundle.snapshot_index(t));
    }
    return idx;
}

// Ito sums S_i(t_g) = sum_{j < t_g/dt} w_j <zeta_j^i A_j^i, dW_j^i> with the
// integrand field A supplied per step as an N x d array. Snapshots taken at
// the requested step indices; out is snaps x N.
template <class FillA>
void ito_accumulate(const CoefficientModel& model, const PathBundle& bundle,
                    FillA&& fill_A, const std::function<double(std::size_t)>& weight,
                    std::span<const std::size_t> snap_idx, std::vector<double>& out) {
    if (!bundle.has_increments()) fail("MissingIncrements", "bundle stored no increments");
    const std::size_t n = bundle.n, d = bundle.d, m = bundle.m;
    const std::size_t steps = bundle.steps();
    const ZetaProvider zeta(model);

    std::vector<double> running(n, 0.0);
    std::vector<double> a_field(n * d);
    out.assign(snap_idx.size() * n, 0.0);

    // snapshot order by step index
    std::vector<std::size_t> order(snap_idx.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return snap_idx[a] < snap_idx[b]; });
    std::size_t next = 0;

    for (std::size_t j = 0; j <= steps; ++j) {
        while (next < order.size() && snap_idx[order[next]] == j) {
            std::copy(running.begin(), running.end(), out.begin() + order[next] * n);
            ++next;
        }
        if (j == steps) break;
        const double w = weight(j);
        if (w != 0.0) {
            fill_A(j, a_field);
            const double t = bundle.times[j];
            #pragma omp parallel
            {
                std::vector<double> zbuf(m * d), za(m);
                #pragma omp for schedule(static)
                for (std::size_t i = 0; i < n; ++i) {
                    const auto x = bundle.state(j, i);
                    const double* z = zeta.at(t, x, zbuf);
                    matvec({z, m * d}, m, d, {a_field.data() + i * d, d}, za);
                    running[i] += w * dot(za, bundle.incr(j, i));
                }
            }
        }
    }
}

struct StructuredContext {
    const StructuredMeanField* s = nullptr;
    const FrozenFlow* flow = nullptr;

    std::span<const double> z_at(std::size_t j) const {
        return s ? std::span<const double>(flow->z[j]) : std::span<const double>();
    }
};

// One forward-Euler step of a derivative flow D -> D', shared by the frozen
// Jacobian and the mean-field linearization. coupling is the extra drift
// direction (zero for the frozen Jacobian).
inline void derivative_step(const CoefficientModel& model, const StructuredContext& ctx,
                            double t, double dt, std::size_t j, std::size_t i,
                            const PathBundle& bundle, const double* d_in, const double* coupling,
                            double* d_out, std::vector<double>& buf_d,
                            std::vector<double>& buf_sig) {
    const std::size_t d = model.dim_x;
    const auto x = bundle.state(j, i);
    std::span<const double> din{d_in, d};

    // drift gradient along D
    std::fill(d_out, d_out + d, 0.0);
    if (model.grad_b0) {
        model.grad_b0(t, x, din, buf_d);
        for (std::size_t c = 0; c < d; ++c) d_out[c] += buf_d[c];
    }
    if (ctx.s) {
        const EmpiricalMeasure* mu = ctx.flow->measure_at(j);
        ctx.s->grad_x_B(t, x, mu, ctx.z_at(j), din, buf_d);
        for (std::size_t c = 0; c < d; ++c) d_out[c] += buf_d[c];
    }
    if (coupling)
        for (std::size_t c = 0; c < d; ++c) d_out[c] += coupling[c];
    for (std::size_t c = 0; c < d; ++c) d_out[c] = d_in[c] + d_out[c] * dt;

    // diffusion gradient along D against the stored increment
    if (model.grad_sigma) {
        model.grad_sigma(t, x, din, buf_sig);
        const auto dw = bundle.incr(j, i);
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < model.dim_w; ++c)
                acc += buf_sig[r * model.dim_w + c] * dw[c];
            d_out[r] += acc;
        }
    }
}

JacobianFlow jacobian_flow_init(const CoefficientModel& model, const PathBundle& bundle,
                                const FrozenFlow& flow, std::span<const double> init) {
    model.require_smooth_for_bismut();
    if (!bundle.has_increments() && model.grad_sigma)
        fail("MissingIncrements", "jacobian flow with state-dependent sigma needs increments");
    const std::size_t n = bundle.n, d = bundle.d;
    const std::size_t steps = bundle.steps();
    JacobianFlow out;
    out.n = n;
    out.d = d;
    out.flow.assign((steps + 1) * n * d, 0.0);
    std::copy(init.begin(), init.end(), out.flow.begin());

    StructuredContext ctx{model.structured(), &flow};
    for (std::size_t j = 0; j < steps; ++j) {
        const double t = bundle.times[j];
        const double* in = out.flow.data() + j * n * d;
        double* op = out.flow.data() + (j + 1) * n * d;
        #pragma omp parallel
        {
            std::vector<double> buf_d(d), buf_sig(d * model.dim_w);
            #pragma omp for schedule(static)
            for (std::size_t i = 0; i < n; ++i)
                derivative_step(model, ctx, t, bundle.dt, j, i, bundle, in + i * d, nullptr,
                                op + i * d, buf_d, buf_sig);
        }
    }
    return out;
}

std::vector<double> phi_on_initial(const PerturbationDirection& phi, const PathBundle& bundle) {
    std::vector<double> init(bundle.n * bundle.d);
    for (std::size_t i = 0; i < bundle.n; ++i)
        phi.phi(bundle.state(0, i), {init.data() + i * bundle.d, bundle.d});
    return init;
}

// pooled mean / stderr across repetitions of per-particle term arrays
struct PoolAccum {
    std::vector<double> rep_means;
    std::vector<double> rep_vars;  // per-rep sample variances
    std::size_t per_rep_n = 0;

    void add(std::span<const double> terms) {
        const auto ms = mean_stderr(terms);
        rep_means.push_back(ms.mean);
        rep_vars.push_back(ms.stderr_ * ms.stderr_ * static_cast<double>(terms.size()));
        per_rep_n = terms.size();
    }
    double mean() const { return pairwise_mean(rep_means); }
    double stderr_of_mean() const {
        const std::size_t r = rep_means.size();
        const double total_n = static_cast<double>(r * per_rep_n);
        const double m = mean();
        double ss = 0.0;
        for (std::size_t a = 0; a < r; ++a)
            ss += (static_cast<double>(per_rep_n) - 1.0) * rep_vars[a] +
                  static_cast<double>(per_rep_n) * (rep_means[a] - m) * (rep_means[a] - m);
        const double var = ss / (total_n - 1.0);
        return std::sqrt(var / total_n);
    }
};

double interp_path(std::span<const double> ts, std::span<const double> vals, std::size_t mb,
                   std::size_t comp, double t, double v0) {
    // piecewise linear in t; anchored at (0, v0)
    if (ts.empty()) return v0;
    if (t <= ts.front()) {
        const double w = ts.front() > 0.0 ? t / ts.front() : 1.0;
        return v0 + w * (vals[comp] - v0);
    }
    auto it = std::lower_bound(ts.begin(), ts.end(), t);
    if (it == ts.end()) return vals[(ts.size() - 1) * mb + comp];
    const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
    if (ts[hi] == t || hi == 0) return vals[hi * mb + comp];
    const double w = (t - ts[hi - 1]) / (ts[hi] - ts[hi - 1]);
    return vals[(hi - 1) * mb + comp] + w * (vals[hi * mb + comp] - vals[(hi - 1) * mb + comp]);
}

// leave-one-out Lions-kernel contraction:
// out_i = (1/(N-1)) sum_{l != i} D^L B(x_i,.,z)(mu)(x_l) D_l  (N x d)
void lions_cross_average(const StructuredMeanField& s, const PathBundle& bundle,
                         const FrozenFlow& flow, std::size_t j, const double* dflow,
                         std::vector<double>& out) {
    const std::size_t n = bundle.n, d = bundle.d;
    const double t = bundle.times[j];
    const EmpiricalMeasure* mu = flow.measure_at(j);
    const auto z = flow.z[j];
    out.assign(n * d, 0.0);
    #pragma omp parallel
    {
        std::vector<double> kernel(d * d), contrib(d);
        #pragma omp for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            double* acc = out.data() + i * d;
            for (std::size_t l = 0; l < n; ++l) {
                if (l == i) continue;
                s.dl_B(t, bundle.state(j, i), mu, z, bundle.state(j, l), kernel);
                matvec(kernel, d, d, {dflow + l * d, d}, contrib);
                for (std::size_t c = 0; c < d; ++c) acc[c] += contrib[c];
            }
            for (std::size_t c = 0; c < d; ++c) acc[c] /= static_cast<double>(n - 1);
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Direction / payoff factories

PerturbationDirection PerturbationDirection::constant(std::vector<double> v) {
    PerturbationDirection p;
    p.phi = [v = std::move(v)](std::span<const double>, std::span<double> out) {
        std::copy(v.begin(), v.end(), out.begin());
    };
    return p;
}

PerturbationDirection PerturbationDirection::identity() {
    PerturbationDirection p;
    p.phi = [](std::span<const double> x, std::span<double> out) {
        std::copy(x.begin(), x.end(), out.begin());
    };
    return p;
}

PerturbationDirection PerturbationDirection::sine() {
    PerturbationDirection p;
    p.phi = [](std::span<const double> x, std::span<double> out) {
        for (std::size_t c = 0; c < x.size(); ++c) out[c] = std::sin(x[c]);
    };
    return p;
}

double PerturbationDirection::norm_lk(const EmpiricalMeasure& mu, double k) const {
    std::vector<double> buf(mu.dim()), terms(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        phi(mu.point(i), buf);
        terms[i] = mu.weight(i) * std::pow(norm2(buf), k);
    }
    return std::pow(pairwise_sum(terms), 1.0 / k);
}

Payoff Payoff::scalar(std::function<double(std::span<const double>)> g) {
    Payoff p;
    p.dim = 1;
    p.f = [g = std::move(g)](std::span<const double> x, std::span<double> out) { out[0] = g(x); };
    return p;
}

Payoff Payoff::coordinate() {
    return scalar([](std::span<const double> x) { return x[0]; });
}

Payoff Payoff::square() {
    return scalar([](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    });
}

Payoff Payoff::tanh_bounded() {
    return scalar([](std::span<const double> x) { return std::tanh(x[0]); });
}

Payoff Payoff::from_structured_V(const CoefficientModel& model) {
    const auto* s = model.structured();
    if (!s) fail("InvalidArgument", "model has no structured mean field");
    Payoff p;
    p.dim = s->m_b;
    p.f = [s](std::span<const double> x, std::span<double> out) { s->V(x, out); };
    return p;
}

// ---------------------------------------------------------------------------

double JacobianFlow::sup_moment(double p) const {
    const std::size_t steps = flow.size() / (n * d) - 1;
    std::vector<double> sup(n, 0.0);
    for (std::size_t j = 0; j <= steps; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            const double nv = norm2({flow.data() + (j * n + i) * d, d});
            sup[i] = std::max(sup[i], nv);
        }
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) terms[i] = std::pow(sup[i], p);
    return pairwise_mean(terms);
}

JacobianFlow jacobian_flow(const CoefficientModel& model, const PathBundle& bundle,
                           const FrozenFlow& flow, std::span<const double> v) {
    std::vector<double> init(bundle.n * bundle.d);
    for (std::size_t i = 0; i < bundle.n; ++i)
        std::copy(v.begin(), v.end(), init.begin() + i * bundle.d);
    return jacobian_flow_init(model, bundle, flow, init);
}

MeanFieldDerivativeFlow mean_field_derivative_flow(const CoefficientModel& model,
                                                   const PathBundle& bundle,
                                                   const FrozenFlow& flow,
                                                   const PerturbationDirection& phi) {
    model.require_smooth_for_bismut();
    const auto* s = model.structured();
    if (!s && model.has_mean_field())
        fail("MissingDerivativeCallbacks",
             "mean-field derivative flow needs a structured drift with derivative callbacks");
    const std::size_t n = bundle.n, d = bundle.d;
    const std::size_t steps = bundle.steps();

    MeanFieldDerivativeFlow out;
    out.n = n;
    out.d = d;
    out.flow.assign((steps + 1) * n * d, 0.0);
    {
        auto init = phi_on_initial(phi, bundle);
        std::copy(init.begin(), init.end(), out.flow.begin());
    }

    StructuredContext ctx{s, &flow};
    const std::size_t mb = s ? s->m_b : 0;
    std::vector<double> zdot(mb), coupling(n * d, 0.0), dl_avg;
    std::vector<double> vfield(s ? n * mb : 0);

    for (std::size_t j = 0; j < steps; ++j) {
        const double t = bundle.times[j];
        const double* din = out.flow.data() + j * n * d;
        double* dout = out.flow.data() + (j + 1) * n * d;

        if (s) {
            // zdot = (1/N) sum_l dV(X^l)[D^l]
            #pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < n; ++i)
                s->grad_V(bundle.state(j, i), {din + i * d, d}, {vfield.data() + i * mb, mb});
            std::vector<double> comp(n);
            for (std::size_t c = 0; c < mb; ++c) {
                for (std::size_t i = 0; i < n; ++i) comp[i] = vfield[i * mb + c];
                zdot[c] = pairwise_mean(comp);
            }
            // full-average Lions term of the linearized system
            const bool has_dl = static_cast<bool>(s->dl_B);
            if (has_dl) {
                lions_cross_average(*s, bundle, flow, j, din, dl_avg);
                // convert leave-one-out back to the (1/N) full average:
                // (1/N) sum_l K D_l = ((N-1) loo + K(x_i, x_i) D_i) / N
                #pragma omp parallel
                {
                    std::vector<double> kernel(d * d), self(d);
                    #pragma omp for schedule(static)
                    for (std::size_t i = 0; i < n; ++i) {
                        s->dl_B(t, bundle.state(j, i), flow.measure_at(j), flow.z[j],
                                bundle.state(j, i), kernel);
                        matvec(kernel, d, d, {din + i * d, d}, self);
                        for (std::size_t c = 0; c < d; ++c)
                            coupling[i * d + c] =
                                (static_cast<double>(n - 1) * dl_avg[i * d + c] + self[c]) /
                                static_cast<double>(n);
                    }
                }
            }
            #pragma omp parallel
            {
                std::vector<double> gz(d);
                #pragma omp for schedule(static)
                for (std::size_t i = 0; i < n; ++i) {
                    s->grad_z_B(t, bundle.state(j, i), flow.measure_at(j), flow.z[j], zdot, gz);
                    if (has_dl)
                        for (std::size_t c = 0; c < d; ++c) coupling[i * d + c] += gz[c];
                    else
                        std::copy(gz.begin(), gz.end(), coupling.begin() + i * d);
                }
            }
        }

        #pragma omp parallel
        {
            std::vector<double> buf_d(d), buf_sig(d * model.dim_w);
            #pragma omp for schedule(static)
            for (std::size_t i = 0; i < n; ++i)
                derivative_step(model, ctx, t, bundle.dt, j, i, bundle, din + i * d,
                                s ? coupling.data() + i * d : nullptr, dout + i * d, buf_d,
                                buf_sig);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frozen-flow Bismut estimator

namespace {

struct TermPools {
    std::vector<PoolAccum> i_term, n_term, nt_term, comb, abs_f;
    void init(std::size_t snaps, std::size_t q) {
        i_term.assign(snaps * q, {});
        n_term.assign(snaps * q, {});
        nt_term.assign(snaps * q, {});
        comb.assign(snaps * q, {});
        abs_f.assign(snaps, {});
    }
};

IntrinsicDerivativeEstimate finalize_estimate(const TermPools& pools, std::size_t g,
                                              std::size_t q, double t, double phi_norm,
                                              double kstar, std::size_t n_paths,
                                              int picard_iters) {
    IntrinsicDerivativeEstimate est;
    est.t = t;
    est.n_paths = n_paths;
    est.phi_norm_lk = phi_norm;
    est.picard_iterations = picard_iters;
    est.value.resize(q);
    est.stderr_.resize(q);
    est.i_term.resize(q);
    est.n_term.resize(q);
    est.ntilde_term.resize(q);
    for (std::size_t c = 0; c < q; ++c) {
        est.i_term[c] = pools.i_term[g * q + c].mean();
        est.n_term[c] = pools.n_term[g * q + c].mean();
        est.ntilde_term[c] = pools.nt_term[g * q + c].mean();
        est.value[c] = est.i_term[c] + est.n_term[c] + est.ntilde_term[c];
        est.stderr_[c] = pools.comb[g * q + c].stderr_of_mean();
    }
    est.pt_abs_f_kstar = std::pow(pools.abs_f[g].mean(), 1.0 / kstar);
    est.btt_ratio = phi_norm > 0.0 ? std::sqrt(t) * norm2(est.value) / phi_norm : 0.0;
    return est;
}

}  // namespace

std::vector<IntrinsicDerivativeEstimate> frozen_flow_bismut_grid(
    const CoefficientModel& model, const EmpiricalMeasure& mu, const Payoff& f,
    const PerturbationDirection& phi, std::span<const double> t_grid,
    const EstimatorConfig& cfg) {
    model.require_smooth_for_bismut();
    if (t_grid.empty()) fail("InvalidArgument", "empty t grid");
    const std::size_t q = f.dim;
    const double k = model.constants.k;
    const double kstar = k / (k - 1.0);

    SimConfig sim = cfg.sim;
    sim.t_end = *std::max_element(t_grid.begin(), t_grid.end());
    sim.store_increments = true;

    TermPools pools;
    pools.init(t_grid.size(), q);
    double phi_norm = 0.0;

    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        SimConfig rsim = sim;
        rsim.seed = sim.seed + rep;
        const auto bundle = simulate_mckean_vlasov(model, mu, rsim);
        const auto flow = FrozenFlow::from_bundle(bundle, model);
        const auto snap = snap_step_indices(bundle, t_grid);
        const auto jac = jacobian_flow_init(model, bundle, flow, phi_on_initial(phi, bundle));
        if (rep == 0) phi_norm = phi.norm_lk(bundle.cloud_at(0), k);

        std::vector<double> s_i;
        ito_accumulate(
            model, bundle,
            [&](std::size_t j, std::vector<double>& a) {
                std::copy(jac.flow.begin() + j * bundle.n * bundle.d,
                          jac.flow.begin() + (j + 1) * bundle.n * bundle.d, a.begin());
            },
            [](std::size_t) { return 1.0; }, snap, s_i);

        std::vector<double> fx(bundle.n * q), terms(bundle.n), zeros(bundle.n, 0.0);
        for (std::size_t g = 0; g < t_grid.size(); ++g) {
            const std::size_t jt = snap[g];
            for (std::size_t i = 0; i < bundle.n; ++i)
                f.f(bundle.state(jt, i), {fx.data() + i * q, q});
            for (std::size_t c = 0; c < q; ++c) {
                for (std::size_t i = 0; i < bundle.n; ++i)
                    terms[i] = fx[i * q + c] * s_i[g * bundle.n + i] / t_grid[g];
                pools.i_term[g * q + c].add(terms);
                pools.comb[g * q + c].add(terms);
                pools.n_term[g * q + c].add(zeros);
                pools.nt_term[g * q + c].add(zeros);
            }
            for (std::size_t i = 0; i < bundle.n; ++i) {
                double s = 0.0;
                for (std::size_t c = 0; c < q; ++c) s += fx[i * q + c] * fx[i * q + c];
                terms[i] = std::pow(std::sqrt(s), kstar);
            }
            pools.abs_f[g].add(terms);
        }
    }

    std::vector<IntrinsicDerivativeEstimate> out;
    for (std::size_t g = 0; g < t_grid.size(); ++g)
        out.push_back(finalize_estimate(pools, g, q, t_grid[g], phi_norm, kstar,
                                        cfg.reps * cfg.sim.n_particles, 0));
    return out;
}

IntrinsicDerivativeEstimate frozen_flow_bismut(const CoefficientModel& model,
                                               const EmpiricalMeasure& mu, const Payoff& f,
                                               const PerturbationDirection& phi, double t,
                                               const EstimatorConfig& cfg) {
    const double grid[1] = {t};
    return frozen_flow_bismut_grid(model, mu, f, phi, grid, cfg)[0];
}

// ---------------------------------------------------------------------------
// Picard system for D^I P_t V

PicardResult picard_v_system(const CoefficientModel& model, const EmpiricalMeasure& mu,
                             const PerturbationDirection& phi, std::span<const double> t_grid,
                             const EstimatorConfig& cfg) {
    model.require_smooth_for_bismut();
    const auto* s = model.structured();
    if (!s) fail("InvalidArgument", "picard_v_system needs a structured mean field");
    if (t_grid.empty()) fail("InvalidArgument", "empty t grid");
    const std::size_t mb = s->m_b;
    const auto& mod = model.constants.modulus;
    const double k = model.constants.k;
    const double r_arg = 1.0 + model.constants.kappa * mu.moment_norm(k);

    SimConfig sim = cfg.sim;
    sim.t_end = *std::max_element(t_grid.begin(), t_grid.end());
    sim.store_increments = true;

    const auto bundle = simulate_mckean_vlasov(model, mu, sim);
    const auto flow = FrozenFlow::from_bundle(bundle, model);
    const std::size_t n = bundle.n, d = bundle.d;
    const std::size_t steps = bundle.steps();

    // geometric grid refined near 0 (the alpha(sqrt t)/sqrt(t) weight is
    // singular there), merged with the requested times, snapped to steps
    std::vector<std::size_t> node_steps;
    {
        const double tmax = sim.t_end;
        for (std::size_t g = 0; g < cfg.picard_grid; ++g) {
            const double frac = std::pow(0.7, static_cast<double>(cfg.picard_grid - 1 - g));
            const std::size_t j = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(frac * tmax / sim.dt)));
            node_steps.push_back(std::min(j, steps));
        }
        for (double t : t_grid) node_steps.push_back(bundle.snapshot_index(t));
        std::sort(node_steps.begin(), node_steps.end());
        node_steps.erase(std::unique(node_steps.begin(), node_steps.end()), node_steps.end());
    }
    const std::size_t gN = node_steps.size();
    std::vector<double> node_t(gN);
    for (std::size_t g = 0; g < gN; ++g) node_t[g] = bundle.times[node_steps[g]];

    // weight W(t) = sqrt(t * tilde_a(r sqrt t)) / a(r sqrt t)
    auto weight_W = [&](double t) {
        const double rsq = r_arg * std::sqrt(t);
        return std::sqrt(t * mod.tilde_alpha(rsq)) / mod(rsq);
    };
    std::vector<double> w_node(gN);
    for (std::size_t g = 0; g < gN; ++g) w_node[g] = weight_W(node_t[g]);

    // constant-in-v pieces: the derivative flows and both fixed integrals
    const bool has_dl = static_cast<bool>(s->dl_B);
    std::optional<MeanFieldDerivativeFlow> dflow;
    if (has_dl) dflow.emplace(mean_field_derivative_flow(model, bundle, flow, phi));
    const auto jac = jacobian_flow_init(model, bundle, flow, phi_on_initial(phi, bundle));

    std::vector<double> s_iv;  // Ito sums for I^V
    ito_accumulate(
        model, bundle,
        [&](std::size_t j, std::vector<double>& a) {
            std::copy(jac.flow.begin() + j * n * d, jac.flow.begin() + (j + 1) * n * d,
                      a.begin());
        },
        [](std::size_t) { return 1.0; }, node_steps, s_iv);

    std::vector<double> s_nt;  // Ito sums for the Lions cross term
    if (has_dl) {
        std::vector<double> loo;
        ito_accumulate(
            model, bundle,
            [&](std::size_t j, std::vector<double>& a) {
                lions_cross_average(*s, bundle, flow, j, dflow->flow.data() + j * n * d, loo);
                std::copy(loo.begin(), loo.end(), a.begin());
            },
            [](std::size_t) { return 1.0; }, node_steps, s_nt);
    } else {
        s_nt.assign(gN * n, 0.0);
    }

    // payoff values V(X_t) at the nodes
    std::vector<double> v_at_nodes(gN * n * mb);
    for (std::size_t g = 0; g < gN; ++g) {
        const std::size_t jt = node_steps[g];
        #pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            s->V(bundle.state(jt, i), {v_at_nodes.data() + (g * n + i) * mb, mb});
    }

    auto project = [&](std::span<const double> s_vals, std::size_t g, std::size_t c,
                       std::vector<double>& terms) {
        for (std::size_t i = 0; i < n; ++i)
            terms[i] = v_at_nodes[(g * n + i) * mb + c] * s_vals[g * n + i];
        return pairwise_mean(terms);
    };

    std::vector<double> i_v(gN * mb), nt_fixed(gN * mb);
    {
        std::vector<double> terms(n);
        for (std::size_t g = 0; g < gN; ++g)
            for (std::size_t c = 0; c < mb; ++c) {
                i_v[g * mb + c] = project(s_iv, g, c, terms) / node_t[g];
                nt_fixed[g * mb + c] = has_dl ? project(s_nt, g, c, terms) : 0.0;
            }
    }

    // anchor for D at t = 0: D(0) = mu( dV[phi] )
    std::vector<double> d_zero(mb, 0.0);
    {
        std::vector<double> pbuf(d), vbuf(mb), comp(n);
        std::vector<double> all(n * mb);
        for (std::size_t i = 0; i < n; ++i) {
            phi.phi(bundle.state(0, i), pbuf);
            s->grad_V(bundle.state(0, i), pbuf, vbuf);
            std::copy(vbuf.begin(), vbuf.end(), all.begin() + i * mb);
        }
        for (std::size_t c = 0; c < mb; ++c) {
            for (std::size_t i = 0; i < n; ++i) comp[i] = all[i * mb + c];
            d_zero[c] = pairwise_mean(comp);
        }
    }

    PicardResult res;
    res.d_zero = d_zero;
    res.t_grid = node_t;
    res.v.assign(gN * mb, 0.0);
    res.d_intrinsic.assign(gN * mb, 0.0);

    std::vector<double> d_path(gN * mb, 0.0);  // D^m = v^m / W on the nodes
    std::vector<double> s_nv(gN * n), v_new(gN * mb), terms(n);
    for (std::size_t it = 0; it < cfg.picard_max_iter; ++it) {
        // I~^{V,1}(v^m): integrand grad_z B along D^m interpolated in t. The
        // singular Picard weight cancels against the v <-> D rescaling, which
        // is why the integrand carries D rather than v.
        ito_accumulate(
            model, bundle,
            [&](std::size_t j, std::vector<double>& a) {
                const double t = bundle.times[j];
                std::vector<double> dv(mb);
                for (std::size_t c = 0; c < mb; ++c)
                    dv[c] = interp_path(node_t, d_path, mb, c, t, d_zero[c]);
                #pragma omp parallel
                {
                    std::vector<double> gz(d);
                    #pragma omp for schedule(static)
                    for (std::size_t i = 0; i < n; ++i) {
                        s->grad_z_B(t, bundle.state(j, i), flow.measure_at(j), flow.z[j], dv,
                                    gz);
                        std::copy(gz.begin(), gz.end(), a.begin() + i * d);
                    }
                }
            },
            [](std::size_t) { return 1.0; }, node_steps, s_nv);

        double sup_diff = 0.0;
        for (std::size_t g = 0; g < gN; ++g)
            for (std::size_t c = 0; c < mb; ++c) {
                const double i1 = project(s_nv, g, c, terms);
                const double target =
                    w_node[g] * (i_v[g * mb + c] + i1 + nt_fixed[g * mb + c]);
                sup_diff = std::max(sup_diff, std::fabs(target - res.v[g * mb + c]));
                v_new[g * mb + c] = target;
            }
        res.v = v_new;
        for (std::size_t g = 0; g < gN; ++g)
            for (std::size_t c = 0; c < mb; ++c)
                d_path[g * mb + c] = res.v[g * mb + c] / w_node[g];
        res.sup_diffs.push_back(sup_diff);
        res.iterations = static_cast<int>(it) + 1;
        if (sup_diff <= cfg.picard_tol) {
            res.converged = true;
            break;
        }
    }
    res.d_intrinsic = d_path;
    if (!res.converged && res.sup_diffs.size() >= 2 &&
        res.sup_diffs.back() > res.sup_diffs.front())
        fail("NoConvergence", "picard iteration diverging; see sup_diffs trace");
    return res;
}

// ---------------------------------------------------------------------------
// Full intrinsic derivative

std::vector<IntrinsicDerivativeEstimate> intrinsic_derivative_grid(
    const CoefficientModel& model, const EmpiricalMeasure& mu, const Payoff& f,
    const PerturbationDirection& phi, std::span<const double> t_grid,
    const EstimatorConfig& cfg) {
    if (!model.has_mean_field()) {
        // degenerate reduction: no measure coupling, the formula is I_t^f alone
        return frozen_flow_bismut_grid(model, mu, f, phi, t_grid, cfg);
    }
    model.require_smooth_for_bismut();
    const auto* s = model.structured();
    if (!s) fail("MissingDerivativeCallbacks", "intrinsic derivative needs a structured drift");
    const std::size_t q = f.dim, mb = s->m_b;
    const double k = model.constants.k;
    const double kstar = k / (k - 1.0);

    // D^I P_s V estimated once on an independent noise stream
    EstimatorConfig pic_cfg = cfg;
    pic_cfg.sim.seed = cfg.sim.seed ^ 0x9E3779B97F4A7C15ull;
    const auto picard = picard_v_system(model, mu, phi, t_grid, pic_cfg);

    const std::vector<double>& d_zero = picard.d_zero;  // D(0) = mu( dV[phi] )

    SimConfig sim = cfg.sim;
    sim.t_end = *std::max_element(t_grid.begin(), t_grid.end());
    sim.store_increments = true;

    TermPools pools;
    pools.init(t_grid.size(), q);
    double phi_norm = 0.0;

    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        SimConfig rsim = sim;
        rsim.seed = sim.seed + rep;
        const auto bundle = simulate_mckean_vlasov(model, mu, rsim);
        const auto flow = FrozenFlow::from_bundle(bundle, model);
        const auto snap = snap_step_indices(bundle, t_grid);
        const std::size_t n = bundle.n, d = bundle.d;
        if (rep == 0) phi_norm = phi.norm_lk(bundle.cloud_at(0), k);

        const auto jac = jacobian_flow_init(model, bundle, flow, phi_on_initial(phi, bundle));
        std::vector<double> s_i;
        ito_accumulate(
            model, bundle,
            [&](std::size_t j, std::vector<double>& a) {
                std::copy(jac.flow.begin() + j * n * d, jac.flow.begin() + (j + 1) * n * d,
                          a.begin());
            },
            [](std::size_t) { return 1.0; }, snap, s_i);

        // N_s: grad_z B along the picard path for D^I P_s V
        std::vector<double> s_n;
        ito_accumulate(
            model, bundle,
            [&](std::size_t j, std::vector<double>& a) {
                const double t = bundle.times[j];
                std::vector<double> dv(mb);
                for (std::size_t c = 0; c < mb; ++c)
                    dv[c] =
                        interp_path(picard.t_grid, picard.d_intrinsic, mb, c, t, d_zero[c]);
                #pragma omp parallel
                {
                    std::vector<double> gz(d);
                    #pragma omp for schedule(static)
                    for (std::size_t i = 0; i < n; ++i) {
                        s->grad_z_B(t, bundle.state(j, i), flow.measure_at(j), flow.z[j], dv,
                                    gz);
                        std::copy(gz.begin(), gz.end(), a.begin() + i * d);
                    }
                }
            },
            [](std::size_t) { return 1.0; }, snap, s_n);

        // N~_s: leave-one-out Lions kernel against grad_phi X
        std::vector<double> s_nt;
        if (s->dl_B) {
            const auto dflow = mean_field_derivative_flow(model, bundle, flow, phi);
            std::vector<double> loo;
            ito_accumulate(
                model, bundle,
                [&](std::size_t j, std::vector<double>& a) {
                    lions_cross_average(*s, bundle, flow, j,
                                        dflow.flow.data() + j * n * d, loo);
                    std::copy(loo.begin(), loo.end(), a.begin());
                },
                [](std::size_t) { return 1.0; }, snap, s_nt);
        } else {
            s_nt.assign(snap.size() * n, 0.0);
        }

        std::vector<double> fx(n * q), terms(n);
        for (std::size_t g = 0; g < t_grid.size(); ++g) {
            const std::size_t jt = snap[g];
            for (std::size_t i = 0; i < n; ++i) f.f(bundle.state(jt, i), {fx.data() + i * q, q});
            for (std::size_t c = 0; c < q; ++c) {
                for (std::size_t i = 0; i < n; ++i)
                    terms[i] = fx[i * q + c] * s_i[g * n + i] / t_grid[g];
                pools.i_term[g * q + c].add(terms);
                for (std::size_t i = 0; i < n; ++i)
                    terms[i] = fx[i * q + c] * s_n[g * n + i];
                pools.n_term[g * q + c].add(terms);
                for (std::size_t i = 0; i < n; ++i)
                    terms[i] = fx[i * q + c] * s_nt[g * n + i];
                pools.nt_term[g * q + c].add(terms);
                for (std::size_t i = 0; i < n; ++i)
                    terms[i] = fx[i * q + c] *
                               (s_i[g * n + i] / t_grid[g] + s_n[g * n + i] + s_nt[g * n + i]);
                pools.comb[g * q + c].add(terms);
            }
            for (std::size_t i = 0; i < n; ++i) {
                double sum = 0.0;
                for (std::size_t c = 0; c < q; ++c) sum += fx[i * q + c] * fx[i * q + c];
                terms[i] = std::pow(std::sqrt(sum), kstar);
            }
            pools.abs_f[g].add(terms);
        }
    }

    std::vector<IntrinsicDerivativeEstimate> out;
    for (std::size_t g = 0; g < t_grid.size(); ++g)
        out.push_back(finalize_estimate(pools, g, q, t_grid[g], phi_norm, kstar,
                                        cfg.reps * cfg.sim.n_particles, picard.iterations));
    return out;
}

IntrinsicDerivativeEstimate intrinsic_derivative(const CoefficientModel& model,
                                                 const EmpiricalMeasure& mu, const Payoff& f,
                                                 const PerturbationDirection& phi, double t,
                                                 const EstimatorConfig& cfg) {
    const double grid[1] = {t};
    return intrinsic_derivative_grid(model, mu, f, phi, grid, cfg)[0];
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

FiniteDifferenceEstimate finite_difference_intrinsic(const CoefficientModel& model,
                                                     const EmpiricalMeasure& mu, const Payoff& f,
                                                     const PerturbationDirection& phi, double t,
                                                     std::span<const double> eps_list,
                                                     const EstimatorConfig& cfg) {
    if (eps_list.size() < 2) fail("InvalidArgument", "need >= 2 eps for Richardson");
    std::vector<double> eps(eps_list.begin(), eps_list.end());
    std::sort(eps.begin(), eps.end(), std::greater<>());
    const std::size_t q = f.dim;
    const std::size_t n = cfg.sim.n_particles;
    const std::size_t d = model.dim_x;

    SimConfig sim = cfg.sim;
    sim.t_end = t;
    sim.store_increments = false;

    std::vector<PoolAccum> value_pool(q), rich_pool(q);

    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        SimConfig rsim = sim;
        rsim.seed = sim.seed + rep;
        const auto x0 = sample_initial(mu, n, rsim.seed);
        std::vector<double> dphi(n * d);
        for (std::size_t i = 0; i < n; ++i)
            phi.phi({x0.data() + i * d, d}, {dphi.data() + i * d, d});

        // per-eps central differences, identical noise stream throughout
        std::vector<std::vector<double>> diffs;  // eps -> (n x q)
        for (double e : eps) {
            std::vector<double> xp(n * d), xm(n * d);
            for (std::size_t c = 0; c < n * d; ++c) {
                xp[c] = x0[c] + e * dphi[c];
                xm[c] = x0[c] - e * dphi[c];
            }
            const auto tp = simulate_terminal_state(model, xp, rsim);
            const auto tm = simulate_terminal_state(model, xm, rsim);
            std::vector<double> dq(n * q);
            std::vector<double> fp(q), fm(q);
            for (std::size_t i = 0; i < n; ++i) {
                f.f({tp.data() + i * d, d}, fp);
                f.f({tm.data() + i * d, d}, fm);
                for (std::size_t c = 0; c < q; ++c)
                    dq[i * q + c] = (fp[c] - fm[c]) / (2.0 * e);
            }
            diffs.push_back(std::move(dq));
        }

        const double rho = eps[0] / eps[1];
        const double rho2 = rho * rho;
        std::vector<double> terms(n);
        for (std::size_t c = 0; c < q; ++c) {
            for (std::size_t i = 0; i < n; ++i) terms[i] = diffs.back()[i * q + c];
            value_pool[c].add(terms);
            for (std::size_t i = 0; i < n; ++i)
                terms[i] =
                    (rho2 * diffs[1][i * q + c] - diffs[0][i * q + c]) / (rho2 - 1.0);
            rich_pool[c].add(terms);
        }
    }

    FiniteDifferenceEstimate out;
    out.n_paths = cfg.reps * n;
    out.value.resize(q);
    out.richardson.resize(q);
    out.stderr_.resize(q);
    for (std::size_t c = 0; c < q; ++c) {
        out.value[c] = value_pool[c].mean();
        out.richardson[c] = rich_pool[c].mean();
        out.stderr_[c] = rich_pool[c].stderr_of_mean();
    }
    return out;
}

}  // namespace mvsde
