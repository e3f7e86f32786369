#include "mvsde/model.hpp"

#include <algorithm>
#include <cmath>

#include "mvsde/philox.hpp"
#include "mvsde/transport.hpp"

namespace mvsde {

void CoefficientModel::eval_b0(double t, std::span<const double> x, std::span<double> out) const {
    if (!b0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    b0(t, x, out);
    const double n = norm2(out);
    if (!std::isfinite(n)) fail("CallbackFailure", "b0 returned non-finite value");
    if (n > b0_cap) {
        const double f = b0_cap / n;
        for (auto& v : out) v *= f;
    }
}

void CoefficientModel::eval_mean_field(double t, std::span<const double> x,
                                       const EmpiricalMeasure* mu, std::span<const double> z,
                                       std::span<double> out) const {
    if (const auto* s = structured()) {
        s->B(t, x, s->uses_measure ? mu : nullptr, z, out);
    } else if (const auto* g = general()) {
        if (mu == nullptr) fail("InvalidArgument", "general mean-field drift needs the cloud");
        g->b1(t, x, *mu, out);
    } else {
        std::fill(out.begin(), out.end(), 0.0);
    }
    for (double v : out)
        if (!std::isfinite(v)) fail("CallbackFailure", "mean-field drift non-finite");
}

void CoefficientModel::eval_zeta(double t, std::span<const double> x,
                                 std::span<double> out_md) const {
    const std::size_t d = dim_x, m = dim_w;
    std::vector<double> sig(d * m);
    sigma(t, x, sig);
    // G = sigma sigma^T
    std::vector<double> g(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < m; ++c) s += sig[i * m + c] * sig[j * m + c];
            g[i * d + j] = s;
        }
    // zeta columns: solve G y = e_i, then zeta(:, i) = sigma^T y
    for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> gc = g, e(d, 0.0);
        e[i] = 1.0;
        if (!lu_solve(gc, d, e)) fail("SingularDiffusion", "sigma sigma^T not invertible");
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) s += sig[c * m + r] * e[c];
            out_md[r * d + i] = s;
        }
    }
}

void CoefficientModel::require_smooth_for_bismut() const {
    if (!sigma_constant && !grad_sigma)
        fail("MissingDerivativeCallbacks", "grad_sigma required for non-constant sigma");
    if (b0 && !grad_b0)
        fail("MissingDerivativeCallbacks",
             "grad_b0 required; singular b0 models are simulation-only");
    if (const auto* s = structured()) {
        if (!s->grad_x_B || !s->grad_z_B || !s->grad_V)
            fail("MissingDerivativeCallbacks", "structured model lacks grad_x_B/grad_z_B/grad_V");
    }
}

// ---------------------------------------------------------------------------
// Gallery

namespace {

FieldFn identity_sigma(std::size_t d) {
    return [d](double, std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) out[i * d + i] = 1.0;
    };
}

double get_param(const std::map<std::string, double>& p, const std::string& key, double dflt) {
    auto it = p.find(key);
    return it == p.end() ? dflt : it->second;
}

CoefficientModel pure_bm(const std::map<std::string, double>& p) {
    CoefficientModel m;
    m.name = "pure_bm";
    m.dim_x = m.dim_w = static_cast<std::size_t>(get_param(p, "dim", 1));
    m.sigma = identity_sigma(m.dim_x);
    m.sigma_constant = true;
    m.constants = {1.0, 0.0, 2.0, DiniModulus::power(1.0, 0.5)};
    return m;
}

CoefficientModel mean_field_ou(const std::map<std::string, double>& p) {
    const double a = get_param(p, "a", 0.5);
    CoefficientModel m;
    m.name = "mean_field_ou";
    m.dim_x = m.dim_w = 1;
    m.sigma = identity_sigma(1);
    m.sigma_constant = true;
    StructuredMeanField s;
    s.m_b = 1;
    s.V = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
    s.grad_V = [](std::span<const double>, std::span<const double> dir, std::span<double> out) {
        out[0] = dir[0];
    };
    s.B = [a](double, std::span<const double> x, const EmpiricalMeasure*,
              std::span<const double> z, std::span<double> out) { out[0] = a * z[0] - x[0]; };
    s.grad_x_B = [](double, std::span<const double>, const EmpiricalMeasure*,
                    std::span<const double>, std::span<const double> dx,
                    std::span<double> out) { out[0] = -dx[0]; };
    s.grad_z_B = [a](double, std::span<const double>, const EmpiricalMeasure*,
                     std::span<const double>, std::span<const double> dz,
                     std::span<double> out) { out[0] = a * dz[0]; };
    m.mean_field = std::move(s);
    // V = id has [V]_alpha = 1 exactly for the linear modulus alpha(r) = r,
    // which is a legitimate class member (its square satisfies the Dini
    // condition).
    m.constants = {std::max(1.0, std::fabs(a)), std::max(1.0, std::fabs(a)), 2.0,
                   DiniModulus::power(1.0, 1.0)};
    return m;
}

CoefficientModel kuramoto_like(const std::map<std::string, double>& p) {
    const double c = get_param(p, "coupling", 1.0);
    CoefficientModel m;
    m.name = "kuramoto_like";
    m.dim_x = m.dim_w = 1;
    m.sigma = identity_sigma(1);
    m.sigma_constant = true;
    StructuredMeanField s;
    s.m_b = 2;
    s.V = [](std::span<const double> x, std::span<double> out) {
        out[0] = std::sin(x[0]);
        out[1] = std::cos(x[0]);
    };
    s.grad_V = [](std::span<const double> x, std::span<const double> dir, std::span<double> out) {
        out[0] = std::cos(x[0]) * dir[0];
        out[1] = -std::sin(x[0]) * dir[0];
    };
    // c * int sin(y - x) mu(dy) = c (z1 cos x - z2 sin x)
    s.B = [c](double, std::span<const double> x, const EmpiricalMeasure*,
              std::span<const double> z, std::span<double> out) {
        out[0] = c * (z[0] * std::cos(x[0]) - z[1] * std::sin(x[0]));
    };
    s.grad_x_B = [c](double, std::span<const double> x, const EmpiricalMeasure*,
                     std::span<const double> z, std::span<const double> dx,
                     std::span<double> out) {
        out[0] = -c * (z[0] * std::sin(x[0]) + z[1] * std::cos(x[0])) * dx[0];
    };
    s.grad_z_B = [c](double, std::span<const double> x, const EmpiricalMeasure*,
                     std::span<const double>, std::span<const double> dz,
                     std::span<double> out) {
        out[0] = c * (dz[0] * std::cos(x[0]) - dz[1] * std::sin(x[0]));
    };
    m.mean_field = std::move(s);
    // |V(x) - V(y)| = 2 |sin((x-y)/2)| <= min(|x-y|, 2)
    m.constants = {std::max(1.0, 2.0 * std::fabs(c)), 0.0, 2.0, DiniModulus::capped_linear(2.0)};
    return m;
}

CoefficientModel bounded_b1_tanh(const std::map<std::string, double>& p) {
    const double a = get_param(p, "a", 1.0);
    CoefficientModel m;
    m.name = "bounded_b1_tanh";
    m.dim_x = m.dim_w = 1;
    m.sigma = identity_sigma(1);
    m.sigma_constant = true;
    StructuredMeanField s;
    s.m_b = 1;
    s.V = [](std::span<const double> x, std::span<double> out) { out[0] = x[0]; };
    s.grad_V = [](std::span<const double>, std::span<const double> dir, std::span<double> out) {
        out[0] = dir[0];
    };
    s.B = [a](double, std::span<const double> x, const EmpiricalMeasure*,
              std::span<const double> z, std::span<double> out) {
        out[0] = std::tanh(a * z[0] - x[0]);
    };
    s.grad_x_B = [a](double, std::span<const double> x, const EmpiricalMeasure*,
                     std::span<const double> z, std::span<const double> dx,
                     std::span<double> out) {
        const double u = std::tanh(a * z[0] - x[0]);
        out[0] = -(1.0 - u * u) * dx[0];
    };
    s.grad_z_B = [a](double, std::span<const double> x, const EmpiricalMeasure*,
                     std::span<const double> z, std::span<const double> dz,
                     std::span<double> out) {
        const double u = std::tanh(a * z[0] - x[0]);
        out[0] = a * (1.0 - u * u) * dz[0];
    };
    m.mean_field = std::move(s);
    m.constants = {std::max(1.0, std::fabs(a)), 0.0, 2.0, DiniModulus::power(1.0, 1.0)};
    return m;
}

CoefficientModel singular_b0_power(const std::map<std::string, double>& p) {
    const double gamma = get_param(p, "gamma", 0.25);
    const double cap = get_param(p, "cap", 1e3);
    CoefficientModel m;
    m.name = "singular_b0_power";
    m.dim_x = m.dim_w = 1;
    m.sigma = identity_sigma(1);
    m.sigma_constant = true;
    m.b0 = [gamma](double, std::span<const double> x, std::span<double> out) {
        const double ax = std::fabs(x[0]);
        out[0] = ax == 0.0 ? 0.0 : std::copysign(std::pow(ax, -gamma), x[0]);
    };
    m.b0_cap = cap;
    m.constants = {1.0, 0.0, 2.0, DiniModulus::power(1.0, 0.5)};
    return m;
}

}  // namespace

CoefficientModel make_gallery_model(const std::string& name,
                                    const std::map<std::string, double>& params) {
    if (name == "pure_bm") return pure_bm(params);
    if (name == "mean_field_ou") return mean_field_ou(params);
    if (name == "kuramoto_like") return kuramoto_like(params);
    if (name == "bounded_b1_tanh") return bounded_b1_tanh(params);
    if (name == "singular_b0_power") return singular_b0_power(params);
    fail("InvalidArgument", "unknown gallery model: " + name);
}

std::vector<std::string> gallery_model_names() {
    return {"pure_bm", "mean_field_ou", "kuramoto_like", "bounded_b1_tanh", "singular_b0_power"};
}

// ---------------------------------------------------------------------------
// Audits

namespace {

EmpiricalMeasure random_audit_cloud(std::uint64_t seed, std::uint64_t tag, std::size_t n,
                                    std::size_t d, double radius) {
    std::vector<double> pts(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            pts[i * d + c] =
                radius * philox_normal(seed, RngStream::Audit, tag, i, static_cast<std::uint32_t>(c));
    return EmpiricalMeasure(std::move(pts), d);
}

// b1 as evaluated against a concrete cloud (z = mu(V) for structured models)
void eval_b1_at(const CoefficientModel& model, double t, std::span<const double> x,
                const EmpiricalMeasure& mu, std::span<double> out) {
    if (const auto* s = model.structured()) {
        std::vector<double> z(s->m_b, 0.0);
        for (std::size_t c = 0; c < s->m_b; ++c) {
            std::vector<double> terms(mu.size());
            std::vector<double> vbuf(s->m_b);
            for (std::size_t i = 0; i < mu.size(); ++i) {
                s->V(mu.point(i), vbuf);
                terms[i] = mu.weight(i) * vbuf[c];
            }
            z[c] = pairwise_sum(terms);
        }
        model.eval_mean_field(t, x, &mu, z, out);
    } else {
        model.eval_mean_field(t, x, &mu, {}, out);
    }
}

}  // namespace

AuditReport audit_assumption_A(const CoefficientModel& model, const AuditSampleSpec& spec) {
    AuditReport rep;
    const std::size_t d = model.dim_x;
    const double K = model.constants.K;
    const double kappa = model.constants.kappa;
    const double kk = model.constants.k;
    const auto& mod = model.constants.modulus;

    std::vector<double> times(spec.n_time);
    for (std::size_t i = 0; i < spec.n_time; ++i)
        times[i] = static_cast<double>(i) / static_cast<double>(spec.n_time);

    // sample points
    std::vector<std::vector<double>> xs(spec.n_space, std::vector<double>(d));
    for (std::size_t i = 0; i < spec.n_space; ++i)
        for (std::size_t c = 0; c < d; ++c)
            xs[i][c] = spec.space_radius *
                       philox_normal(spec.seed, RngStream::Audit, 1, i, static_cast<std::uint32_t>(c));

    std::vector<EmpiricalMeasure> clouds;
    for (std::size_t i = 0; i < 2 * spec.n_measure_pairs; ++i)
        clouds.push_back(random_audit_cloud(spec.seed, 100 + i, spec.cloud_size, d, 1.5));

    rep.samples_used = spec.n_time * spec.n_space * spec.n_measure_pairs;

    if (model.has_mean_field()) {
        AuditCheck lip{"b1_lipschitz", true, 0.0, K * (1.0 + spec.tol), ""};
        AuditCheck grw{"b1_growth", true, 0.0, 1.0 + spec.tol,
                       "ratio |b1| / (K + kappa|x| + kappa ||mu||_k)"};
        AuditCheck rep_check{"b1_reentrant", true, 0.0, 0.0, "two calls agree bitwise"};
        std::vector<double> bx(d), by(d), bx2(d);
        for (double t : times) {
            for (std::size_t pi = 0; pi < spec.n_measure_pairs; ++pi) {
                const auto& mu = clouds[2 * pi];
                const auto& nu = clouds[2 * pi + 1];
                const double wk = wasserstein_k(mu, nu, kk).value;
                const double wa = wasserstein_alpha(mu, nu, mod).value;
                for (std::size_t i = 0; i + 1 < spec.n_space; i += 2) {
                    eval_b1_at(model, t, xs[i], mu, bx);
                    eval_b1_at(model, t, xs[i + 1], nu, by);
                    std::vector<double> gap(d);
                    double dxn = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        gap[c] = bx[c] - by[c];
                        dxn += (xs[i][c] - xs[i + 1][c]) * (xs[i][c] - xs[i + 1][c]);
                    }
                    const double denom = std::sqrt(dxn) + wa + wk;
                    if (denom > 1e-12)
                        lip.measured = std::max(lip.measured, norm2(gap) / denom);

                    const double growth_bound =
                        K + kappa * norm2(xs[i]) + kappa * mu.moment_norm(kk);
                    grw.measured = std::max(grw.measured, norm2(bx) / growth_bound);

                    eval_b1_at(model, t, xs[i], mu, bx2);
                    for (std::size_t c = 0; c < d; ++c)
                        if (bx[c] != bx2[c]) rep_check.pass = false;
                }
            }
        }
        lip.pass = lip.measured <= lip.bound;
        grw.pass = grw.measured <= grw.bound;
        rep.checks.push_back(lip);
        rep.checks.push_back(grw);
        rep.checks.push_back(rep_check);
    }

    {
        // uniform ellipticity and continuity of sigma sigma^T
        AuditCheck ell{"sigma_elliptic", true, 0.0, 0.0, "max ||(sigma sigma^T)^{-1}||_F"};
        AuditCheck cont{"sigma_continuity", true, 0.0, 0.0,
                        "max ||G(x) - G(x')||_F over |x - x'| <= 1e-3"};
        std::vector<double> sig(d * model.dim_w), g(d * d);
        for (double t : times) {
            for (const auto& x : xs) {
                model.sigma(t, x, sig);
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                        double s = 0;
                        for (std::size_t c = 0; c < model.dim_w; ++c)
                            s += sig[i * model.dim_w + c] * sig[j * model.dim_w + c];
                        g[i * d + j] = s;
                    }
                // Frobenius norm of the inverse via column solves
                double fro = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    std::vector<double> gc = g, e(d, 0.0);
                    e[i] = 1.0;
                    if (!lu_solve(gc, d, e)) {
                        ell.pass = false;
                        break;
                    }
                    for (double v : e) fro += v * v;
                }
                ell.measured = std::max(ell.measured, std::sqrt(fro));
                // continuity probe
                std::vector<double> x2(x);
                x2[0] += 1e-3;
                std::vector<double> sig2(d * model.dim_w);
                model.sigma(t, x2, sig2);
                double diff = 0.0;
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                        double s = 0;
                        for (std::size_t c = 0; c < model.dim_w; ++c)
                            s += sig2[i * model.dim_w + c] * sig2[j * model.dim_w + c];
                        const double dd = s - g[i * d + j];
                        diff += dd * dd;
                    }
                cont.measured = std::max(cont.measured, std::sqrt(diff));
            }
        }
        ell.bound = 1e6;
        ell.pass = ell.pass && ell.measured < ell.bound;
        cont.bound = 0.1;
        cont.pass = cont.measured <= cont.bound;
        rep.checks.push_back(ell);
        rep.checks.push_back(cont);
    }

    if (const auto* s = model.structured()) {
        // [V]_alpha <= 1 on sampled pairs
        AuditCheck va{"V_alpha_modulus", true, 0.0, 1.0 + spec.tol, "[V]_alpha on sampled pairs"};
        std::vector<double> v1(s->m_b), v2(s->m_b);
        for (std::size_t i = 0; i + 1 < spec.n_space; ++i) {
            s->V(xs[i], v1);
            s->V(xs[i + 1], v2);
            double dv = 0.0, dx = 0.0;
            for (std::size_t c = 0; c < s->m_b; ++c) dv += (v1[c] - v2[c]) * (v1[c] - v2[c]);
            for (std::size_t c = 0; c < d; ++c)
                dx += (xs[i][c] - xs[i + 1][c]) * (xs[i][c] - xs[i + 1][c]);
            const double den = mod(std::min(std::sqrt(dx), mod.r_max()));
            if (den > 1e-12) va.measured = std::max(va.measured, std::sqrt(dv) / den);
        }
        va.pass = va.measured <= va.bound;
        rep.checks.push_back(va);
    }

    rep.passes = true;
    for (const auto& c : rep.checks) rep.passes = rep.passes && c.pass;
    return rep;
}

bool scr_K_check(double p, double q, std::size_t d) {
    if (!(p > 0.0) || !(q > 0.0)) fail("InvalidArgument", "p, q must be positive");
    return p > 2.0 && q > 2.0 &&
           static_cast<double>(d) / p + 2.0 / q < 1.0;
}

IntegrabilityProbe localized_Lpq_norm(
    const std::function<double(double t, std::span<const double> x)>& f, double p, double q,
    double T, std::size_t dim, const LatticeSpec& lattice) {
    if (lattice.centers.empty()) fail("InvalidArgument", "lattice has no centers");
    IntegrabilityProbe probe;
    probe.p = p;
    probe.q = q;
    const int na = lattice.n_axis;
    const int nt = lattice.n_time;
    std::vector<double> x(dim);
    for (const auto& y : lattice.centers) {
        if (y.size() != dim) fail("DimensionMismatch", "lattice center dimension");
        double time_acc = 0.0;
        const double ht = T / nt;
        for (int it = 0; it < nt; ++it) {
            const double t = (it + 0.5) * ht;
            // midpoint tensor rule over the bounding box, ball-masked
            double inner = 0.0;
            const double h = 2.0 / na;
            std::vector<int> idx(dim, 0);
            while (true) {
                double r2 = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    x[c] = y[c] - 1.0 + (idx[c] + 0.5) * h;
                    r2 += (x[c] - y[c]) * (x[c] - y[c]);
                }
                if (r2 <= 1.0) {
                    const double v = std::pow(std::fabs(f(t, x)), p);
                    if (!std::isfinite(v))
                        fail("QuadratureOverflow", "non-integrable singularity hit the grid");
                    inner += v;
                }
                std::size_t c = 0;
                for (; c < dim; ++c) {
                    if (++idx[c] < na) break;
                    idx[c] = 0;
                }
                if (c == dim) break;
            }
            inner *= std::pow(h, static_cast<double>(dim));
            time_acc += std::pow(inner, q / p) * ht;
        }
        const double norm = std::pow(time_acc, 1.0 / q);
        if (!std::isfinite(norm)) fail("QuadratureOverflow", "Lpq norm overflow");
        if (norm > probe.estimated_norm) {
            probe.estimated_norm = norm;
            probe.center = y;
        }
    }
    return probe;
}

}  // namespace mvsde
