#include "mvsde/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace mvsde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassEps = 1e-15;

double pow_cost(double dist, double k) {
    if (k == 1.0) return dist;
    if (k == 2.0) return dist * dist;
    return std::pow(dist, k);
}

void fill_residuals(TransportPlan& plan, std::span<const double> a, std::span<const double> b) {
    std::vector<double> row(a.size(), 0.0), col(b.size(), 0.0);
    for (const auto& e : plan.entries) {
        row[e.i] += e.mass;
        col[e.j] += e.mass;
    }
    double rr = 0.0, cr = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) rr = std::max(rr, std::fabs(row[i] - a[i]));
    for (std::size_t j = 0; j < b.size(); ++j) cr = std::max(cr, std::fabs(col[j] - b[j]));
    plan.row_residual = rr;
    plan.col_residual = cr;
}

}  // namespace

std::vector<double> TransportPlan::dense(std::size_t n, std::size_t m) const {
    std::vector<double> out(n * m, 0.0);
    for (const auto& e : entries) out[e.i * m + e.j] += e.mass;
    return out;
}

// ---------------------------------------------------------------------------
// Exact solver: successive shortest paths with potentials. Exact up to
// floating point; the returned potentials certify optimality (reduced costs
// nonnegative, zero on the support).

TransportPlan exact_transport(std::span<const double> a, std::span<const double> b,
                              const std::function<double(std::size_t, std::size_t)>& cost) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0 || m == 0) fail("InvalidArgument", "empty marginal");
    if (n * m > 4000000) fail("SizeExceeded", "exact transport limited to 4e6 cost entries");

    std::vector<double> c(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            c[i * m + j] = cost(i, j);
            if (!(c[i * m + j] >= 0.0)) fail("NonFinite", "transport cost must be >= 0");
        }

    std::vector<double> flow(n * m, 0.0);
    std::vector<double> supply(a.begin(), a.end()), demand(b.begin(), b.end());
    std::vector<double> pi_l(n, 0.0), pi_r(m, 0.0);

    const std::size_t nodes = n + m;  // 0..n-1 left, n..n+m-1 right
    std::vector<double> dist(nodes);
    std::vector<int> parent(nodes);  // encodes the arc used to reach the node
    std::vector<char> done(nodes);

    const std::size_t max_rounds = 8 * (n + m) + 64;
    for (std::size_t round = 0; round < max_rounds; ++round) {
        double remaining = 0.0;
        for (double s : supply) remaining += s;
        if (remaining <= kMassEps * static_cast<double>(n)) break;

        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(parent.begin(), parent.end(), -1);
        std::fill(done.begin(), done.end(), 0);
        for (std::size_t i = 0; i < n; ++i)
            if (supply[i] > kMassEps) dist[i] = 0.0;

        // Dense Dijkstra; instance sizes here are small by construction.
        std::size_t best_sink = nodes;
        while (true) {
            std::size_t u = nodes;
            double du = kInf;
            for (std::size_t v = 0; v < nodes; ++v)
                if (!done[v] && dist[v] < du) { du = dist[v]; u = v; }
            if (u == nodes) break;
            done[u] = 1;
            if (u >= n) {
                const std::size_t j = u - n;
                if (demand[j] > kMassEps &&
                    (best_sink == nodes || du < dist[best_sink] - 1e-18)) {
                    best_sink = u;
                }
                // backward arcs j -> i where flow > 0
                for (std::size_t i = 0; i < n; ++i) {
                    if (flow[i * m + j] <= 0.0) continue;
                    const double rc = -c[i * m + j] - pi_l[i] + pi_r[j];
                    const double nd = du + std::max(0.0, rc);
                    if (nd < dist[i]) { dist[i] = nd; parent[i] = static_cast<int>(u); }
                }
            } else {
                const std::size_t i = u;
                for (std::size_t j = 0; j < m; ++j) {
                    const double rc = c[i * m + j] + pi_l[i] - pi_r[j];
                    const double nd = du + std::max(0.0, rc);
                    if (nd < dist[n + j]) {
                        dist[n + j] = nd;
                        parent[n + j] = static_cast<int>(u);
                    }
                }
            }
        }
        if (best_sink == nodes) fail("NonConvergence", "no augmenting path in exact transport");

        // bottleneck along the path
        double delta = demand[best_sink - n];
        for (std::size_t v = best_sink; parent[v] >= 0;) {
            const std::size_t p = static_cast<std::size_t>(parent[v]);
            if (v >= n) {
                // arrived via forward arc p -> v; no capacity bound
            } else {
                delta = std::min(delta, flow[v * m + (p - n)]);
            }
            v = p;
            if (parent[v] < 0) delta = std::min(delta, supply[v]);
        }
        // apply flow
        for (std::size_t v = best_sink; parent[v] >= 0;) {
            const std::size_t p = static_cast<std::size_t>(parent[v]);
            if (v >= n)
                flow[p * m + (v - n)] += delta;
            else
                flow[v * m + (p - n)] -= delta;
            v = p;
            if (parent[v] < 0) supply[v] -= delta;
        }
        demand[best_sink - n] -= delta;

        const double dcap = dist[best_sink];
        for (std::size_t i = 0; i < n; ++i) pi_l[i] += std::min(dist[i], dcap);
        for (std::size_t j = 0; j < m; ++j) pi_r[j] += std::min(dist[n + j], dcap);
    }

    TransportPlan plan;
    std::vector<double> cost_terms;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (flow[i * m + j] > 0.0) {
                plan.entries.push_back({static_cast<std::uint32_t>(i),
                                        static_cast<std::uint32_t>(j), flow[i * m + j]});
                cost_terms.push_back(flow[i * m + j] * c[i * m + j]);
            }
    plan.cost = cost_terms.empty() ? 0.0 : pairwise_sum(cost_terms);
    plan.dual_u.resize(n);
    plan.dual_v.resize(m);
    for (std::size_t i = 0; i < n; ++i) plan.dual_u[i] = -pi_l[i];
    for (std::size_t j = 0; j < m; ++j) plan.dual_v[j] = pi_r[j];
    double viol = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            viol = std::max(viol, plan.dual_u[i] + plan.dual_v[j] - c[i * m + j]);
    plan.dual_violation = viol;
    fill_residuals(plan, a, b);
    return plan;
}

std::vector<std::size_t> hungarian_assignment(
    std::size_t n, const std::function<double(std::size_t, std::size_t)>& cost) {
    // Shortest augmenting path formulation with potentials, O(n^3).
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// ---------------------------------------------------------------------------
// 1D quantile coupling (optimal for convex costs |x-y|^k, k >= 1)

namespace {

TransportPlan quantile_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double k) {
    const std::size_t n = mu.size(), m = nu.size();
    std::vector<std::size_t> ia(n), ib(m);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::sort(ia.begin(), ia.end(),
              [&](std::size_t x, std::size_t y) { return mu.point(x)[0] < mu.point(y)[0]; });
    std::sort(ib.begin(), ib.end(),
              [&](std::size_t x, std::size_t y) { return nu.point(x)[0] < nu.point(y)[0]; });

    TransportPlan plan;
    std::vector<double> cost_terms;
    std::size_t p = 0, q = 0;
    double wa = mu.weight(ia[0]), wb = nu.weight(ib[0]);
    while (true) {
        const double mass = std::min(wa, wb);
        if (mass > 0.0) {
            const double d = std::fabs(mu.point(ia[p])[0] - nu.point(ib[q])[0]);
            plan.entries.push_back({static_cast<std::uint32_t>(ia[p]),
                                    static_cast<std::uint32_t>(ib[q]), mass});
            cost_terms.push_back(mass * pow_cost(d, k));
        }
        wa -= mass;
        wb -= mass;
        if (wa <= kMassEps) {
            if (++p >= n) break;
            wa = mu.weight(ia[p]);
        }
        if (wb <= kMassEps) {
            if (++q >= m) break;
            wb = nu.weight(ib[q]);
        }
    }
    plan.cost = cost_terms.empty() ? 0.0 : pairwise_sum(cost_terms);
    fill_residuals(plan, mu.weights(), nu.weights());
    return plan;
}

// Log-domain Sinkhorn with potential absorption built in (potentials are the
// absorbed log-scalings). Stops at the marginal residual target.
TransportPlan sinkhorn_log(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                           const std::function<double(std::size_t, std::size_t)>& cost,
                           const OTOptions& opts) {
    const std::size_t n = mu.size(), m = nu.size();
    if (n * m > 20000000) fail("SizeExceeded", "entropic transport cost matrix too large");
    std::vector<double> c(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = cost(i, j);

    const double reg = opts.entropic_reg;
    if (!(reg > 0.0)) fail("InvalidArgument", "entropic_reg must be > 0");
    std::vector<double> loga(n), logb(m), f(n, 0.0), g(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) loga[i] = std::log(std::max(mu.weight(i), 1e-300));
    for (std::size_t j = 0; j < m; ++j) logb[j] = std::log(std::max(nu.weight(j), 1e-300));

    auto lse = [](std::span<const double> terms) {
        double mx = -kInf;
        for (double t : terms) mx = std::max(mx, t);
        if (mx == -kInf) return -kInf;
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        return mx + std::log(s);
    };

    TransportPlan plan;
    plan.converged = false;
    std::vector<double> buf(std::max(n, m));
    int it = 0;
    double col_res = kInf;
    for (it = 0; it < opts.entropic_max_iter; ++it) {
        #pragma omp parallel for schedule(static) firstprivate(buf)
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j)
                buf[j] = logb[j] + (g[j] - c[i * m + j]) / reg;
            f[i] = -reg * lse({buf.data(), m});
        }
        #pragma omp parallel for schedule(static) firstprivate(buf)
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i)
                buf[i] = loga[i] + (f[i] - c[i * m + j]) / reg;
            g[j] = -reg * lse({buf.data(), n});
        }
        // after the g-update columns are exact; check rows
        col_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                s += std::exp(loga[i] + logb[j] + (f[i] + g[j] - c[i * m + j]) / reg);
            col_res = std::max(col_res, std::fabs(s - mu.weight(i)));
        }
        if (col_res <= opts.entropic_residual_target) {
            plan.converged = true;
            ++it;
            break;
        }
    }
    plan.iterations = it;
    std::vector<double> cost_terms;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double p = std::exp(loga[i] + logb[j] + (f[i] + g[j] - c[i * m + j]) / reg);
            if (p > 1e-300) {
                plan.entries.push_back({static_cast<std::uint32_t>(i),
                                        static_cast<std::uint32_t>(j), p});
                cost_terms.push_back(p * c[i * m + j]);
            }
        }
    plan.cost = cost_terms.empty() ? 0.0 : pairwise_sum(cost_terms);
    fill_residuals(plan, mu.weights(), nu.weights());
    return plan;
}

bool uniform_equal(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.size() != nu.size()) return false;
    const double w = 1.0 / static_cast<double>(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
        if (std::fabs(mu.weight(i) - w) > 1e-15 || std::fabs(nu.weight(i) - w) > 1e-15)
            return false;
    return true;
}

TransportPlan exact_dispatch(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             const std::function<double(std::size_t, std::size_t)>& cost,
                             const OTOptions& opts) {
    const std::size_t nm = mu.size() * nu.size();
    if (nm > opts.exact_hard_cap) fail("SizeExceeded", "ExactLP size cap exceeded");
    if (uniform_equal(mu, nu) && mu.size() > 1) {
        const auto asg = hungarian_assignment(mu.size(), cost);
        TransportPlan plan;
        const double w = 1.0 / static_cast<double>(mu.size());
        std::vector<double> terms(mu.size());
        for (std::size_t i = 0; i < mu.size(); ++i) {
            plan.entries.push_back({static_cast<std::uint32_t>(i),
                                    static_cast<std::uint32_t>(asg[i]), w});
            terms[i] = w * cost(i, asg[i]);
        }
        plan.cost = pairwise_sum(terms);
        fill_residuals(plan, mu.weights(), nu.weights());
        return plan;
    }
    return exact_transport(mu.weights(), nu.weights(), cost);
}

OTMethod resolve_method(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                        const OTOptions& opts, bool quantile_allowed) {
    if (opts.method != OTMethod::Auto) return opts.method;
    if (quantile_allowed && mu.dim() == 1) return OTMethod::Quantile1D;
    if (mu.size() * nu.size() <= opts.exact_auto_cap) return OTMethod::ExactLP;
    return OTMethod::Entropic;
}

}  // namespace

OTResult wasserstein_k(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double k,
                       const OTOptions& opts) {
    if (mu.dim() != nu.dim()) fail("DimensionMismatch", "clouds have different dimensions");
    if (!(k >= 1.0)) fail("InvalidArgument", "wasserstein_k needs k >= 1");
    auto cost = [&](std::size_t i, std::size_t j) {
        std::span<const double> x = mu.point(i), y = nu.point(j);
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) s += (x[c] - y[c]) * (x[c] - y[c]);
        return pow_cost(std::sqrt(s), k);
    };
    OTResult out;
    out.method_used = resolve_method(mu, nu, opts, /*quantile_allowed=*/true);
    switch (out.method_used) {
        case OTMethod::Quantile1D:
            if (mu.dim() != 1) fail("InvalidArgument", "Quantile1D needs d == 1");
            out.plan = quantile_1d(mu, nu, k);
            break;
        case OTMethod::ExactLP:
            out.plan = exact_dispatch(mu, nu, cost, opts);
            break;
        case OTMethod::Entropic:
            out.plan = sinkhorn_log(mu, nu, cost, opts);
            break;
        case OTMethod::Auto:
            break;
    }
    out.value = std::pow(std::max(out.plan.cost, 0.0), 1.0 / k);
    return out;
}

OTResult wasserstein_alpha(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                           const DiniModulus& m, const OTOptions& opts) {
    if (mu.dim() != nu.dim()) fail("DimensionMismatch", "clouds have different dimensions");
    // Structural requirements for d_alpha(x, y) = alpha(|x-y|) to be a metric:
    // alpha(0) = 0, increasing, concave. Checked on a coarse grid here; run
    // validate_modulus for the full audit.
    if (m(0.0) != 0.0) fail("InvalidArgument", "modulus must vanish at 0");
    {
        double prev_val = 0.0, prev_slope = kInf;
        double r = m.r_max() * 1e-8;
        double prev_r = 0.0;
        for (int i = 0; i < 24; ++i) {
            const double v = m(r);
            const double slope = (v - prev_val) / (r - prev_r);
            if (v < prev_val - 1e-12 || slope > prev_slope * (1.0 + 1e-9) + 1e-12)
                fail("InvalidArgument", "modulus not increasing/concave; W_alpha undefined");
            prev_val = v;
            prev_slope = slope;
            prev_r = r;
            r *= std::pow(m.r_max() / (m.r_max() * 1e-8), 1.0 / 23.0);
            if (r > m.r_max()) r = m.r_max();
        }
    }
    auto cost = [&](std::size_t i, std::size_t j) {
        std::span<const double> x = mu.point(i), y = nu.point(j);
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) s += (x[c] - y[c]) * (x[c] - y[c]);
        return m(std::sqrt(s));
    };
    OTResult out;
    out.method_used = resolve_method(mu, nu, opts, /*quantile_allowed=*/false);
    if (out.method_used == OTMethod::Quantile1D)
        fail("InvalidArgument", "Quantile1D is not valid for concave ground costs");
    if (out.method_used == OTMethod::ExactLP)
        out.plan = exact_dispatch(mu, nu, cost, opts);
    else
        out.plan = sinkhorn_log(mu, nu, cost, opts);
    out.value = out.plan.cost;
    return out;
}

double w_k_var(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, double k) {
    if (mu.dim() != nu.dim()) fail("DimensionMismatch", "clouds have different dimensions");
    // Signed weights on the union support; the sup over |f| <= 1 + |x|^k is
    // separable, attained by f = sign(mu - nu) (1 + |x|^k) pointwise.
    std::map<std::vector<double>, double> signed_w;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        std::vector<double> key(mu.point(i).begin(), mu.point(i).end());
        signed_w[key] += mu.weight(i);
    }
    for (std::size_t j = 0; j < nu.size(); ++j) {
        std::vector<double> key(nu.point(j).begin(), nu.point(j).end());
        signed_w[key] -= nu.weight(j);
    }
    double total = 0.0;
    for (const auto& [pt, w] : signed_w)
        total += std::fabs(w) * (1.0 + pow_cost(norm2(pt), k));
    return total;
}

}  // namespace mvsde
