#include "mvsde/girsanov.hpp"

#include <algorithm>
#include <cmath>

namespace mvsde {

std::vector<double> eta_between_flows(const CoefficientModel& model, const PathBundle& bundle,
                                      const FrozenFlow& flow_a, const FrozenFlow& flow_b) {
    const std::size_t n = bundle.n, d = bundle.d, m = bundle.m;
    const std::size_t steps = bundle.steps();
    const auto* s = model.structured();
    std::vector<double> eta(steps * n * m, 0.0);

    for (std::size_t j = 0; j < steps; ++j) {
        const double t = bundle.times[j];
        const std::size_t ia = flow_a.lookup(t);
        const std::size_t ib = flow_b.lookup(t);
        const EmpiricalMeasure* mu_a = flow_a.measure_at(ia);
        const EmpiricalMeasure* mu_b = flow_b.measure_at(ib);
        std::span<const double> za, zb;
        if (s) {
            za = flow_a.z[ia];
            zb = flow_b.z[ib];
        }
        #pragma omp parallel
        {
            std::vector<double> ba(d), bb(d), gap(d), zeta(m * d);
            #pragma omp for schedule(static)
            for (std::size_t i = 0; i < n; ++i) {
                const auto x = bundle.state(j, i);
                model.eval_mean_field(t, x, mu_a, za, ba);
                model.eval_mean_field(t, x, mu_b, zb, bb);
                for (std::size_t c = 0; c < d; ++c) gap[c] = bb[c] - ba[c];
                model.eval_zeta(t, x, zeta);
                matvec(zeta, m, d, gap, {eta.data() + (j * n + i) * m, m});
            }
        }
    }
    return eta;
}

WeightBundle weight_path(std::span<const double> eta, const PathBundle& bundle) {
    if (!bundle.has_increments()) fail("MissingIncrements", "bundle stored no increments");
    const std::size_t n = bundle.n, m = bundle.m;
    const std::size_t steps = bundle.steps();
    if (eta.size() != steps * n * m) fail("LengthMismatch", "eta array shape");

    WeightBundle w;
    w.n = n;
    w.steps = steps;
    w.dt = bundle.dt;
    w.log_r.assign((steps + 1) * n, 0.0);
    w.int_eta2.assign((steps + 1) * n, 0.0);
    for (std::size_t j = 0; j < steps; ++j) {
        #pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            const double* e = eta.data() + (j * n + i) * m;
            const double* dw = bundle.increments.data() + (j * n + i) * m;
            double inc = 0.0, e2 = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                inc += e[c] * dw[c];
                e2 += e[c] * e[c];
            }
            w.log_r[(j + 1) * n + i] = w.log_r[j * n + i] + inc - 0.5 * e2 * bundle.dt;
            w.int_eta2[(j + 1) * n + i] = w.int_eta2[j * n + i] + e2 * bundle.dt;
        }
    }
    return w;
}

std::vector<double> WeightBundle::r_at(std::size_t j) const {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(log_r[j * n + i]);
    return out;
}

SecondMomentLog second_moment_log(std::span<const double> r_values) {
    if (r_values.size() < 100) fail("TooFewSamples", "second_moment_log needs >= 100 weights");
    const std::size_t n = r_values.size();
    std::vector<double> r2(n);
    for (std::size_t i = 0; i < n; ++i) r2[i] = r_values[i] * r_values[i];
    const auto ms = mean_stderr(r2);
    SecondMomentLog out;
    out.value = std::log(ms.mean);
    out.stderr_ = ms.stderr_ / ms.mean;
    out.degenerate = ms.stderr_ == 0.0;

    std::vector<double> sorted = r2;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = std::max<std::size_t>(1, n / 100);
    double top_sum = 0.0;
    for (std::size_t i = 0; i < top; ++i) top_sum += sorted[i];
    out.tail_warning = top_sum > 0.5 * ms.mean * static_cast<double>(n);
    return out;
}

ExponentialBoundCheck exponential_bound_check(std::span<const double> eta,
                                              const PathBundle& bundle, std::size_t j_end) {
    if (!bundle.has_increments()) fail("MissingIncrements", "bundle stored no increments");
    const std::size_t n = bundle.n, m = bundle.m;
    if (j_end > bundle.steps()) fail("InvalidArgument", "j_end beyond path length");

    double b_sum = 0.0;
    std::vector<double> log_z(n, 0.0), log_r(n, 0.0);
    for (std::size_t j = 0; j < j_end; ++j) {
        double step_max = 0.0;
        #pragma omp parallel for schedule(static) reduction(max : step_max)
        for (std::size_t i = 0; i < n; ++i) {
            const double* e = eta.data() + (j * n + i) * m;
            const double* dw = bundle.increments.data() + (j * n + i) * m;
            double inc = 0.0, e2 = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                inc += e[c] * dw[c];
                e2 += e[c] * e[c];
            }
            log_r[i] += inc - 0.5 * e2 * bundle.dt;
            log_z[i] += 2.0 * inc - 2.0 * e2 * bundle.dt;
            step_max = std::max(step_max, e2);
        }
        b_sum += step_max * bundle.dt;
    }
    std::vector<double> r2(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        r2[i] = std::exp(2.0 * log_r[i]);
        z[i] = std::exp(log_z[i]);
    }
    ExponentialBoundCheck out;
    out.log_mean_r2 = std::log(pairwise_mean(r2));
    out.mean_z = pairwise_mean(z);
    out.sup_eta_sq_integral = b_sum;
    out.bound = b_sum + std::log(out.mean_z);
    out.pass = out.log_mean_r2 <= out.bound * (1.0 + 1e-12) + 1e-12;
    return out;
}

}  // namespace mvsde
