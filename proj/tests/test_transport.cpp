#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvsde/transport.hpp"
#include "support/oracles.hpp"

using namespace mvsde;

namespace {

EmpiricalMeasure random_cloud(oracle::TestRng& rng, std::size_t n, std::size_t d,
                              bool random_weights = false) {
    std::vector<double> pts(n * d);
    for (auto& x : pts) x = rng.uniform(-2.0, 2.0);
    std::vector<double> w;
    if (random_weights) {
        w.resize(n);
        double s = 0.0;
        for (auto& x : w) { x = 0.05 + rng.uniform(); s += x; }
        for (auto& x : w) x /= s;
        // renormalize exactly
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) acc += w[i];
        w[n - 1] = 1.0 - acc;
    }
    return EmpiricalMeasure(std::move(pts), d, std::move(w));
}

}  // namespace

TEST_CASE("moment norms") {
    EmpiricalMeasure delta0({0.0, 0.0}, 2);
    CHECK(delta0.moment_norm(2.0) == 0.0);
    EmpiricalMeasure dx({3.0}, 1);
    CHECK(dx.moment_norm(2.0) == doctest::Approx(3.0));
    EmpiricalMeasure pm({-1.0, 1.0}, 1);
    CHECK(pm.moment_norm(4.0) == doctest::Approx(1.0));
}

TEST_CASE("wasserstein_k basics") {
    oracle::TestRng rng(11);
    const auto mu = random_cloud(rng, 12, 2);
    CHECK(wasserstein_k(mu, mu, 2.0).value == doctest::Approx(0.0).epsilon(1e-12));

    EmpiricalMeasure a({0.0, 0.0, 0.0}, 3), b({1.0, 2.0, 2.0}, 3);
    const double d = std::sqrt(1.0 + 4.0 + 4.0);
    for (double k : {1.0, 2.0, 3.5})
        CHECK(wasserstein_k(a, b, k).value == doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("wasserstein_k matches exhaustive assignment oracle on 8-point clouds") {
    oracle::TestRng rng(202);
    for (int rep = 0; rep < 4; ++rep) {
        const auto mu = random_cloud(rng, 8, 2);
        const auto nu = random_cloud(rng, 8, 2);
        auto cost = [&](std::size_t i, std::size_t j) {
            const auto x = mu.point(i), y = nu.point(j);
            const double dx = x[0] - y[0], dy = x[1] - y[1];
            return dx * dx + dy * dy;
        };
        const double oracle_cost = oracle::brute_force_assignment_cost(8, cost);
        OTOptions opts;
        opts.method = OTMethod::ExactLP;
        const auto r = wasserstein_k(mu, nu, 2.0, opts);
        CHECK(r.value == doctest::Approx(std::sqrt(oracle_cost)).epsilon(1e-10));
        CHECK(r.plan.row_residual <= 1e-8);
        CHECK(r.plan.col_residual <= 1e-8);
    }
}

TEST_CASE("general-weight exact transport carries a dual optimality certificate") {
    oracle::TestRng rng(7);
    for (int rep = 0; rep < 6; ++rep) {
        const auto mu = random_cloud(rng, 9, 2, true);
        const auto nu = random_cloud(rng, 13, 2, true);
        OTOptions opts;
        opts.method = OTMethod::ExactLP;
        const auto r = wasserstein_k(mu, nu, 2.0, opts);
        CHECK(r.plan.row_residual <= 1e-8);
        CHECK(r.plan.col_residual <= 1e-8);
        CHECK(r.plan.dual_violation <= 1e-9);
        // weak duality: dual objective == primal cost at optimum
        double dual_obj = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) dual_obj += mu.weight(i) * r.plan.dual_u[i];
        for (std::size_t j = 0; j < nu.size(); ++j) dual_obj += nu.weight(j) * r.plan.dual_v[j];
        CHECK(dual_obj == doctest::Approx(r.plan.cost).epsilon(1e-9));
    }
}

TEST_CASE("1D quantile coupling agrees with the LP to 1e-10") {
    oracle::TestRng rng(31);
    for (std::size_t n : {5ul, 17ul, 64ul}) {
        const auto mu = random_cloud(rng, n, 1, true);
        const auto nu = random_cloud(rng, n + 3, 1, true);
        OTOptions q, e;
        q.method = OTMethod::Quantile1D;
        e.method = OTMethod::ExactLP;
        for (double k : {1.0, 2.0}) {
            const double vq = wasserstein_k(mu, nu, k, q).value;
            const double ve = wasserstein_k(mu, nu, k, e).value;
            CHECK(vq == doctest::Approx(ve).epsilon(1e-10));
        }
    }
}

TEST_CASE("wasserstein_alpha dirac pair and dual-LP oracle") {
    const auto m = DiniModulus::power(1.0, 0.5);
    EmpiricalMeasure a({0.25}, 1), b({2.5}, 1);
    const auto r = wasserstein_alpha(a, b, m);
    CHECK(r.value == doctest::Approx(std::sqrt(2.25)).epsilon(1e-10));

    // 1D clouds, LP over the dual constraints on the joint support
    oracle::TestRng rng(404);
    const std::size_t n = 16;
    const auto mu = random_cloud(rng, n, 1);
    const auto nu = random_cloud(rng, n, 1);
    std::vector<std::vector<double>> pts;
    std::vector<double> sw;
    for (std::size_t i = 0; i < n; ++i) {
        pts.push_back({mu.point(i)[0]});
        sw.push_back(mu.weight(i));
    }
    for (std::size_t j = 0; j < n; ++j) {
        pts.push_back({nu.point(j)[0]});
        sw.push_back(-nu.weight(j));
    }
    const double dual = oracle::dual_lp_w_alpha(pts, sw, [&](double d) { return m(d); });
    OTOptions opts;
    opts.method = OTMethod::ExactLP;
    const auto w = wasserstein_alpha(mu, nu, m, opts);
    CHECK(w.value == doctest::Approx(dual).epsilon(1e-8));
}

TEST_CASE("quantile method is rejected for concave ground cost") {
    const auto m = DiniModulus::power(1.0, 0.5);
    EmpiricalMeasure a({0.0, 1.0}, 1), b({0.5, 2.0}, 1);
    OTOptions opts;
    opts.method = OTMethod::Quantile1D;
    CHECK_THROWS_WITH_AS(wasserstein_alpha(a, b, m, opts), doctest::Contains("InvalidArgument"),
                         Error);
    // and a convex tabulated "modulus" is rejected outright
    const auto bad = DiniModulus::tabulated({{0.0, 0.0}, {1.0, 0.1}, {2.0, 3.0}}, 4.0);
    CHECK_THROWS_WITH_AS(wasserstein_alpha(a, b, bad), doctest::Contains("InvalidArgument"),
                         Error);
}

TEST_CASE("metric axioms hold on random triples") {
    oracle::TestRng rng(1234);
    const auto mod = DiniModulus::power(1.0, 0.5);
    OTOptions opts;
    opts.method = OTMethod::ExactLP;
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t d = 1 + rep % 3;
        const auto a = random_cloud(rng, 10, d, true);
        const auto b = random_cloud(rng, 14, d);
        const auto c = random_cloud(rng, 9, d, true);
        for (int metric = 0; metric < 2; ++metric) {
            auto dist = [&](const EmpiricalMeasure& x, const EmpiricalMeasure& y) {
                return metric == 0 ? wasserstein_k(x, y, 2.0, opts).value
                                   : wasserstein_alpha(x, y, mod, opts).value;
            };
            const double ab = dist(a, b), ba = dist(b, a), ac = dist(a, c), cb = dist(c, b);
            CHECK(ab >= 0.0);
            CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
            CHECK(ab <= ac + cb + 1e-9);
            CHECK(dist(a, a) <= 1e-8);
        }
    }
}

TEST_CASE("entropic solver approaches the exact value as reg decreases") {
    oracle::TestRng rng(555);
    const auto mu = random_cloud(rng, 32, 2);
    const auto nu = random_cloud(rng, 32, 2);
    OTOptions exact;
    exact.method = OTMethod::ExactLP;
    const double ve = wasserstein_k(mu, nu, 2.0, exact).value;
    double prev_err = 1e18;
    for (double reg : {1.0, 0.1, 0.01}) {
        OTOptions ent;
        ent.method = OTMethod::Entropic;
        ent.entropic_reg = reg;
        const auto r = wasserstein_k(mu, nu, 2.0, ent);
        const double err = std::fabs(r.value - ve);
        CHECK(err < prev_err);
        prev_err = err;
        CHECK(r.plan.col_residual <= 1e-6);
    }
}

TEST_CASE("domination of W_alpha by the k-variation norm") {
    oracle::TestRng rng(99);
    const auto mod = DiniModulus::power(1.0, 0.5);
    const double k = 2.0;
    for (int rep = 0; rep < 6; ++rep) {
        const auto mu = random_cloud(rng, 12, 2, true);
        // shared support with different weights in half the cases
        EmpiricalMeasure nu = (rep % 2 == 0)
                                  ? random_cloud(rng, 12, 2, true)
                                  : EmpiricalMeasure(mu.points(), 2, [&] {
                                        std::vector<double> w(mu.size());
                                        double s = 0.0;
                                        for (auto& x : w) { x = 0.05 + rng.uniform(); s += x; }
                                        for (auto& x : w) x /= s;
                                        double acc = 0.0;
                                        for (std::size_t i = 0; i + 1 < w.size(); ++i) acc += w[i];
                                        w.back() = 1.0 - acc;
                                        return w;
                                    }());
        double c = 0.0;
        auto extend = [&](const EmpiricalMeasure& meas) {
            for (std::size_t i = 0; i < meas.size(); ++i) {
                const double nx = norm2(meas.point(i));
                c = std::max(c, mod(nx) / (1.0 + std::pow(nx, k)));
            }
        };
        extend(mu);
        extend(nu);
        const double lhs = wasserstein_alpha(mu, nu, mod).value;
        const double rhs = c * w_k_var(mu, nu, k);
        CHECK(lhs <= rhs + 1e-9);
    }
}

TEST_CASE("size and dimension guards") {
    EmpiricalMeasure a({0.0}, 1), b({0.0, 0.0}, 2);
    CHECK_THROWS_WITH_AS(wasserstein_k(a, b, 2.0), doctest::Contains("DimensionMismatch"),
                         Error);
    oracle::TestRng rng(1);
    const auto big = random_cloud(rng, 1100, 1);
    OTOptions opts;
    opts.method = OTMethod::ExactLP;
    opts.exact_hard_cap = 1000000;
    CHECK_THROWS_WITH_AS(wasserstein_k(big, big, 2.0, opts), doctest::Contains("SizeExceeded"),
                         Error);
}

TEST_CASE("entropic solver reports non-convergence instead of lying") {
    oracle::TestRng rng(321);
    const auto mu = random_cloud(rng, 24, 2);
    const auto nu = random_cloud(rng, 24, 2);
    OTOptions opts;
    opts.method = OTMethod::Entropic;
    opts.entropic_reg = 0.001;
    opts.entropic_max_iter = 2;  // force an early stop
    const auto r = wasserstein_k(mu, nu, 2.0, opts);
    CHECK_FALSE(r.plan.converged);
    CHECK(r.plan.iterations == 2);
    CHECK(r.value > 0.0);  // best iterate still reported
}
