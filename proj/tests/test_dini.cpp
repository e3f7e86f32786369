#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvsde/dini.hpp"

using namespace mvsde;

namespace {

// Independent quadrature of int_0^r alpha(t)^2/t dt on dyadic log windows;
// cross-checks the closed forms used by tilde_alpha.
double dini_integral_oracle(const DiniModulus& m, double r, int windows = 60) {
    double total = 0.0;
    double hi = r;
    for (int j = 0; j < windows; ++j) {
        const double lo = hi * 0.5;
        total += integrate_adaptive([&](double t) { const double a = m(t); return a * a / t; },
                                    lo, hi, 1e-12);
        hi = lo;
    }
    return total;
}

}  // namespace

TEST_CASE("power modulus validates and has exact unit Dini integral") {
    const auto m = DiniModulus::power(1.0, 0.5);
    const auto rep = validate_modulus(m, 128, 1e-9);
    CHECK(rep.passes);
    CHECK(rep.dini_convergent);
    CHECK(rep.dini_integral_01 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rep.valid_from == 0.0);
}

TEST_CASE("log-power with 2*beta <= 1 fails the Dini-square check") {
    const auto m = DiniModulus::log_power(1.0, 0.4);
    // Divergence evidence: dyadic partial integrals of alpha^2/t keep growing.
    double prev = 0.0;
    double v_lo = 8.0;
    bool growing = true;
    for (int j = 0; j < 4; ++j) {
        const double s = integrate_adaptive(
            [&](double v) {
                const double a = m(std::exp(-v));
                return a * a;
            },
            v_lo, 2.0 * v_lo, 1e-10);
        if (j > 0 && s <= prev) growing = false;
        prev = s;
        v_lo *= 2.0;
    }
    CHECK(growing);

    const auto rep = validate_modulus(m, 128, 1e-9);
    CHECK_FALSE(rep.passes);
    CHECK_FALSE(rep.dini_convergent);
    bool dini_failed = false;
    for (const auto& c : rep.checks)
        if (c.name == "dini_square") dini_failed = !c.pass;
    CHECK(dini_failed);
}

TEST_CASE("tabulated modulus with a convex segment fails concavity") {
    const auto m = DiniModulus::tabulated({{0.0, 0.0}, {1.0, 0.5}, {2.0, 2.0}}, 4.0);
    const auto rep = validate_modulus(m, 128, 1e-9);
    CHECK_FALSE(rep.passes);
    bool concave_failed = false;
    for (const auto& c : rep.checks)
        if (c.name == "concave") concave_failed = !c.pass;
    CHECK(concave_failed);
}

TEST_CASE("capped linear modulus is a valid class member") {
    const auto m = DiniModulus::capped_linear(1.0);
    const auto rep = validate_modulus(m, 128, 1e-9);
    CHECK(rep.passes);
    // int_0^1 r^2/r dr = 1/2
    CHECK(m.dini_square_integral(1.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("tilde_alpha closed forms and domain handling") {
    const auto m_half = DiniModulus::power(1.0, 0.5);
    CHECK(m_half.tilde_alpha(1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m_half.tilde_alpha(0.0) == 0.0);

    const auto m_q = DiniModulus::power(1.0, 0.25);
    CHECK(m_q.tilde_alpha(1.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
    // cross-check the closed form by direct quadrature
    CHECK(dini_integral_oracle(m_q, 1.0) == doctest::Approx(2.0).epsilon(1e-8));

    const auto m_small = DiniModulus::power(1.0, 0.5, 10.0);
    CHECK_THROWS_WITH_AS(m_small.tilde_alpha(11.0), doctest::Contains("DomainExceeded"), Error);
}

TEST_CASE("tilde_alpha quadrature matches oracle for LogPower and Tabulated") {
    const auto lp = DiniModulus::log_power(1.0, 1.0);
    for (double r : {0.25, 1.0, 3.0}) {
        const double oracle = dini_integral_oracle(lp, r, 80);
        // windows only reach ~r*2^-80; remaining tail below that is
        // int v^{-2} ~ 1/v at v ~ 55, so compare loosely but meaningfully
        CHECK(lp.dini_square_integral(r) == doctest::Approx(oracle).epsilon(2e-2));
        CHECK(lp.dini_square_integral(r) >= oracle);
    }
    const auto tab = DiniModulus::tabulated({{0.0, 0.0}, {0.5, 0.4}, {2.0, 1.0}}, 16.0);
    for (double r : {0.3, 1.0, 5.0}) {
        CHECK(tab.dini_square_integral(r) ==
              doctest::Approx(dini_integral_oracle(tab, r)).epsilon(1e-8));
    }
    // monotone in r
    double prev = 0.0;
    for (double r = 0.1; r < 8.0; r *= 1.7) {
        const double v = tab.tilde_alpha(r);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("alpha_k substitution values and concavity flag") {
    const auto m = DiniModulus::power(1.0, 0.5);
    CHECK(m.alpha_k(2.0, 4.0).value == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(m.alpha_k(3.0, 4.0).value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(m.alpha_k(2.0, 4.0).concave);
    // eps/(k-1) = 0.5/0.2 = 2.5 > 1: s^{2.5} is convex
    CHECK_FALSE(m.alpha_k(1.2, 0.5).concave);
}

TEST_CASE("concave Hoelder inequality on empirical samples") {
    const auto m = DiniModulus::power(1.0, 0.5);

    // constant xi, eta == 1: equality
    std::vector<double> xi(32, 2.25), eta(32, 1.0);
    auto r = concave_holder_check(m, xi, eta, 2.0);
    CHECK(r.pass);
    CHECK(r.lhs == doctest::Approx(r.rhs).epsilon(1e-12));

    // iid uniform pairs
    std::vector<double> xs, es;
    std::uint64_t state = 88172645463325252ull;
    auto next_u = [&state]() {
        state ^= state << 13; state ^= state >> 7; state ^= state << 17;
        return static_cast<double>(state >> 11) * 0x1p-53;
    };
    for (int i = 0; i < 1000; ++i) { xs.push_back(next_u()); es.push_back(next_u()); }
    CHECK(concave_holder_check(m, xs, es, 2.0).pass);

    // one large outlier, p = 1 uses the sup of xi on the right side
    std::vector<double> xo(64, 0.1), eo(64, 0.5);
    xo[17] = 50.0;
    CHECK(concave_holder_check(m, xo, eo, 1.0).pass);

    std::vector<double> bad(3, 1.0);
    CHECK_THROWS_WITH_AS(concave_holder_check(m, xo, bad, 2.0),
                         doctest::Contains("LengthMismatch"), Error);
}

TEST_CASE("quadrature identities for tilde_alpha") {
    const std::vector<DiniModulus> family = {
        DiniModulus::power(1.0, 0.5),
        DiniModulus::power(1.0, 0.25),
        DiniModulus::power(2.0, 0.75),
        DiniModulus::log_power(1.0, 1.0),
        DiniModulus::capped_linear(1.0),
        DiniModulus::tabulated({{0.0, 0.0}, {0.5, 0.4}, {2.0, 1.0}}, 1e6),
    };
    for (const auto& m : family) {
        for (double r : {0.5, 1.0, 2.0, 5.0}) {
            for (double t : {0.1, 1.0}) {
                const auto c1 = check_identity_c1(m, r, t);
                INFO(m.describe(), " r=", r, " t=", t, " lhs=", c1.lhs, " rhs=", c1.rhs);
                CHECK(c1.rel_error <= 1e-6);
                const auto ass = check_identity_ass(m, r, t);
                INFO(m.describe(), " r=", r, " T=", t, " lhs=", ass.lhs, " rhs=", ass.rhs);
                CHECK(ass.rel_error <= 1e-6);
            }
        }
    }
}

TEST_CASE("validation rejects bad inputs") {
    CHECK_THROWS_WITH_AS(DiniModulus::power(1.0, 0.5, -1.0), doctest::Contains("EmptyDomain"),
                         Error);
    CHECK_THROWS_WITH_AS(DiniModulus::tabulated({{0.0, 1.0}, {1.0, 2.0}}, 1.0),
                         doctest::Contains("InvalidArgument"), Error);
    const auto m = DiniModulus::power(1.0, 0.5);
    CHECK_THROWS_WITH_AS(validate_modulus(m, 8, 1e-9), doctest::Contains("InvalidArgument"),
                         Error);
}
