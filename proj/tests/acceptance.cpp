// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
// Tolerances are pinned here, not tuned at runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <omp.h>

#include "mvsde/bismut.hpp"
#include "mvsde/dini.hpp"
#include "mvsde/harnack.hpp"
#include "mvsde/scenario.hpp"
#include "mvsde/transport.hpp"
#include "support/oracles.hpp"

using namespace mvsde;

namespace {

struct Criterion {
    int id;
    std::string label;
    bool pass = true;
    std::string detail;
    double seconds = 0.0;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::vector<Criterion> g_results;

template <class Fn>
void run_criterion(int id, const std::string& label, Fn&& body) {
    Criterion c{id, label};
    const auto start = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.pass = false;
        c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", c.pass ? "PASS" : "FAIL", c.id,
                c.label.c_str(), c.seconds, c.detail.empty() ? "" : " -- ",
                c.detail.c_str());
    std::fflush(stdout);
    g_results.push_back(std::move(c));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

EmpiricalMeasure random_cloud(oracle::TestRng& rng, std::size_t n, std::size_t d) {
    std::vector<double> pts(n * d);
    for (auto& x : pts) x = rng.uniform(-2.0, 2.0);
    return EmpiricalMeasure(std::move(pts), d);
}

// ---------------------------------------------------------------------------

void criterion_1(Criterion& c) {
    const std::vector<DiniModulus> mods = {
        DiniModulus::power(1.0, 0.25),
        DiniModulus::power(1.0, 0.5),
        DiniModulus::log_power(1.0, 1.0),
    };
    for (const auto& m : mods) {
        for (double r : {0.5, 1.0, 2.0}) {
            const auto c1 = check_identity_c1(m, r, 1.0);
            c.require(c1.rel_error <= 1e-6, m.describe() + " C1 r=" + fmt(r) + " rel=" +
                                                fmt(c1.rel_error));
            const auto ass = check_identity_ass(m, r, 1.0);
            c.require(ass.rel_error <= 1e-6, m.describe() + " ASS r=" + fmt(r) + " rel=" +
                                                 fmt(ass.rel_error));
        }
    }
}

void criterion_2(Criterion& c) {
    oracle::TestRng rng(777);
    const auto mod = DiniModulus::power(1.0, 0.5);
    OTOptions opts;
    opts.method = OTMethod::ExactLP;
    double worst_tri = 0.0, worst_sym = 0.0, worst_id = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t d = 1 + rep % 3;
        const std::size_t n = 8 + static_cast<std::size_t>(rng.uniform() * 25.0);
        const auto a = random_cloud(rng, n, d);
        const auto b = random_cloud(rng, n + rep % 5, d);
        const auto e = random_cloud(rng, n, d);
        for (int metric = 0; metric < 2; ++metric) {
            auto dist = [&](const EmpiricalMeasure& x, const EmpiricalMeasure& y) {
                return metric == 0 ? wasserstein_k(x, y, 2.0, opts).value
                                   : wasserstein_alpha(x, y, mod, opts).value;
            };
            const double ab = dist(a, b);
            worst_sym = std::max(worst_sym, std::fabs(ab - dist(b, a)));
            worst_tri = std::max(worst_tri, ab - dist(a, e) - dist(e, b));
            worst_id = std::max(worst_id, dist(a, a));
            if (ab < -1e-15) c.require(false, "negative distance");
        }
    }
    c.require(worst_sym <= 1e-9, "symmetry " + fmt(worst_sym));
    c.require(worst_tri <= 1e-9, "triangle " + fmt(worst_tri));
    c.require(worst_id <= 1e-8, "identity " + fmt(worst_id));

    // dirac pairs: W_alpha = alpha(|x - y|) to 1e-10
    for (double gap : {0.2, 1.0, 7.5}) {
        EmpiricalMeasure x({0.5}, 1), y({0.5 + gap}, 1);
        const double w = wasserstein_alpha(x, y, mod, opts).value;
        c.require(std::fabs(w - mod(gap)) <= 1e-10, "dirac W_alpha gap=" + fmt(gap));
    }

    // 1D quantile vs exact LP
    double worst_q = 0.0;
    for (int rep = 0; rep < 24; ++rep) {
        const auto a = random_cloud(rng, 12 + rep, 1);
        const auto b = random_cloud(rng, 40 + rep, 1);
        OTOptions q;
        q.method = OTMethod::Quantile1D;
        worst_q = std::max(worst_q, std::fabs(wasserstein_k(a, b, 2.0, q).value -
                                              wasserstein_k(a, b, 2.0, opts).value));
    }
    c.require(worst_q <= 1e-10, "quantile vs LP " + fmt(worst_q));
}

void criterion_3(Criterion& c) {
    const auto model = make_gallery_model("pure_bm", {{"dim", 1}});
    SimConfig sim;
    sim.n_particles = 100000;
    sim.dt = 0.025;
    sim.t_end = 1.0;
    sim.seed = 31;
    sim.store_increments = false;
    const auto bundle = simulate_mckean_vlasov(model, EmpiricalMeasure::dirac({0.0}), sim);
    const std::vector<double> ps{2.0, 4.0};
    const std::vector<double> ts{0.125, 0.25, 0.5, 1.0};
    const auto diag = moment_diagnostics(bundle, ps, ts);
    c.require(std::fabs(diag[0].loglog_slope - 1.0) <= 0.05,
              "p=2 slope " + fmt(diag[0].loglog_slope));
    c.require(std::fabs(diag[1].loglog_slope - 2.0) <= 0.1,
              "p=4 slope " + fmt(diag[1].loglog_slope));
}

void criterion_4(Criterion& c) {
    SimConfig sim;
    sim.n_particles = 20000;
    sim.dt = 0.01;
    sim.t_end = 1.0;
    sim.seed = 4123;

    // constant eta on Brownian paths
    {
        const auto model = make_gallery_model("pure_bm", {{"dim", 1}});
        const auto bundle = simulate_mckean_vlasov(model, EmpiricalMeasure::dirac({0.0}), sim);
        const double cc = 0.7;
        std::vector<double> eta(bundle.steps() * bundle.n, cc);
        const auto w = weight_path(eta, bundle);
        for (std::size_t j : {20ul, 40ul, 60ul, 80ul, 100ul}) {
            const auto ms = mean_stderr(w.r_at(j));
            c.require(std::fabs(ms.mean - 1.0) <= 3.0 * ms.stderr_,
                      "const-eta E[R]=1 at j=" + std::to_string(j) + ": " + fmt(ms.mean) +
                          " +- " + fmt(ms.stderr_));
        }
        std::vector<double> r2(bundle.n);
        const auto rT = w.r_terminal();
        for (std::size_t i = 0; i < bundle.n; ++i) r2[i] = rT[i] * rT[i];
        const auto m2 = mean_stderr(r2);
        c.require(std::fabs(m2.mean - std::exp(cc * cc)) <= 3.0 * m2.stderr_,
                  "E[R^2]=" + fmt(m2.mean) + " expect " + fmt(std::exp(cc * cc)) + " +- " +
                      fmt(3.0 * m2.stderr_));
    }

    // mean-field OU flow-shift eta
    {
        const double a = 0.5;
        const auto model = make_gallery_model("mean_field_ou", {{"a", a}});
        FrozenFlow fa, fb;
        const auto* s = model.structured();
        for (std::size_t j = 0; j <= sim.steps(); ++j) {
            const double t = j * sim.dt;
            fa.times.push_back(t);
            fb.times.push_back(t);
            std::vector<double> za(s->m_b), zb(s->m_b);
            const std::vector<double> pa{0.0}, pb{std::exp((a - 1.0) * t)};
            s->V(pa, za);
            s->V(pb, zb);
            fa.z.push_back(za);
            fb.z.push_back(zb);
        }
        std::vector<double> x0(sim.n_particles, 0.0);
        const auto bundle = simulate_decoupled(model, fa, x0, sim);
        const auto eta = eta_between_flows(model, bundle, fa, fb);
        const auto w = weight_path(eta, bundle);
        for (std::size_t j : {20ul, 40ul, 60ul, 80ul, 100ul}) {
            const auto ms = mean_stderr(w.r_at(j));
            c.require(std::fabs(ms.mean - 1.0) <= 3.0 * ms.stderr_,
                      "ou-eta E[R]=1 at j=" + std::to_string(j) + ": " + fmt(ms.mean));
        }
        const auto bc = exponential_bound_check(eta, bundle, bundle.steps());
        c.require(bc.pass, "exponential bound identity");
    }
}

void criterion_5(Criterion& c) {
    HarnackConfig cfg;
    cfg.sim.n_particles = 12000;
    cfg.sim.dt = 0.0125;
    cfg.sim.seed = 501;
    cfg.knn_size = 6000;
    cfg.dist_size = 400;

    // pure BM: c_hat = 1/2 against the Gaussian KL
    {
        const auto model = make_gallery_model("pure_bm", {{"dim", 1}});
        const std::vector<double> tg{0.25, 0.5, 1.0};
        const auto table = entropy_cost_check(model, EmpiricalMeasure::dirac({0.0}),
                                              EmpiricalMeasure::dirac({1.0}), tg, cfg);
        for (const auto& row : table.rows) {
            c.require(std::fabs(row.c_hat - 0.5) <= 0.1,
                      "knn c_hat(" + fmt(row.t) + ")=" + fmt(row.c_hat));
            // closed-form column: delta-method error of the fitted-moment KL
            const double se =
                row.t * std::sqrt(2.0 / (row.t * static_cast<double>(cfg.knn_size)));
            c.require(std::fabs(row.c_hat_gauss - 0.5) <= 3.0 * se,
                      "gauss c_hat(" + fmt(row.t) + ")=" + fmt(row.c_hat_gauss) + " +- " +
                          fmt(3.0 * se));
        }
    }

    // bounded drift: no increasing trend of c_hat as t drops (8 grid points)
    {
        const auto model = make_gallery_model("bounded_b1_tanh", {{"a", 1.0}});
        const std::vector<double> tg{0.1, 0.15, 0.2, 0.3, 0.45, 0.65, 0.85, 1.0};
        const auto table = entropy_cost_check(model, EmpiricalMeasure::dirac({0.0}),
                                              EmpiricalMeasure::dirac({1.0}), tg, cfg);
        c.require(table.c_hat_no_increasing_trend, "tanh model c_hat trend as t drops");
    }
}

void criterion_6(Criterion& c) {
    const double a = 0.5, t = 1.0;
    const auto model = make_gallery_model("mean_field_ou", {{"a", a}});
    const auto mu0 = EmpiricalMeasure::dirac({1.0});
    const auto phi = PerturbationDirection::constant({1.0});
    const double expect = std::exp(-0.5);

    // intrinsic derivative at N = 1e5 particles, 10 repetitions = 1e6 paths
    EstimatorConfig cfg;
    cfg.sim.n_particles = 100000;
    cfg.sim.dt = 0.01;
    cfg.sim.seed = 601;
    cfg.reps = 10;
    cfg.picard_tol = 1e-5;
    const auto est = intrinsic_derivative(model, mu0, Payoff::coordinate(), phi, t, cfg);
    c.require(std::fabs(est.value[0] - expect) / expect <= 0.05,
              "intrinsic f=x value=" + fmt(est.value[0]) + " vs " + fmt(expect));

    // finite-difference oracle, deterministic gap, 0.1% target
    EstimatorConfig fd_cfg;
    fd_cfg.sim.n_particles = 4000;
    fd_cfg.sim.dt = 0.002;
    fd_cfg.sim.seed = 602;
    const std::vector<double> eps{0.1, 0.05};
    const auto fd =
        finite_difference_intrinsic(model, mu0, Payoff::coordinate(), phi, t, eps, fd_cfg);
    c.require(std::fabs(fd.richardson[0] - expect) / expect <= 0.001,
              "fd f=x value=" + fmt(fd.richardson[0]));

    // f = x^2 from a delta_0 start: estimator and oracle agree within 3 sigma
    const auto mu_zero = EmpiricalMeasure::dirac({0.0});
    EstimatorConfig cfg2;
    cfg2.sim.n_particles = 50000;
    cfg2.sim.dt = 0.005;
    cfg2.sim.seed = 603;
    cfg2.reps = 5;
    const auto est2 = intrinsic_derivative(model, mu_zero, Payoff::square(), phi, t, cfg2);
    EstimatorConfig fd2 = cfg2;
    fd2.sim.seed = 604;
    const auto fdo = finite_difference_intrinsic(model, mu_zero, Payoff::square(), phi, t, eps,
                                                 fd2);
    const double comb = std::sqrt(est2.stderr_[0] * est2.stderr_[0] +
                                  fdo.stderr_[0] * fdo.stderr_[0]);
    c.require(std::fabs(est2.value[0] - fdo.richardson[0]) <= 3.0 * comb,
              "f=x^2 est=" + fmt(est2.value[0]) + " fd=" + fmt(fdo.richardson[0]) + " comb=" +
                  fmt(comb));
}

void criterion_7(Criterion& c) {
    const auto model = make_gallery_model("pure_bm", {{"dim", 1}});
    EstimatorConfig cfg;
    cfg.sim.n_particles = 20000;
    cfg.sim.dt = 0.01;
    cfg.sim.seed = 701;
    const auto mu0 = EmpiricalMeasure::dirac({0.3});
    const auto phi = PerturbationDirection::constant({1.0});
    const auto a = frozen_flow_bismut(model, mu0, Payoff::coordinate(), phi, 0.5, cfg);
    const auto b = intrinsic_derivative(model, mu0, Payoff::coordinate(), phi, 0.5, cfg);
    c.require(a.value[0] == b.value[0] && a.stderr_[0] == b.stderr_[0] &&
                  a.i_term[0] == b.i_term[0],
              "bitwise reduction");
}

void criterion_8(Criterion& c) {
    const auto model = make_gallery_model("mean_field_ou", {{"a", 0.5}});
    EstimatorConfig cfg;
    cfg.sim.n_particles = 40000;
    cfg.sim.dt = 0.0125;
    cfg.sim.seed = 801;
    cfg.reps = 4;
    const std::vector<double> tg{0.05, 0.1, 0.2, 0.5, 1.0};
    const auto ests = intrinsic_derivative_grid(model, EmpiricalMeasure::dirac({0.5}),
                                                Payoff::tanh_bounded(),
                                                PerturbationDirection::constant({1.0}), tg,
                                                cfg);
    std::vector<double> scaled;
    std::string vals;
    for (const auto& e : ests) {
        scaled.push_back(std::sqrt(e.t) * std::fabs(e.value[0]));
        vals += fmt(scaled.back()) + " ";
    }
    c.require(no_increasing_trend_as_t_drops(tg, scaled),
              "sqrt(t)|D| over t grid: " + vals);
}

void criterion_9(Criterion& c) {
    oracle::TestRng rng(901);
    std::vector<double> pts(4000);
    for (auto& x : pts) x = 0.5 + 0.25 * rng.normal();
    const EmpiricalMeasure mu0(pts, 1);
    const auto phi = PerturbationDirection::constant({1.0});
    const std::vector<double> tg{0.25, 0.5, 1.0};
    const std::vector<double> eps{0.1, 0.05};

    for (const auto& [name, params] :
         std::vector<std::pair<std::string, std::map<std::string, double>>>{
             {"mean_field_ou", {{"a", 0.5}}}, {"kuramoto_like", {{"coupling", 0.8}}}}) {
        const auto model = make_gallery_model(name, params);
        EstimatorConfig cfg;
        cfg.sim.n_particles = 20000;
        cfg.sim.dt = 0.0125;
        cfg.sim.seed = 902;
        cfg.picard_tol = 1e-6;
        const auto pic = picard_v_system(model, mu0, phi, tg, cfg);
        c.require(pic.converged, name + " picard converged");
        for (std::size_t i = 1; i + 1 < pic.sup_diffs.size(); ++i)
            c.require(pic.sup_diffs[i + 1] < pic.sup_diffs[i],
                      name + " contraction ratio at iter " + std::to_string(i));

        // oracle: finite difference of P_t V along phi
        EstimatorConfig fd_cfg = cfg;
        fd_cfg.sim.n_particles = 20000;
        fd_cfg.sim.seed = 903;
        const auto fV = Payoff::from_structured_V(model);
        const std::size_t mb = fV.dim;
        for (double t : tg) {
            const auto fd = finite_difference_intrinsic(model, mu0, fV, phi, t, eps, fd_cfg);
            // picard value at this node
            std::vector<double> dval(mb, 0.0);
            for (std::size_t g = 0; g < pic.t_grid.size(); ++g)
                if (std::fabs(pic.t_grid[g] - t) < 1e-12)
                    for (std::size_t cc = 0; cc < mb; ++cc)
                        dval[cc] = pic.d_intrinsic[g * mb + cc];
            double diff = 0.0, norm = 0.0;
            for (std::size_t cc = 0; cc < mb; ++cc) {
                diff += (dval[cc] - fd.richardson[cc]) * (dval[cc] - fd.richardson[cc]);
                norm += fd.richardson[cc] * fd.richardson[cc];
            }
            const double rel = std::sqrt(diff) / std::max(1e-12, std::sqrt(norm));
            c.require(rel <= 0.05, name + " D^I P_tV vs fd at t=" + fmt(t) + ": rel=" +
                                       fmt(rel));
        }
    }
}

void criterion_10(Criterion& c) {
    const auto mod = DiniModulus::power(1.0, 0.5);
    const std::vector<double> tg{0.1, 0.2, 0.4, 0.7, 1.0};
    for (const auto& [name, params] :
         std::vector<std::pair<std::string, std::map<std::string, double>>>{
             {"pure_bm", {{"dim", 1}}}, {"mean_field_ou", {{"a", 0.5}}}}) {
        const auto model = make_gallery_model(name, params);
        std::vector<double> cs;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            HarnackConfig cfg;
            cfg.sim.n_particles = 8000;
            cfg.sim.dt = 0.02;
            cfg.sim.seed = 1000 + seed;
            cfg.dist_size = 400;
            const auto table =
                distance_decay_profile(model, EmpiricalMeasure::dirac({0.0}),
                                       EmpiricalMeasure::dirac({1.0}), mod, 2.0, tg, cfg);
            if (seed == 1)
                c.require(table.ratio_no_increasing_trend, name + " ratio trend as t drops");
            cs.push_back(table.end_constant);
        }
        const double mean_c = pairwise_mean(cs);
        for (double v : cs)
            c.require(std::fabs(v - mean_c) <= 0.3 * mean_c,
                      name + " END constant stability: " + fmt(v) + " vs mean " + fmt(mean_c));
    }
}

void criterion_11(Criterion& c) {
#ifdef MVSDE_CONFIG_DIR
    const std::string cfg_path = std::string(MVSDE_CONFIG_DIR) + "/pure_bm_entropy.json";
    namespace fs = std::filesystem;
    const auto base = fs::temp_directory_path() / "mvsde_acceptance_det";
    fs::remove_all(base);
    const std::string d1 = (base / "t1").string(), d2 = (base / "t2").string();
    const auto o1 = run_scenario(cfg_path, d1, nullptr, 1);
    const auto o2 = run_scenario(cfg_path, d2, nullptr, 2);
    c.require(o1.exit_code == 0 && o2.exit_code == 0, "scenario runs");
    for (const std::string f : {"0_entropy_cost.csv", "1_dlp_profile.csv"}) {
        const auto a = read_text_file(d1 + "/" + f);
        const auto b = read_text_file(d2 + "/" + f);
        c.require(a == b, f + " byte-identical across --threads");
    }
#else
    c.require(false, "config dir not wired");
#endif
}

}  // namespace

int main() {
    std::printf("acceptance suite (omp_max_threads=%d)\n", omp_get_max_threads());
    run_criterion(1, "tilde-alpha quadrature identities (C1, ASS)", criterion_1);
    run_criterion(2, "metric suite for W_k and W_alpha", criterion_2);
    run_criterion(3, "short-time moment law slopes", criterion_3);
    run_criterion(4, "Girsanov martingale and second moment", criterion_4);
    run_criterion(5, "entropy-cost constant c/t", criterion_5);
    run_criterion(6, "intrinsic derivative vs closed form and oracle", criterion_6);
    run_criterion(7, "degenerate reduction bitwise", criterion_7);
    run_criterion(8, "1/sqrt(t) law for bounded payoffs", criterion_8);
    run_criterion(9, "Picard fixed point and P_tV derivative", criterion_9);
    run_criterion(10, "distance-decay profile and END stability", criterion_10);
    run_criterion(11, "determinism across thread counts", criterion_11);

    int failed = 0;
    for (const auto& r : g_results) failed += r.pass ? 0 : 1;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(g_results.size()) - failed,
                g_results.size());
    return failed == 0 ? 0 : 1;
}
