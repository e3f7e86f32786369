// Timing comparison of the OpenMP particle kernels against the serial
// reference implementation. Not a correctness test (the unit suite asserts
// bitwise equality of the two paths); this reports throughput.

#include <omp.h>

#include <chrono>
#include <cstdio>

#include "mvsde/bismut.hpp"
#include "mvsde/sim.hpp"

using namespace mvsde;

namespace {

double time_once(const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    body();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void bench_case(const char* label, std::size_t n, double dt, double t_end) {
    const auto model = make_gallery_model("mean_field_ou", {{"a", 0.5}});
    const auto mu0 = EmpiricalMeasure::dirac({1.0});

    SimConfig cfg;
    cfg.n_particles = n;
    cfg.dt = dt;
    cfg.t_end = t_end;
    cfg.seed = 12345;

    cfg.exec = ExecMode::Serial;
    PathBundle serial_bundle;
    const double t_serial =
        time_once([&] { serial_bundle = simulate_mckean_vlasov(model, mu0, cfg); });

    cfg.exec = ExecMode::OpenMP;
    PathBundle omp_bundle;
    const double t_omp = time_once([&] { omp_bundle = simulate_mckean_vlasov(model, mu0, cfg); });

    const bool identical = serial_bundle.states == omp_bundle.states;

    const auto flow = FrozenFlow::from_bundle(omp_bundle, model);
    const double t_deriv = time_once([&] {
        const auto d = mean_field_derivative_flow(model, omp_bundle, flow,
                                                  PerturbationDirection::constant({1.0}));
        (void)d;
    });

    const double steps = static_cast<double>(cfg.steps()) * static_cast<double>(n);
    std::printf("%-18s n=%8zu steps=%5zu | serial %8.3fs  omp %8.3fs  speedup %4.2fx  "
                "deriv-flow %7.3fs  bitwise=%s | %6.1f Mparticle-steps/s\n",
                label, n, cfg.steps(), t_serial, t_omp, t_serial / t_omp, t_deriv,
                identical ? "yes" : "NO", steps / t_omp / 1e6);
}

}  // namespace

int main() {
    std::printf("threads available: %d\n", omp_get_max_threads());
    bench_case("em-small", 20000, 0.01, 1.0);
    bench_case("em-medium", 100000, 0.01, 0.5);
    bench_case("em-large", 200000, 0.02, 0.5);
    return 0;
}
