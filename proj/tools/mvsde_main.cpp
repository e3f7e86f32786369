#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "mvsde/scenario.hpp"
#include "mvsde/transport.hpp"

using namespace mvsde;
using nlohmann::json;

namespace {

struct GlobalOpts {
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::strtod(tok.c_str(), nullptr));
    return out;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == "ConfigInvalid" ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

void apply_globals(const GlobalOpts& g) {
    if (g.threads > 0) omp_set_num_threads(g.threads);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"McKean-Vlasov SDE simulation and derivative estimation"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    GlobalOpts g;
    app.add_option("--out", g.out, "output path override");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_option("--threads", g.threads, "OpenMP thread count");

    std::string config_path, model_name, metric = "wk", in_a, in_b, f_name = "id",
                phi_name = "one", t_list, gamma_csv, gamma_tilde_csv, artifact_dir;
    double w_k = 2.0;

    auto* sc_validate = app.add_subcommand("validate-modulus", "validate a Dini modulus");
    sc_validate->add_option("--config", config_path)->required();

    auto* sc_sim = app.add_subcommand("simulate", "interacting particle simulation");
    sc_sim->add_option("--model", model_name);
    sc_sim->add_option("--config", config_path)->required();

    auto* sc_w = app.add_subcommand("wasserstein", "distance between point clouds");
    sc_w->add_option("--metric", metric, "wk|walpha");
    sc_w->add_option("--k", w_k);
    sc_w->add_option("--modulus", config_path, "config file holding the modulus block");
    sc_w->add_option("--in-a", in_a)->required();
    sc_w->add_option("--in-b", in_b)->required();

    auto* sc_b = app.add_subcommand("bismut", "intrinsic derivative estimates");
    sc_b->add_option("--model", model_name);
    sc_b->add_option("--f", f_name, "id|square|tanh");
    sc_b->add_option("--phi", phi_name, "one|id|sin");
    sc_b->add_option("--t", t_list, "comma-separated t grid")->required();
    sc_b->add_option("--config", config_path)->required();

    auto* sc_h = app.add_subcommand("harnack", "entropy-cost / log-Harnack / decay table");
    sc_h->add_option("--model", model_name);
    sc_h->add_option("--gamma", gamma_csv)->required();
    sc_h->add_option("--gamma-tilde", gamma_tilde_csv)->required();
    sc_h->add_option("--t-grid", t_list)->required();
    sc_h->add_option("--config", config_path)->required();

    auto* sc_a = app.add_subcommand("check-assumptions", "audit assumption constants");
    sc_a->add_option("--model", model_name);
    sc_a->add_option("--config", config_path);

    auto* sc_run = app.add_subcommand("run-scenario", "execute a configured pipeline");
    sc_run->add_option("--config", config_path)->required();

    auto* sc_rep = app.add_subcommand("report", "consolidate a scenario artifact directory");
    sc_rep->add_option("dir", artifact_dir)->required();

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    if (sc_validate->parsed()) {
        return guarded([&] {
            apply_globals(g);
            const auto cfg = parse_config(config_path);
            if (!cfg.has_modulus) fail("ConfigInvalid", "config has no modulus block");
            const auto rep = validate_modulus(cfg.modulus);
            json out;
            out["modulus"] = cfg.modulus.describe();
            out["passes"] = rep.passes;
            out["valid_from"] = rep.valid_from;
            out["dini_integral_01"] = rep.dini_integral_01;
            json checks = json::array();
            for (const auto& c : rep.checks)
                checks.push_back({{"name", c.name},
                                  {"pass", c.pass},
                                  {"worst_violation", c.worst_violation},
                                  {"worst_location", c.worst_location}});
            out["checks"] = checks;
            std::cout << out.dump(2) << "\n";
            if (!g.out.empty()) write_text_file(g.out, out.dump(2) + "\n");
            return rep.passes ? 0 : 1;
        });
    }

    if (sc_sim->parsed()) {
        return guarded([&] {
            apply_globals(g);
            auto cfg = parse_config(config_path);
            if (g.seed_set) {
                cfg.seed = g.seed;
                cfg.sim.seed = g.seed;
            }
            if (!model_name.empty()) cfg.model_name = model_name;
            const auto model = make_gallery_model(cfg.model_name, cfg.model_params);
            const std::string out_dir =
                g.out.empty() ? (cfg.out_dir.empty() ? "." : cfg.out_dir) : g.out;
            std::filesystem::create_directories(out_dir);
            // initial measure from the first simulate op in the pipeline, else delta_0
            EmpiricalMeasure mu0 =
                EmpiricalMeasure::dirac(std::vector<double>(model.dim_x, 0.0));
            for (const auto& op : cfg.pipeline)
                if (op.value("op", "") == "simulate" && op.contains("initial"))
                    mu0 = measure_from_json(op["initial"]);
            const auto bundle = simulate_mckean_vlasov(model, mu0, cfg.sim);
            std::vector<double> snaps = cfg.sim.snapshot_times;
            if (snaps.empty()) snaps = {cfg.sim.t_end};
            for (double t : snaps)
                write_cloud_csv(out_dir + "/snapshot_t" + format_double(t) + ".csv", bundle,
                                bundle.snapshot_index(t));
            if (bundle.has_increments())
                write_increments(out_dir + "/increments.bin", bundle);
            json meta;
            meta["model"] = model.name;
            meta["seed"] = cfg.seed;
            meta["n_particles"] = cfg.sim.n_particles;
            meta["dt"] = cfg.sim.dt;
            meta["t_end"] = cfg.sim.t_end;
            meta["version"] = kVersion;
            meta["git_describe"] = MVSDE_GIT_DESCRIBE;
            write_text_file(out_dir + "/metadata.json", meta.dump(2) + "\n");
            std::cout << "wrote " << out_dir << "\n";
            return 0;
        });
    }

    if (sc_w->parsed()) {
        return guarded([&] {
            apply_globals(g);
            const auto a = measure_from_csv(in_a);
            const auto b = measure_from_csv(in_b);
            OTOptions opts;
            OTResult r;
            if (metric == "walpha") {
                DiniModulus mod = DiniModulus::power(1.0, 0.5);
                if (!config_path.empty()) {
                    const auto cfg = parse_config(config_path);
                    if (!cfg.has_modulus) fail("ConfigInvalid", "config has no modulus block");
                    mod = cfg.modulus;
                }
                r = wasserstein_alpha(a, b, mod, opts);
            } else if (metric == "wk") {
                r = wasserstein_k(a, b, w_k, opts);
            } else {
                fail("ConfigInvalid", "metric must be wk or walpha");
            }
            json out;
            out["value"] = r.value;
            out["method"] = r.method_used == OTMethod::Quantile1D ? "quantile1d"
                            : r.method_used == OTMethod::ExactLP  ? "exact"
                                                                  : "entropic";
            out["residuals"] = {{"row", r.plan.row_residual}, {"col", r.plan.col_residual}};
            std::cout << out.dump(2) << "\n";
            if (!g.out.empty()) write_text_file(g.out, out.dump(2) + "\n");
            return 0;
        });
    }

    if (sc_b->parsed()) {
        return guarded([&] {
            apply_globals(g);
            auto cfg = parse_config(config_path);
            if (g.seed_set) {
                cfg.seed = g.seed;
                cfg.estimator.sim.seed = g.seed;
            }
            if (!model_name.empty()) cfg.model_name = model_name;
            const auto model = make_gallery_model(cfg.model_name, cfg.model_params);
            EmpiricalMeasure mu0 =
                EmpiricalMeasure::dirac(std::vector<double>(model.dim_x, 0.0));
            for (const auto& op : cfg.pipeline)
                if (op.value("op", "") == "bismut" && op.contains("initial"))
                    mu0 = measure_from_json(op["initial"]);
            const auto f = payoff_by_name(f_name);
            const auto phi = direction_by_name(phi_name, model.dim_x);
            const auto tg = parse_list(t_list);
            const auto ests = intrinsic_derivative_grid(model, mu0, f, phi, tg, cfg.estimator);
            json rows = json::array();
            for (std::size_t i = 0; i < ests.size(); ++i) {
                EstimatorConfig fd_cfg = cfg.estimator;
                fd_cfg.sim.seed = cfg.seed + 7777;
                const auto fd =
                    finite_difference_intrinsic(model, mu0, f, phi, tg[i], cfg.fd_eps, fd_cfg);
                json r;
                r["t"] = tg[i];
                r["value"] = ests[i].value[0];
                r["stderr"] = ests[i].stderr_[0];
                r["I_term"] = ests[i].i_term[0];
                r["N_term"] = ests[i].n_term[0];
                r["Ntilde_term"] = ests[i].ntilde_term[0];
                r["fd_value"] = fd.richardson[0];
                r["fd_stderr"] = fd.stderr_[0];
                r["picard_iters"] = ests[i].picard_iterations;
                rows.push_back(r);
            }
            std::cout << rows.dump(2) << "\n";
            if (!g.out.empty()) write_text_file(g.out, rows.dump(2) + "\n");
            return 0;
        });
    }

    if (sc_h->parsed()) {
        return guarded([&] {
            apply_globals(g);
            auto cfg = parse_config(config_path);
            if (g.seed_set) {
                cfg.seed = g.seed;
                cfg.harnack.sim.seed = g.seed;
            }
            if (!model_name.empty()) cfg.model_name = model_name;
            const auto model = make_gallery_model(cfg.model_name, cfg.model_params);
            const auto gamma = measure_from_csv(gamma_csv);
            const auto gamma_tilde = measure_from_csv(gamma_tilde_csv);
            const auto tg = parse_list(t_list);
            const auto ec = entropy_cost_check(model, gamma, gamma_tilde, tg, cfg.harnack);
            const auto lh = log_harnack_check(model, gamma, gamma_tilde,
                                              default_positive_family(model.dim_x), tg,
                                              cfg.harnack);
            const auto dlp = distance_decay_profile(model, gamma, gamma_tilde, cfg.modulus,
                                                    cfg.distance_k, tg, cfg.harnack);
            std::string csv =
                "t,ent_knn,ent_girsanov,w2_sq,c_hat,logharnack_minC,w_alpha,ratio_dlp\n";
            for (std::size_t i = 0; i < tg.size(); ++i)
                csv += format_double(tg[i]) + "," + format_double(ec.rows[i].ent_knn) + "," +
                       format_double(ec.rows[i].ent_girsanov) + "," +
                       format_double(ec.rows[i].w2_sq) + "," + format_double(ec.rows[i].c_hat) +
                       "," + format_double(lh.rows[i].min_c) + "," +
                       format_double(dlp.rows[i].w_alpha) + "," +
                       format_double(dlp.rows[i].ratio) + "\n";
            std::cout << csv;
            if (!g.out.empty()) write_text_file(g.out, csv);
            return 0;
        });
    }

    if (sc_a->parsed()) {
        return guarded([&] {
            apply_globals(g);
            std::map<std::string, double> params;
            if (!config_path.empty()) {
                const auto cfg = parse_config(config_path);
                if (model_name.empty()) model_name = cfg.model_name;
                params = cfg.model_params;
            }
            const auto model = make_gallery_model(model_name, params);
            const auto rep = audit_assumption_A(model);
            json out;
            out["model"] = model.name;
            out["passes"] = rep.passes;
            json checks = json::array();
            for (const auto& c : rep.checks)
                checks.push_back({{"name", c.name},
                                  {"pass", c.pass},
                                  {"measured", c.measured},
                                  {"bound", c.bound}});
            out["checks"] = checks;
            out["samples_used"] = rep.samples_used;
            std::cout << out.dump(2) << "\n";
            if (!g.out.empty()) write_text_file(g.out, out.dump(2) + "\n");
            return rep.passes ? 0 : 1;
        });
    }

    if (sc_run->parsed()) {
        const auto outcome =
            run_scenario(config_path, g.out, g.seed_set ? &g.seed : nullptr, g.threads);
        if (!outcome.message.empty()) std::cerr << outcome.message << "\n";
        std::cout << "scenario exit " << outcome.exit_code << " (" << outcome.assertions_checked
                  << " assertions, " << outcome.assertions_failed << " failed)\n";
        return outcome.exit_code;
    }

    if (sc_rep->parsed()) {
        return guarded([&] {
            apply_globals(g);
            write_report(artifact_dir);
            std::cout << "wrote " << artifact_dir << "/report.json\n";
            return 0;
        });
    }

    return 0;
}
