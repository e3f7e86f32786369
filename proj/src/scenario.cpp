#include "mvsde/scenario.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "mvsde/transport.hpp"

namespace mvsde {

namespace fs = std::filesystem;
using nlohmann::json;

const char* kVersion = "0.1.0";

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail("ConfigInvalid", msg); }

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& ctx) {
    if (!j.is_object()) config_error(ctx + " must be an object");
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            config_error("unknown key '" + key + "' in " + ctx);
    }
}

double need_num(const json& j, const std::string& key, const std::string& ctx) {
    if (!j.contains(key) || !j[key].is_number())
        config_error("missing numeric field '" + key + "' in " + ctx);
    return j[key].get<double>();
}

double opt_num(const json& j, const std::string& key, double dflt) {
    return j.contains(key) ? j[key].get<double>() : dflt;
}

}  // namespace

DiniModulus modulus_from_json(const json& j) {
    check_keys(j, {"family", "A", "eps", "beta", "cap", "knots", "r_max"}, "modulus");
    const std::string fam = j.value("family", "");
    const double r_max = opt_num(j, "r_max", 1e6);
    if (fam == "power") return DiniModulus::power(opt_num(j, "A", 1.0), need_num(j, "eps", "modulus"), r_max);
    if (fam == "log_power")
        return DiniModulus::log_power(opt_num(j, "A", 1.0), need_num(j, "beta", "modulus"), r_max);
    if (fam == "capped_linear") return DiniModulus::capped_linear(opt_num(j, "cap", 1.0), r_max);
    if (fam == "tabulated") {
        if (!j.contains("knots") || !j["knots"].is_array()) config_error("tabulated modulus needs knots");
        std::vector<std::pair<double, double>> knots;
        for (const auto& kn : j["knots"]) knots.emplace_back(kn.at(0).get<double>(), kn.at(1).get<double>());
        return DiniModulus::tabulated(std::move(knots), r_max);
    }
    config_error("unknown modulus family '" + fam + "'");
}

EmpiricalMeasure measure_from_json(const json& j) {
    if (j.is_object()) {
        check_keys(j, {"csv"}, "measure");
        return measure_from_csv(j.at("csv").get<std::string>());
    }
    if (!j.is_array() || j.empty()) config_error("measure must be [[coords...], ...] or {csv}");
    const std::size_t d = j[0].size();
    std::vector<double> pts;
    for (const auto& row : j) {
        if (row.size() != d) config_error("ragged measure rows");
        for (const auto& v : row) pts.push_back(v.get<double>());
    }
    return EmpiricalMeasure(std::move(pts), d);
}

Payoff payoff_by_name(const std::string& name) {
    if (name == "id") return Payoff::coordinate();
    if (name == "square") return Payoff::square();
    if (name == "tanh") return Payoff::tanh_bounded();
    config_error("unknown payoff '" + name + "' (use id|square|tanh)");
}

PerturbationDirection direction_by_name(const std::string& name, std::size_t dim) {
    if (name == "one") return PerturbationDirection::constant(std::vector<double>(dim, 1.0));
    if (name == "id") return PerturbationDirection::identity();
    if (name == "sin") return PerturbationDirection::sine();
    config_error("unknown direction '" + name + "' (use one|id|sin)");
}

ExperimentConfig parse_config_json(const json& j) {
    check_keys(j,
               {"seed", "out_dir", "model", "modulus", "sim", "distance", "estimator",
                "harnack", "pipeline"},
               "config");
    ExperimentConfig cfg;
    cfg.raw = j;
    if (!j.contains("seed") || !j["seed"].is_number_unsigned())
        config_error("seed is mandatory and must be a nonnegative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
    cfg.out_dir = j.value("out_dir", "");

    if (j.contains("model")) {
        check_keys(j["model"], {"name", "params"}, "model");
        cfg.model_name = j["model"].value("name", "");
        if (j["model"].contains("params")) {
            for (const auto& [k, v] : j["model"]["params"].items()) {
                if (!v.is_number()) config_error("model param '" + k + "' must be numeric");
                cfg.model_params[k] = v.get<double>();
            }
        }
    }
    if (j.contains("modulus")) {
        cfg.modulus = modulus_from_json(j["modulus"]);
        cfg.has_modulus = true;
    }
    if (j.contains("sim")) {
        const auto& s = j["sim"];
        check_keys(s, {"n_particles", "dt", "t_end", "store_increments", "snapshot_times"},
                   "sim");
        cfg.sim.n_particles = static_cast<std::size_t>(need_num(s, "n_particles", "sim"));
        cfg.sim.dt = need_num(s, "dt", "sim");
        cfg.sim.t_end = need_num(s, "t_end", "sim");
        if (!(cfg.sim.dt > 0.0)) config_error("sim.dt must be positive");
        if (!(cfg.sim.t_end > 0.0)) config_error("sim.t_end must be positive");
        cfg.sim.store_increments = s.value("store_increments", true);
        if (s.contains("snapshot_times"))
            for (const auto& v : s["snapshot_times"])
                cfg.sim.snapshot_times.push_back(v.get<double>());
    }
    cfg.sim.seed = cfg.seed;
    if (j.contains("distance")) {
        const auto& dj = j["distance"];
        check_keys(dj, {"method", "k", "entropic_reg"}, "distance");
        cfg.distance_k = opt_num(dj, "k", 2.0);
        cfg.ot.entropic_reg = opt_num(dj, "entropic_reg", 0.01);
        const std::string m = dj.value("method", "auto");
        if (m == "auto") cfg.ot.method = OTMethod::Auto;
        else if (m == "quantile1d") cfg.ot.method = OTMethod::Quantile1D;
        else if (m == "exact") cfg.ot.method = OTMethod::ExactLP;
        else if (m == "entropic") cfg.ot.method = OTMethod::Entropic;
        else config_error("unknown distance method '" + m + "'");
    }
    cfg.estimator.sim = cfg.sim;
    if (j.contains("estimator")) {
        const auto& e = j["estimator"];
        check_keys(e, {"reps", "eps_list", "picard"}, "estimator");
        cfg.estimator.reps = static_cast<std::size_t>(opt_num(e, "reps", 1));
        if (e.contains("eps_list")) {
            cfg.fd_eps.clear();
            for (const auto& v : e["eps_list"]) cfg.fd_eps.push_back(v.get<double>());
            if (cfg.fd_eps.size() < 2) config_error("eps_list needs >= 2 entries");
        }
        if (e.contains("picard")) {
            check_keys(e["picard"], {"max_iter", "tol", "grid"}, "estimator.picard");
            cfg.estimator.picard_max_iter =
                static_cast<std::size_t>(opt_num(e["picard"], "max_iter", 32));
            cfg.estimator.picard_tol = opt_num(e["picard"], "tol", 1e-4);
            cfg.estimator.picard_grid =
                static_cast<std::size_t>(opt_num(e["picard"], "grid", 24));
        }
    }
    cfg.harnack.sim = cfg.sim;
    if (j.contains("harnack")) {
        const auto& h = j["harnack"];
        check_keys(h, {"knn_size", "dist_size", "k_nn"}, "harnack");
        cfg.harnack.knn_size = static_cast<std::size_t>(opt_num(h, "knn_size", 8192));
        cfg.harnack.dist_size = static_cast<std::size_t>(opt_num(h, "dist_size", 512));
        cfg.harnack.k_nn = static_cast<int>(opt_num(h, "k_nn", 4));
    }
    if (j.contains("pipeline")) {
        if (!j["pipeline"].is_array()) config_error("pipeline must be an array");
        cfg.pipeline = j["pipeline"];
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        config_error(std::string("cannot parse config: ") + e.what());
    }
    return parse_config_json(j);
}

// ---------------------------------------------------------------------------
// Pipeline execution

namespace {

struct AssertionLog {
    std::size_t checked = 0;
    json failures = json::array();

    void check(const json& spec, const std::string& column, double value) {
        ++checked;
        bool ok = true;
        if (spec.contains("min") && value < spec["min"].get<double>()) ok = false;
        if (spec.contains("max") && value > spec["max"].get<double>()) ok = false;
        if (spec.contains("target")) {
            const double tol = spec.value("tol", 0.0);
            if (std::fabs(value - spec["target"].get<double>()) > tol) ok = false;
        }
        if (!ok) {
            json f;
            f["column"] = column;
            f["value"] = value;
            f["spec"] = spec;
            failures.push_back(f);
        }
    }
    void check_flag(const std::string& name, bool value, bool expected) {
        ++checked;
        if (value != expected) {
            json f;
            f["column"] = name;
            f["value"] = value;
            f["spec"] = expected;
            failures.push_back(f);
        }
    }
};

void apply_assertions(const json& op, const std::string& op_name,
                      const std::function<double(const std::string&)>& column_value,
                      AssertionLog& log) {
    if (!op.contains("assertions")) return;
    for (const auto& spec : op["assertions"]) {
        check_keys(spec, {"column", "min", "max", "target", "tol"}, op_name + ".assertions");
        const std::string col = spec.at("column").get<std::string>();
        log.check(spec, col, column_value(col));
    }
}

json estimate_to_json(const IntrinsicDerivativeEstimate& est) {
    json j;
    j["t"] = est.t;
    j["value"] = est.value;
    j["stderr"] = est.stderr_;
    j["i_term"] = est.i_term;
    j["n_term"] = est.n_term;
    j["ntilde_term"] = est.ntilde_term;
    j["n_paths"] = est.n_paths;
    j["btt_ratio"] = est.btt_ratio;
    j["picard_iters"] = est.picard_iterations;
    return j;
}

std::vector<double> parse_t_grid(const json& op) {
    std::vector<double> tg;
    for (const auto& v : op.at("t_grid")) tg.push_back(v.get<double>());
    if (tg.empty()) config_error("empty t_grid");
    return tg;
}

}  // namespace

ScenarioOutcome run_scenario(const std::string& config_path, const std::string& out_override,
                             const std::uint64_t* seed_override, int threads) {
    ScenarioOutcome outcome;
    ExperimentConfig cfg;
    try {
        cfg = parse_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.sim.seed = *seed_override;
            cfg.estimator.sim.seed = *seed_override;
            cfg.harnack.sim.seed = *seed_override;
        }
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (cfg.out_dir.empty()) config_error("out_dir required (config or --out)");
        if (cfg.pipeline.empty()) config_error("pipeline required for run-scenario");
    } catch (const Error& e) {
        outcome.exit_code = 2;
        outcome.message = e.what();
        return outcome;
    }
    if (threads > 0) omp_set_num_threads(threads);

    outcome.out_dir = cfg.out_dir;
    AssertionLog log;
    json results = json::array();
    try {
        fs::create_directories(cfg.out_dir);
        CoefficientModel model;
        if (!cfg.model_name.empty()) model = make_gallery_model(cfg.model_name, cfg.model_params);

        std::size_t op_idx = 0;
        for (const auto& op : cfg.pipeline) {
            const std::string name = op.value("op", "");
            const std::string tag = std::to_string(op_idx) + "_" + name;
            json out;
            out["op"] = name;

            if (name == "validate_modulus") {
                check_keys(op, {"op", "assert_passes"}, name);
                if (!cfg.has_modulus) config_error("validate_modulus needs a modulus block");
                const auto rep = validate_modulus(cfg.modulus);
                out["passes"] = rep.passes;
                out["valid_from"] = rep.valid_from;
                out["dini_integral_01"] = rep.dini_integral_01;
                out["dini_convergent"] = rep.dini_convergent;
                json checks = json::array();
                for (const auto& c : rep.checks) {
                    json cj;
                    cj["name"] = c.name;
                    cj["pass"] = c.pass;
                    cj["worst_violation"] = c.worst_violation;
                    cj["worst_location"] = c.worst_location;
                    checks.push_back(cj);
                }
                out["checks"] = checks;
                if (op.contains("assert_passes"))
                    log.check_flag("passes", rep.passes, op["assert_passes"].get<bool>());
            } else if (name == "check_assumptions") {
                check_keys(op, {"op", "assert_passes"}, name);
                const auto rep = audit_assumption_A(model);
                out["passes"] = rep.passes;
                json checks = json::array();
                for (const auto& c : rep.checks) {
                    json cj;
                    cj["name"] = c.name;
                    cj["pass"] = c.pass;
                    cj["measured"] = c.measured;
                    cj["bound"] = c.bound;
                    checks.push_back(cj);
                }
                out["checks"] = checks;
                out["samples_used"] = rep.samples_used;
                if (op.contains("assert_passes"))
                    log.check_flag("passes", rep.passes, op["assert_passes"].get<bool>());
            } else if (name == "simulate") {
                check_keys(op, {"op", "initial"}, name);
                const auto mu0 = measure_from_json(op.at("initial"));
                const auto bundle = simulate_mckean_vlasov(model, mu0, cfg.sim);
                std::vector<double> snaps = cfg.sim.snapshot_times;
                if (snaps.empty()) snaps = {cfg.sim.t_end};
                for (double t : snaps) {
                    const std::size_t j = bundle.snapshot_index(t);
                    write_cloud_csv(cfg.out_dir + "/" + tag + "_t" + format_double(t) + ".csv",
                                    bundle, j);
                }
                if (bundle.has_increments())
                    write_increments(cfg.out_dir + "/" + tag + "_increments.bin", bundle);
                out["model"] = model.name;
                out["n_particles"] = bundle.n;
                out["steps"] = bundle.steps();
                out["seed"] = cfg.seed;
            } else if (name == "wasserstein") {
                check_keys(op, {"op", "metric", "in_a", "in_b", "assertions"}, name);
                const auto a = measure_from_json(op.at("in_a"));
                const auto b = measure_from_json(op.at("in_b"));
                const std::string metric = op.value("metric", "wk");
                OTResult r = metric == "walpha"
                                 ? wasserstein_alpha(a, b, cfg.modulus, cfg.ot)
                                 : wasserstein_k(a, b, cfg.distance_k, cfg.ot);
                out["metric"] = metric;
                out["value"] = r.value;
                out["method"] = static_cast<int>(r.method_used);
                out["row_residual"] = r.plan.row_residual;
                out["col_residual"] = r.plan.col_residual;
                apply_assertions(op, name, [&](const std::string& c) -> double {
                    if (c == "value") return r.value;
                    config_error("unknown assertion column " + c);
                }, log);
            } else if (name == "entropy_cost") {
                check_keys(op, {"op", "gamma", "gamma_tilde", "t_grid", "assertions",
                                "assert_no_increasing_trend"},
                           name);
                const auto g = measure_from_json(op.at("gamma"));
                const auto gt = measure_from_json(op.at("gamma_tilde"));
                const auto tg = parse_t_grid(op);
                const auto table = entropy_cost_check(model, g, gt, tg, cfg.harnack);
                std::string csv =
                    "t,ent_knn,ent_knn_stderr,ent_gauss,ent_girsanov,ent_rlogr,w2_sq,c_hat,"
                    "c_hat_gauss\n";
                json rows = json::array();
                for (const auto& r : table.rows) {
                    csv += format_double(r.t) + "," + format_double(r.ent_knn) + "," +
                           format_double(r.ent_knn_stderr) + "," + format_double(r.ent_gauss) +
                           "," + format_double(r.ent_girsanov) + "," +
                           format_double(r.ent_rlogr) + "," + format_double(r.w2_sq) + "," +
                           format_double(r.c_hat) + "," + format_double(r.c_hat_gauss) + "\n";
                    json rj;
                    rj["t"] = r.t;
                    rj["ent_knn"] = r.ent_knn;
                    rj["ent_gauss"] = r.ent_gauss;
                    rj["ent_girsanov"] = r.ent_girsanov;
                    rj["c_hat"] = r.c_hat;
                    rj["c_hat_gauss"] = r.c_hat_gauss;
                    rows.push_back(rj);
                    apply_assertions(op, name, [&](const std::string& c) -> double {
                        if (c == "c_hat") return r.c_hat;
                        if (c == "c_hat_gauss") return r.c_hat_gauss;
                        if (c == "ent_knn") return r.ent_knn;
                        if (c == "ent_girsanov") return r.ent_girsanov;
                        config_error("unknown assertion column " + c);
                    }, log);
                }
                write_text_file(cfg.out_dir + "/" + tag + ".csv", csv);
                out["rows"] = rows;
                out["max_c_hat"] = table.max_c_hat;
                out["c_hat_no_increasing_trend"] = table.c_hat_no_increasing_trend;
                if (op.contains("assert_no_increasing_trend"))
                    log.check_flag("c_hat_no_increasing_trend", table.c_hat_no_increasing_trend,
                                   op["assert_no_increasing_trend"].get<bool>());
            } else if (name == "log_harnack") {
                check_keys(op, {"op", "gamma", "gamma_tilde", "t_grid", "assertions"}, name);
                const auto g = measure_from_json(op.at("gamma"));
                const auto gt = measure_from_json(op.at("gamma_tilde"));
                const auto tg = parse_t_grid(op);
                const auto table = log_harnack_check(model, g, gt,
                                                     default_positive_family(model.dim_x), tg,
                                                     cfg.harnack);
                out["min_c_overall"] = table.min_c_overall;
                json rows = json::array();
                for (const auto& r : table.rows) {
                    json rj;
                    rj["t"] = r.t;
                    rj["min_c"] = r.min_c;
                    rows.push_back(rj);
                }
                out["rows"] = rows;
                apply_assertions(op, name, [&](const std::string& c) -> double {
                    if (c == "min_c_overall") return table.min_c_overall;
                    config_error("unknown assertion column " + c);
                }, log);
            } else if (name == "dlp_profile") {
                check_keys(op, {"op", "gamma", "gamma_tilde", "t_grid", "assertions",
                                "assert_no_increasing_trend"},
                           name);
                const auto g = measure_from_json(op.at("gamma"));
                const auto gt = measure_from_json(op.at("gamma_tilde"));
                const auto tg = parse_t_grid(op);
                const auto table = distance_decay_profile(model, g, gt, cfg.modulus,
                                                          cfg.distance_k, tg, cfg.harnack);
                std::string csv = "t,w_alpha,w_k,ratio_dlp\n";
                for (const auto& r : table.rows)
                    csv += format_double(r.t) + "," + format_double(r.w_alpha) + "," +
                           format_double(r.w_k) + "," + format_double(r.ratio) + "\n";
                write_text_file(cfg.out_dir + "/" + tag + ".csv", csv);
                out["end_constant"] = table.end_constant;
                out["ratio_no_increasing_trend"] = table.ratio_no_increasing_trend;
                out["w_k_initial"] = table.w_k_initial;
                if (op.contains("assert_no_increasing_trend"))
                    log.check_flag("ratio_no_increasing_trend",
                                   table.ratio_no_increasing_trend,
                                   op["assert_no_increasing_trend"].get<bool>());
                apply_assertions(op, name, [&](const std::string& c) -> double {
                    if (c == "end_constant") return table.end_constant;
                    config_error("unknown assertion column " + c);
                }, log);
            } else if (name == "bismut") {
                check_keys(op, {"op", "initial", "f", "phi", "t_grid", "assertions",
                                "with_fd", "assert_oracle_sigma"},
                           name);
                const auto mu0 = measure_from_json(op.at("initial"));
                const auto f = payoff_by_name(op.value("f", "id"));
                const auto phi = direction_by_name(op.value("phi", "one"), model.dim_x);
                const auto tg = parse_t_grid(op);
                EstimatorConfig est_cfg = cfg.estimator;
                const auto ests = intrinsic_derivative_grid(model, mu0, f, phi, tg, est_cfg);
                json rows = json::array();
                std::string csv = "t,value,stderr,i_term,n_term,ntilde_term,fd_value,fd_stderr\n";
                for (std::size_t g = 0; g < ests.size(); ++g) {
                    json rj = estimate_to_json(ests[g]);
                    double fd_val = 0.0, fd_se = 0.0;
                    if (op.value("with_fd", true)) {
                        EstimatorConfig fd_cfg = cfg.estimator;
                        fd_cfg.sim.seed = cfg.seed + 7777;
                        const auto fd = finite_difference_intrinsic(model, mu0, f, phi, tg[g],
                                                                    cfg.fd_eps, fd_cfg);
                        fd_val = fd.richardson[0];
                        fd_se = fd.stderr_[0];
                        rj["fd_value"] = fd.richardson;
                        rj["fd_stderr"] = fd.stderr_;
                        if (op.contains("assert_oracle_sigma")) {
                            const double comb = std::sqrt(
                                ests[g].stderr_[0] * ests[g].stderr_[0] + fd_se * fd_se);
                            ++log.checked;
                            if (std::fabs(ests[g].value[0] - fd_val) >
                                op["assert_oracle_sigma"].get<double>() * comb + 1e-9) {
                                json fj;
                                fj["column"] = "oracle_agreement";
                                fj["value"] = std::fabs(ests[g].value[0] - fd_val);
                                fj["spec"] = op["assert_oracle_sigma"];
                                log.failures.push_back(fj);
                            }
                        }
                    }
                    csv += format_double(tg[g]) + "," + format_double(ests[g].value[0]) + "," +
                           format_double(ests[g].stderr_[0]) + "," +
                           format_double(ests[g].i_term[0]) + "," +
                           format_double(ests[g].n_term[0]) + "," +
                           format_double(ests[g].ntilde_term[0]) + "," +
                           format_double(fd_val) + "," + format_double(fd_se) + "\n";
                    rows.push_back(rj);
                    apply_assertions(op, name, [&](const std::string& c) -> double {
                        if (c == "value") return ests[g].value[0];
                        if (c == "stderr") return ests[g].stderr_[0];
                        if (c == "fd_value") return fd_val;
                        config_error("unknown assertion column " + c);
                    }, log);
                }
                write_text_file(cfg.out_dir + "/" + tag + ".csv", csv);
                out["rows"] = rows;
            } else {
                config_error("unknown pipeline op '" + name + "'");
            }

            write_text_file(cfg.out_dir + "/" + tag + ".json", json(out).dump(2) + "\n");
            results.push_back(out);
            ++op_idx;
        }
    } catch (const Error& e) {
        outcome.exit_code = std::string(e.code()) == "ConfigInvalid" ? 2 : 3;
        outcome.message = e.what();
        return outcome;
    } catch (const std::exception& e) {
        outcome.exit_code = 3;
        outcome.message = e.what();
        return outcome;
    }

    // manifest: the only place a timestamp appears
    json manifest;
    manifest["config_hash"] = fnv1a(cfg.raw.dump());
    manifest["seed"] = cfg.seed;
    manifest["versions"] = {{"mvsde", kVersion}};
    manifest["assertions_checked"] = log.checked;
    manifest["assertion_failures"] = log.failures;
    manifest["generated_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    write_text_file(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");

    outcome.assertions_checked = log.checked;
    outcome.assertions_failed = log.failures.size();
    if (!log.failures.empty()) {
        outcome.exit_code = 1;
        outcome.message = "assertions failed: " + log.failures.dump();
    }
    return outcome;
}

int write_report(const std::string& artifact_dir) {
    if (!fs::exists(artifact_dir + "/manifest.json"))
        fail("MissingManifest", "no manifest.json in " + artifact_dir);
    json report;
    report["manifest"] = json::parse(read_text_file(artifact_dir + "/manifest.json"));
    json sections = json::array();
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(artifact_dir)) {
        const auto p = entry.path();
        if (p.extension() == ".json" && p.filename() != "manifest.json" &&
            p.filename() != "report.json")
            files.push_back(p.string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) sections.push_back(json::parse(read_text_file(f)));
    report["sections"] = sections;
    write_text_file(artifact_dir + "/report.json", report.dump(2) + "\n");
    return 0;
}

}  // namespace mvsde
