#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mvsde/scenario.hpp"

using namespace mvsde;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string temp_dir(const std::string& tag) {
    const auto p = fs::temp_directory_path() / ("mvsde_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string write_config(const std::string& dir, const json& j) {
    const std::string path = dir + "/config.json";
    write_text_file(path, j.dump(2));
    return path;
}

json small_scenario() {
    json j;
    j["seed"] = 99;
    j["model"] = {{"name", "pure_bm"}, {"params", {{"dim", 1}}}};
    j["modulus"] = {{"family", "power"}, {"A", 1.0}, {"eps", 0.5}};
    j["sim"] = {{"n_particles", 2000}, {"dt", 0.05}, {"t_end", 0.5}};
    j["harnack"] = {{"knn_size", 1000}, {"dist_size", 200}};
    j["pipeline"] = json::array(
        {{{"op", "entropy_cost"},
          {"gamma", json::array({json::array({0.0})})},
          {"gamma_tilde", json::array({json::array({1.0})})},
          {"t_grid", json::array({0.25, 0.5})}}});
    return j;
}

}  // namespace

TEST_CASE("config validation errors carry field-level messages and exit 2") {
    const auto dir = temp_dir("cfg");

    auto bad_dt = small_scenario();
    bad_dt["sim"]["dt"] = -0.5;
    auto out = run_scenario(write_config(dir, bad_dt), dir + "/o1", nullptr, 0);
    CHECK(out.exit_code == 2);
    CHECK(out.message.find("sim.dt") != std::string::npos);

    auto unknown = small_scenario();
    unknown["simm"] = 1;
    out = run_scenario(write_config(dir, unknown), dir + "/o2", nullptr, 0);
    CHECK(out.exit_code == 2);
    CHECK(out.message.find("simm") != std::string::npos);

    auto no_seed = small_scenario();
    no_seed.erase("seed");
    out = run_scenario(write_config(dir, no_seed), dir + "/o3", nullptr, 0);
    CHECK(out.exit_code == 2);
    CHECK(out.message.find("seed") != std::string::npos);
}

TEST_CASE("scenario runs, assertion failures set exit 1") {
    const auto dir = temp_dir("run");
    auto cfg = small_scenario();
    auto path = write_config(dir, cfg);
    auto out = run_scenario(path, dir + "/ok", nullptr, 0);
    CHECK(out.exit_code == 0);
    CHECK(fs::exists(dir + "/ok/manifest.json"));
    CHECK(fs::exists(dir + "/ok/0_entropy_cost.csv"));

    // impossible assertion
    cfg["pipeline"][0]["assertions"] =
        json::array({{{"column", "c_hat"}, {"min", 100.0}}});
    path = write_config(dir, cfg);
    out = run_scenario(path, dir + "/fail", nullptr, 0);
    CHECK(out.exit_code == 1);
    CHECK(out.assertions_failed > 0);
}

TEST_CASE("reruns are byte-identical; thread count does not matter") {
    const auto dir = temp_dir("det");
    const auto path = write_config(dir, small_scenario());
    REQUIRE(run_scenario(path, dir + "/a", nullptr, 1).exit_code == 0);
    REQUIRE(run_scenario(path, dir + "/b", nullptr, 2).exit_code == 0);
    const auto csv_a = read_text_file(dir + "/a/0_entropy_cost.csv");
    const auto csv_b = read_text_file(dir + "/b/0_entropy_cost.csv");
    CHECK(csv_a == csv_b);
    const auto json_a = read_text_file(dir + "/a/0_entropy_cost.json");
    const auto json_b = read_text_file(dir + "/b/0_entropy_cost.json");
    CHECK(json_a == json_b);

    // different seed changes the results
    const std::uint64_t seed2 = 1234;
    REQUIRE(run_scenario(path, dir + "/c", &seed2, 0).exit_code == 0);
    CHECK(read_text_file(dir + "/c/0_entropy_cost.csv") != csv_a);
}

TEST_CASE("report consolidates artifacts and requires a manifest") {
    const auto dir = temp_dir("rep");
    const auto path = write_config(dir, small_scenario());
    REQUIRE(run_scenario(path, dir + "/art", nullptr, 0).exit_code == 0);
    CHECK(write_report(dir + "/art") == 0);
    const auto rep = json::parse(read_text_file(dir + "/art/report.json"));
    CHECK(rep.contains("manifest"));
    CHECK(rep["sections"].size() == 1);

    // byte-identical reports for identical config + seed
    REQUIRE(run_scenario(path, dir + "/art2", nullptr, 0).exit_code == 0);
    write_report(dir + "/art2");
    auto r1 = json::parse(read_text_file(dir + "/art/report.json"));
    auto r2 = json::parse(read_text_file(dir + "/art2/report.json"));
    r1["manifest"].erase("generated_at_unix");
    r2["manifest"].erase("generated_at_unix");
    CHECK(r1.dump() == r2.dump());

    const auto empty = temp_dir("repempty");
    CHECK_THROWS_WITH_AS(write_report(empty), doctest::Contains("MissingManifest"), Error);
}

TEST_CASE("increments file round trip with magic header") {
    const auto dir = temp_dir("inc");
    const auto model = make_gallery_model("pure_bm", {{"dim", 2}});
    SimConfig sim;
    sim.n_particles = 16;
    sim.dt = 0.25;
    sim.t_end = 1.0;
    sim.seed = 9;
    const auto bundle = simulate_mckean_vlasov(model, EmpiricalMeasure::dirac({0.0, 0.0}), sim);
    const auto path = dir + "/inc.bin";
    write_increments(path, bundle);
    const auto f = read_increments(path);
    CHECK(f.steps == 4);
    CHECK(f.n == 16);
    CHECK(f.m == 2);
    CHECK(f.data == bundle.increments);

    // corrupt the magic
    auto bytes = read_text_file(path);
    bytes[0] = 'X';
    write_text_file(path, bytes);
    CHECK_THROWS_WITH_AS(read_increments(path), doctest::Contains("magic"), Error);
}

TEST_CASE("point csv round trip") {
    const auto dir = temp_dir("csv");
    EmpiricalMeasure mu({0.5, -1.0, 2.0, 3.5}, 2, {0.25, 0.75});
    write_point_csv(dir + "/pts.csv", mu, true);
    const auto rt = measure_from_csv(dir + "/pts.csv");
    CHECK(rt.dim() == 2);
    CHECK(rt.size() == 2);
    CHECK(rt.point(1)[0] == 2.0);
    CHECK(rt.weight(0) == 0.25);
}

#ifdef MVSDE_BIN
TEST_CASE("command-line surface smoke") {
    const auto dir = temp_dir("bin");
    const std::string bin = MVSDE_BIN;

    // wasserstein subcommand on two small clouds
    EmpiricalMeasure a({0.0}, 1), b({3.0}, 1);
    write_point_csv(dir + "/a.csv", a);
    write_point_csv(dir + "/b.csv", b);
    const std::string out = dir + "/w.json";
    const std::string cmd = bin + " wasserstein --metric wk --k 2 --in-a " + dir +
                            "/a.csv --in-b " + dir + "/b.csv --out " + out + " >/dev/null";
    REQUIRE(std::system(cmd.c_str()) == 0);
    const auto j = nlohmann::json::parse(read_text_file(out));
    CHECK(j["value"].get<double>() == doctest::Approx(3.0));

    // validate-modulus via a config
    nlohmann::json cfg;
    cfg["seed"] = 1;
    cfg["modulus"] = {{"family", "power"}, {"A", 1.0}, {"eps", 0.5}};
    write_text_file(dir + "/m.json", cfg.dump());
    const std::string cmd2 =
        bin + " validate-modulus --config " + dir + "/m.json >" + dir + "/v.json";
    REQUIRE(std::system(cmd2.c_str()) == 0);
    const auto v = nlohmann::json::parse(read_text_file(dir + "/v.json"));
    CHECK(v["passes"].get<bool>());

    // exit code 2 for a broken config
    write_text_file(dir + "/bad.json", "{\"seed\": 1, \"nonsense\": true}");
    const std::string cmd3 =
        bin + " run-scenario --config " + dir + "/bad.json >/dev/null 2>&1";
    const int rc = std::system(cmd3.c_str());
    CHECK(WEXITSTATUS(rc) == 2);
}
#endif
