#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lorentz/run.hpp"

using namespace lorentz;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

RunConfig parse_str(const std::string& text) { return parse_config_json(nlohmann::json::parse(text)); }

fs::path fresh_dir(const std::string& stem) {
    const fs::path p = fs::temp_directory_path() / ("lorentz_cli_" + stem);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json manifest_of(const fs::path& dir) {
    return nlohmann::json::parse(slurp(dir / "manifest.json"));
}

}  // namespace

TEST_CASE("minimal config fills every default", "[cli]") {
    const RunConfig cfg = parse_str("{\"seed\": 1}");
    CHECK(cfg.seed == 1);
    CHECK(cfg.workers == 1);
    CHECK(cfg.table.scatterers.size() == 2);
    CHECK(cfg.table.scatterers[0].radius == 0.4);
    const auto* field = std::get_if<ConstantField>(&cfg.force);
    REQUIRE(field != nullptr);
    CHECK(field->field.x == 0.05);
    CHECK(field->field.y == 0.0);
    CHECK(twist_is_identity(cfg.twist));
    CHECK(cfg.epsilon_max == 0.2);
    CHECK(cfg.mgf.a_grid.size() == 13);
    CHECK(cfg.mgf.n_list == std::vector<int>{5, 10, 20, 30, 50});
    CHECK(cfg.ulam.grid == 64);
    CHECK(cfg.verify.samples == 2000);

    // The resolved echo makes every default explicit and reparses to itself.
    const nlohmann::ordered_json echo = resolved_json(cfg);
    CHECK(echo.contains("flight"));
    CHECK(echo.contains("horizon"));
    const RunConfig back = parse_config_json(nlohmann::json::parse(echo.dump()));
    CHECK(resolved_json(back) == echo);
}

TEST_CASE("config rejections name the offending key", "[cli]") {
    CHECK_THROWS_WITH(parse_str("{\"sed\": 1}"), ContainsSubstring("unknown key 'sed'"));
    CHECK_THROWS_WITH(parse_str("{\"mgf\": {\"grid\": 4}}"),
                      ContainsSubstring("unknown key 'mgf.grid'"));
    CHECK_THROWS_WITH(
        parse_str("{\"table\": {\"scatterers\": [{\"center\": [0, 0], \"radius\": 0.3},"
                  " {\"center\": [0.1, 0], \"radius\": 0.3}]}}"),
        ContainsSubstring("scatterer overlap"));
    CHECK_THROWS_WITH(parse_str("{\"mgf\": {\"a_grid\": [0.0, 1.6]}}"),
                      ContainsSubstring("a outside"));
    CHECK_THROWS_WITH(parse_str("{\"mgf\": {\"a_grid\": [0.5, 0.5]}}"),
                      ContainsSubstring("strictly increasing"));
    CHECK_THROWS_WITH(parse_str("{\"mgf\": {\"n_orbits\": 500}}"),
                      ContainsSubstring("n_orbits"));
    CHECK_THROWS_WITH(parse_str("{\"force\": {\"type\": \"constant\", \"field\": [0.3, 0.0]}}"),
                      ContainsSubstring("exceeds epsilon_max"));
    CHECK_THROWS_WITH(parse_str("{\"twist\": {\"type\": \"angle\", \"beta\": 0.5}}"),
                      ContainsSubstring("1/pi"));
    CHECK_THROWS_WITH(parse_str("{\"ulam\": {\"grid\": 63}}"), ContainsSubstring("even"));
    CHECK_THROWS_WITH(parse_str("{\"force\": {\"type\": \"none\", \"field\": [0.1, 0]}}"),
                      ContainsSubstring("field"));
    CHECK_THROWS_AS(parse_config("/nonexistent/config.json"), std::runtime_error);
}

TEST_CASE("digests and float formatting are stable", "[cli]") {
    CHECK(fnv1a64("") == 14695981039346656037ull);
    CHECK(fnv1a64("a") == 12638187200555641996ull);
    CHECK(hex64(0x1234abcdull) == "000000001234abcd");
    CHECK(format_g17(0.1) == "0.10000000000000001");
    CHECK(format_g17(1.0) == "1");

    RunConfig a = parse_str("{\"seed\": 9, \"workers\": 1}");
    RunConfig b = parse_str("{\"seed\": 9, \"workers\": 7}");
    CHECK(config_digest(a) == config_digest(b));
    RunConfig c = parse_str("{\"seed\": 10, \"workers\": 1}");
    CHECK(config_digest(a) != config_digest(c));
}

TEST_CASE("run writer stamps and digests every file", "[cli]") {
    const fs::path dir = fresh_dir("writer");
    RunWriter w(dir.string(), "feedbeef00000000");
    w.write_table("t.csv", {"x", "y"}, {{"1", "2"}, {"3", "4"}});
    w.write_table("t.dat", {"x", "y"}, {{"1", "2"}});
    CHECK(slurp(dir / "t.csv") == "# manifest_digest=feedbeef00000000\nx,y\n1,2\n3,4\n");
    CHECK(slurp(dir / "t.dat") == "# manifest_digest=feedbeef00000000\n# columns: x y\n1 2\n");
    CHECK(w.outputs().size() == 2);
    CHECK(w.outputs()[0].digest == hex64(fnv1a64(slurp(dir / "t.csv"))));
    CHECK_THROWS_AS(w.write_table("bad.csv", {"x"}, {{"1", "2"}}), std::logic_error);
}

TEST_CASE("verify command passes on the unforced defaults", "[cli]") {
    RunConfig cfg = parse_str(
        "{\"seed\": 3, \"force\": {\"type\": \"none\"}, \"verify\": {\"samples\": 400}}");
    const fs::path dir = fresh_dir("verify_free");
    REQUIRE(run_command("verify", cfg, dir.string()) == 0);

    const nlohmann::json m = manifest_of(dir);
    CHECK(m["pass"] == true);
    CHECK(m["command"] == "verify");
    CHECK(m["manifest_digest"] == config_digest(cfg));
    const std::string verify_csv = slurp(dir / "verify.csv");
    CHECK_THAT(verify_csv, ContainsSubstring("unforced_zero_s,0,0,1"));
    CHECK_THAT(verify_csv, ContainsSubstring("reversibility"));
    CHECK_THAT(verify_csv, ContainsSubstring("jacobian_fd"));
    for (const auto& f : m["outputs"])
        CHECK(f["digest"].get<std::string>() ==
              hex64(fnv1a64(slurp(dir / f["file"].get<std::string>()))));
}

TEST_CASE("verify command passes under a small field", "[cli]") {
    RunConfig cfg = parse_str(
        "{\"seed\": 5, \"flight\": {\"step\": 0.005}, \"verify\": {\"samples\": 300}}");
    const fs::path dir = fresh_dir("verify_forced");
    REQUIRE(run_command("verify", cfg, dir.string()) == 0);
    const std::string verify_csv = slurp(dir / "verify.csv");
    CHECK_THAT(verify_csv, ContainsSubstring("jacobian_quadrature"));
    CHECK_THAT(verify_csv, ContainsSubstring("transient_ft"));
    CHECK_THAT(verify_csv, ContainsSubstring("eigenvector_positivity"));
}

TEST_CASE("verify skips reversibility under a twist", "[cli]") {
    RunConfig cfg = parse_str(
        "{\"seed\": 5, \"twist\": {\"type\": \"angle\", \"beta\": 0.05},"
        " \"force\": {\"type\": \"none\"}, \"verify\": {\"samples\": 200}}");
    const fs::path dir = fresh_dir("verify_twist");
    REQUIRE(run_command("verify", cfg, dir.string()) == 0);
    const nlohmann::json m = manifest_of(dir);
    bool rev_note = false, ft_note = false;
    for (const auto& n : m["notes"]) {
        if (n.get<std::string>().find("reversibility") != std::string::npos) rev_note = true;
        if (n.get<std::string>().find("transient symmetry") != std::string::npos) ft_note = true;
    }
    CHECK(rev_note);
    CHECK(ft_note);
    CHECK_THAT(slurp(dir / "verify.csv"), !ContainsSubstring("reversibility,"));
}

TEST_CASE("table-check reports the horizon bound", "[cli]") {
    RunConfig cfg = parse_str("{\"seed\": 2, \"horizon\": {\"n_rays\": 20000}}");
    const fs::path dir = fresh_dir("table_check");
    REQUIRE(run_command("table-check", cfg, dir.string()) == 0);
    const nlohmann::json m = manifest_of(dir);
    CHECK(m["summary"]["max_free_path"].get<double>() > 0.0);
    CHECK(m["summary"]["tau_bound_with_margin"].get<double>() >
          m["summary"]["max_free_path"].get<double>());
    CHECK_THAT(slurp(dir / "checks.csv"), ContainsSubstring("finite_horizon"));
}

TEST_CASE("mgf command notes a grid without mirror partners", "[cli]") {
    RunConfig cfg = parse_str(
        "{\"seed\": 4, \"flight\": {\"step\": 0.005},"
        " \"mgf\": {\"a_grid\": [0.0, 0.25], \"n_list\": [5], \"n_orbits\": 2000}}");
    const fs::path dir = fresh_dir("mgf_unpaired");
    REQUIRE(run_command("mgf", cfg, dir.string()) == 0);
    const nlohmann::json m = manifest_of(dir);
    bool noted = false;
    for (const auto& n : m["notes"])
        if (n.get<std::string>().find("symmetry check skipped") != std::string::npos) noted = true;
    CHECK(noted);
    CHECK(fs::exists(dir / "mgf.csv"));
    CHECK(fs::exists(dir / "e_a.dat"));
    CHECK(fs::exists(dir / "mgf_summary.json"));
}

TEST_CASE("simulate dumps replayable orbits", "[cli]") {
    RunConfig cfg = parse_str(
        "{\"seed\": 8, \"flight\": {\"step\": 0.005},"
        " \"simulate\": {\"orbits\": 2, \"steps\": 12}}");
    const fs::path dir = fresh_dir("simulate");
    REQUIRE(run_command("simulate", cfg, dir.string()) == 0);
    const std::string orbit_csv = slurp(dir / "orbit.csv");
    std::size_t lines = 0;
    for (char ch : orbit_csv)
        if (ch == '\n') ++lines;
    CHECK(lines == 2 + 2 * 12);
    CHECK_THAT(orbit_csv, ContainsSubstring("s_cumulative"));
}

TEST_CASE("running both routes in one directory yields the consistency table", "[cli]") {
    const std::string common =
        "\"seed\": 9, \"flight\": {\"step\": 0.005},"
        " \"mgf\": {\"a_grid\": [0.0, 0.5, 1.0], \"n_list\": [5], \"n_orbits\": 2000},"
        " \"ulam\": {\"grid\": 16, \"samples_per_box\": 400, \"a_grid\": [0.0, 0.5, 1.0]}";
    const RunConfig cfg = parse_str("{" + common + "}");
    const fs::path dir = fresh_dir("both_routes");
    REQUIRE(run_command("ulam", cfg, dir.string()) == 0);
    REQUIRE(run_command("mgf", cfg, dir.string()) == 0);
    const std::string table = slurp(dir / "consistency.csv");
    CHECK_THAT(table, ContainsSubstring("a,log_lambda,e_hat,diff,budget,within"));
    std::size_t lines = 0;
    for (char ch : table)
        if (ch == '\n') ++lines;
    CHECK(lines == 2 + 3);

    // A seed mismatch between the routes is reported, not rejected.
    RunConfig other = cfg;
    other.seed = 10;
    REQUIRE(run_command("ulam", other, dir.string()) == 0);
    const nlohmann::json m = manifest_of(dir);
    bool noted = false;
    for (const auto& n : m["notes"])
        if (n.get<std::string>().find("different seeds") != std::string::npos) noted = true;
    CHECK(noted);
}

TEST_CASE("gc command skips the ratio test without a field", "[cli]") {
    RunConfig cfg = parse_str("{\"seed\": 6, \"force\": {\"type\": \"none\"}}");
    const fs::path dir = fresh_dir("gc_free");
    REQUIRE(run_command("gc", cfg, dir.string()) == 0);
    const nlohmann::json m = manifest_of(dir);
    bool noted = false;
    for (const auto& n : m["notes"])
        if (n.get<std::string>().find("ratio test skipped") != std::string::npos) noted = true;
    CHECK(noted);
}

TEST_CASE("unknown commands error through the manifest", "[cli]") {
    RunConfig cfg = parse_str("{\"seed\": 1}");
    const fs::path dir = fresh_dir("unknown");
    CHECK(run_command("frobnicate", cfg, dir.string()) == 2);
    const nlohmann::json m = manifest_of(dir);
    CHECK(m["exit_code"] == 2);
    REQUIRE(m["errors"].size() == 1);
    CHECK_THAT(m["errors"][0].get<std::string>(), ContainsSubstring("unknown command"));
}

TEST_CASE("worker count never changes the written bytes", "[cli]") {
    const std::string base =
        "{\"seed\": 11, \"flight\": {\"step\": 0.005},"
        " \"mgf\": {\"a_grid\": [0.25, 0.75], \"n_list\": [5, 10], \"n_orbits\": 3000}";
    RunConfig one = parse_str(base + ", \"workers\": 1}");
    RunConfig four = parse_str(base + ", \"workers\": 4}");
    const fs::path d1 = fresh_dir("workers_one");
    const fs::path d4 = fresh_dir("workers_four");
    REQUIRE(run_command("mgf", one, d1.string()) == 0);
    REQUIRE(run_command("mgf", four, d4.string()) == 0);
    for (const char* f : {"mgf.csv", "e_a.dat", "symmetry.csv", "rate.csv", "rate.dat",
                          "rate_defect.csv", "checks.csv", "mgf_summary.json"})
        CHECK(slurp(d1 / f) == slurp(d4 / f));
    // The config echo keeps the differing workers key; the digest drops it.
    CHECK(manifest_of(d1)["manifest_digest"] == manifest_of(d4)["manifest_digest"]);
}

#ifdef LORENTZ_CLI_BIN
TEST_CASE("binary wires arguments through to the commands", "[cli]") {
    const fs::path dir = fresh_dir("binary");
    const std::string bin = LORENTZ_CLI_BIN;
    const std::string cfg = std::string(LORENTZ_CONFIG_DIR) + "/free.json";
    const std::string cmd =
        bin + " verify --config " + cfg + " --seed 21 --out " + dir.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    const nlohmann::json m = manifest_of(dir);
    CHECK(m["seed"] == 21);

    const int usage = std::system((bin + " --help > /dev/null 2>&1").c_str());
    REQUIRE(WIFEXITED(usage));
    CHECK(WEXITSTATUS(usage) == 0);

    const int bad = std::system((bin + " verify --config /nope.json 2>/dev/null").c_str());
    REQUIRE(WIFEXITED(bad));
    CHECK(WEXITSTATUS(bad) == 2);
}
#endif
