#pragma once

// JSON run configuration.  Parsing is strict: unknown keys are rejected,
// wrong types name the offending key, and physics limits (scatterer overlap,
// field size, twist monotonicity, weight-exponent range) are checked here so
// commands can assume an admissible system.  The resolved form, with every
// default spelled out, is echoed alongside the outputs.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorentz/geometry.hpp"
#include "lorentz/statistics.hpp"

namespace lorentz {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr double kWeightExponentPad = 0.25;  // a_grid allowed in [-pad, 1+pad]

struct MgfBlock {
    std::vector<double> a_grid = default_a_grid();
    std::vector<int> n_list = default_n_list();
    std::uint64_t n_orbits = 10000;
    InitDistribution init = InitDistribution::Mu0;
    int burn_in = 1000;
};

struct UlamBlock {
    int grid = 64;  // boxes per scatterer and direction; halved for the refinement proxy
    int samples_per_box = 400;
    std::vector<double> a_grid = default_a_grid();
};

struct VerifyBlock {
    std::uint64_t samples = 2000;
    double reversibility_tol = 1e-8;
    double jacobian_fd_tol = 1e-5;
    double jacobian_quad_tol = 1e-8;
    double ft_sigma = 3.0;
    double positivity_rel = 1e-12;
};

struct HorizonBlock {
    std::uint64_t n_rays = 100000;
    double max_len = 10.0;
};

struct GcBlock {
    std::uint64_t orbits = 1000000;
    int n = 30;
    double bin_width = 0.0;  // 0 picks a quarter standard deviation
    std::uint64_t min_count = 50;
    double slope_tol = 0.15;
    int burn_in = 64;
};

struct GkBlock {
    std::uint64_t orbits = 20000;
    int length = 300;
    int j_max = 50;
    int burn_in = 128;
    std::vector<double> rate_eps = {0.1, 0.05, 0.025};
    std::uint64_t rate_orbits = 20000;
    int rate_length = 50;
    std::uint64_t rate_h_samples = 200000;
};

struct SimulateBlock {
    std::uint64_t orbits = 1;
    int steps = 100;
    InitDistribution init = InitDistribution::Mu0;
};

struct RunConfig {
    TableConfig table = default_table();
    ForceModel force = ConstantField{{0.05, 0.0}};
    TwistModel twist = IdentityTwist{};
    FlightParams flight;
    double epsilon_max = 0.2;
    std::uint64_t seed = 1;
    int workers = 1;
    MgfBlock mgf;
    UlamBlock ulam;
    VerifyBlock verify;
    HorizonBlock horizon;
    GcBlock gc;
    GkBlock gk;
    SimulateBlock simulate;
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void config_fail(const std::string& msg) {
    throw std::runtime_error("config: " + msg);
}

inline std::string scoped(const std::string& scope, const std::string& key) {
    return scope.empty() ? key : scope + "." + key;
}

inline void check_keys(const json& obj, const std::string& scope,
                       std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known) config_fail("unknown key '" + scoped(scope, item.key()) + "'");
    }
}

inline double get_double(const json& obj, const std::string& scope, const char* key,
                         double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) config_fail("key '" + scoped(scope, key) + "' must be a number");
    return v.get<double>();
}

inline std::uint64_t get_uint(const json& obj, const std::string& scope, const char* key,
                              std::uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        config_fail("key '" + scoped(scope, key) + "' must be a nonnegative integer");
    return v.get<std::uint64_t>();
}

inline int get_int(const json& obj, const std::string& scope, const char* key, int fallback,
                   int lo, int hi) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer())
        config_fail("key '" + scoped(scope, key) + "' must be an integer");
    const std::int64_t x = v.get<std::int64_t>();
    if (x < lo || x > hi)
        config_fail("key '" + scoped(scope, key) + "' must lie in [" + std::to_string(lo) +
                    ", " + std::to_string(hi) + "]");
    return static_cast<int>(x);
}

inline std::vector<double> get_double_list(const json& obj, const std::string& scope,
                                           const char* key, std::vector<double> fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty())
        config_fail("key '" + scoped(scope, key) + "' must be a nonempty array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
        if (!e.is_number())
            config_fail("key '" + scoped(scope, key) + "' must contain only numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

inline std::vector<int> get_int_list(const json& obj, const std::string& scope, const char* key,
                                     std::vector<int> fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty())
        config_fail("key '" + scoped(scope, key) + "' must be a nonempty array of integers");
    std::vector<int> out;
    for (const json& e : v) {
        if (!e.is_number_integer())
            config_fail("key '" + scoped(scope, key) + "' must contain only integers");
        out.push_back(e.get<int>());
    }
    return out;
}

inline InitDistribution get_init(const json& obj, const std::string& scope, const char* key,
                                 InitDistribution fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "mu0") return InitDistribution::Mu0;
        if (s == "srb") return InitDistribution::Srb;
        if (s == "lebesgue") return InitDistribution::Lebesgue;
    }
    config_fail("key '" + scoped(scope, key) + "' must be one of \"mu0\", \"srb\", \"lebesgue\"");
}

inline const char* init_name(InitDistribution init) {
    switch (init) {
        case InitDistribution::Mu0: return "mu0";
        case InitDistribution::Srb: return "srb";
        default: return "lebesgue";
    }
}

inline void check_a_grid(const std::vector<double>& a_grid, const std::string& scope) {
    for (double a : a_grid)
        if (a < -kWeightExponentPad - 1e-12 || a > 1.0 + kWeightExponentPad + 1e-12)
            config_fail("a outside [-a0, 1+a0] with a0 = " + std::to_string(kWeightExponentPad) +
                        ": " + scoped(scope, "a_grid") + " has " + std::to_string(a));
}

inline Vec2 get_vec2(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        config_fail("key '" + where + "' must be an array of two numbers");
    return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace detail

inline RunConfig parse_config_json(const nlohmann::json& root) {
    using detail::config_fail;
    if (!root.is_object()) config_fail("top level must be a JSON object");
    detail::check_keys(root, "",
                       {"seed", "workers", "epsilon_max", "table", "force", "twist", "flight",
                        "mgf", "ulam", "verify", "horizon", "gc", "gk", "simulate"});

    RunConfig cfg;
    cfg.seed = detail::get_uint(root, "", "seed", cfg.seed);
    cfg.workers = detail::get_int(root, "", "workers", cfg.workers, 1, 256);
    cfg.epsilon_max = detail::get_double(root, "", "epsilon_max", cfg.epsilon_max);
    if (!(cfg.epsilon_max > 0.0)) config_fail("key 'epsilon_max' must be positive");

    if (root.contains("table")) {
        const auto& t = root.at("table");
        detail::check_keys(t, "table", {"scatterers"});
        if (!t.contains("scatterers") || !t.at("scatterers").is_array())
            config_fail("key 'table.scatterers' must be an array");
        cfg.table.scatterers.clear();
        for (const auto& s : t.at("scatterers")) {
            detail::check_keys(s, "table.scatterers[]", {"center", "radius"});
            if (!s.contains("center") || !s.contains("radius") || !s.at("radius").is_number())
                config_fail("each scatterer needs 'center' [x, y] and numeric 'radius'");
            cfg.table.scatterers.push_back(
                {detail::get_vec2(s.at("center"), "table.scatterers[].center"),
                 s.at("radius").get<double>()});
        }
    }
    if (cfg.table.scatterers.empty()) config_fail("table needs at least one scatterer");
    for (const std::string& violation : validate_table(cfg.table)) config_fail(violation);

    if (root.contains("force")) {
        const auto& f = root.at("force");
        detail::check_keys(f, "force", {"type", "field"});
        if (!f.contains("type") || !f.at("type").is_string())
            config_fail("key 'force.type' must be \"none\" or \"constant\"");
        const std::string type = f.at("type").get<std::string>();
        if (type == "none") {
            if (f.contains("field")) config_fail("key 'force.field' is not allowed with type \"none\"");
            cfg.force = NoForce{};
        } else if (type == "constant") {
            if (!f.contains("field")) config_fail("key 'force.field' is required for type \"constant\"");
            cfg.force = ConstantField{detail::get_vec2(f.at("field"), "force.field")};
        } else {
            config_fail("key 'force.type' must be \"none\" or \"constant\"");
        }
    }
    const double eps = force_epsilon(cfg.force);
    if (eps > cfg.epsilon_max)
        config_fail("field strength " + std::to_string(eps) + " exceeds epsilon_max " +
                    std::to_string(cfg.epsilon_max));

    if (root.contains("twist")) {
        const auto& t = root.at("twist");
        detail::check_keys(t, "twist", {"type", "beta"});
        if (!t.contains("type") || !t.at("type").is_string())
            config_fail("key 'twist.type' must be \"identity\" or \"angle\"");
        const std::string type = t.at("type").get<std::string>();
        if (type == "identity") {
            if (t.contains("beta")) config_fail("key 'twist.beta' is not allowed with type \"identity\"");
            cfg.twist = IdentityTwist{};
        } else if (type == "angle") {
            cfg.twist = AngleTwist{detail::get_double(t, "twist", "beta", 0.0)};
        } else {
            config_fail("key 'twist.type' must be \"identity\" or \"angle\"");
        }
    }
    try {
        validate_twist(cfg.twist);
    } catch (const std::invalid_argument& e) {
        config_fail(e.what());
    }

    if (root.contains("flight")) {
        const auto& fl = root.at("flight");
        detail::check_keys(fl, "flight", {"step", "event_tol", "grazing_cut", "max_flight_time"});
        cfg.flight.step = detail::get_double(fl, "flight", "step", cfg.flight.step);
        cfg.flight.event_tol = detail::get_double(fl, "flight", "event_tol", cfg.flight.event_tol);
        cfg.flight.grazing_cut =
            detail::get_double(fl, "flight", "grazing_cut", cfg.flight.grazing_cut);
        cfg.flight.max_flight_time =
            detail::get_double(fl, "flight", "max_flight_time", cfg.flight.max_flight_time);
        if (!(cfg.flight.step > 0.0) || !(cfg.flight.event_tol > 0.0) ||
            !(cfg.flight.grazing_cut > 0.0) || !(cfg.flight.max_flight_time > 0.0))
            config_fail("flight parameters must be positive");
    }

    if (root.contains("mgf")) {
        const auto& m = root.at("mgf");
        detail::check_keys(m, "mgf", {"a_grid", "n_list", "n_orbits", "init", "burn_in"});
        cfg.mgf.a_grid = detail::get_double_list(m, "mgf", "a_grid", cfg.mgf.a_grid);
        cfg.mgf.n_list = detail::get_int_list(m, "mgf", "n_list", cfg.mgf.n_list);
        cfg.mgf.n_orbits = detail::get_uint(m, "mgf", "n_orbits", cfg.mgf.n_orbits);
        cfg.mgf.init = detail::get_init(m, "mgf", "init", cfg.mgf.init);
        cfg.mgf.burn_in = detail::get_int(m, "mgf", "burn_in", cfg.mgf.burn_in, 0, 1000000);
    }
    detail::check_a_grid(cfg.mgf.a_grid, "mgf");
    for (std::size_t i = 0; i + 1 < cfg.mgf.a_grid.size(); ++i)
        if (!(cfg.mgf.a_grid[i + 1] > cfg.mgf.a_grid[i]))
            config_fail("key 'mgf.a_grid' must be strictly increasing");
    if (cfg.mgf.n_orbits < 1000) config_fail("key 'mgf.n_orbits' must be at least 1000");

    if (root.contains("ulam")) {
        const auto& u = root.at("ulam");
        detail::check_keys(u, "ulam", {"grid", "samples_per_box", "a_grid"});
        cfg.ulam.grid = detail::get_int(u, "ulam", "grid", cfg.ulam.grid, 4, 4096);
        cfg.ulam.samples_per_box =
            detail::get_int(u, "ulam", "samples_per_box", cfg.ulam.samples_per_box, 100, 1000000);
        cfg.ulam.a_grid = detail::get_double_list(u, "ulam", "a_grid", cfg.ulam.a_grid);
    }
    detail::check_a_grid(cfg.ulam.a_grid, "ulam");
    if (cfg.ulam.grid % 2 != 0)
        config_fail("key 'ulam.grid' must be even (the refinement proxy halves it)");

    if (root.contains("verify")) {
        const auto& v = root.at("verify");
        detail::check_keys(v, "verify",
                           {"samples", "reversibility_tol", "jacobian_fd_tol",
                            "jacobian_quad_tol", "ft_sigma", "positivity_rel"});
        cfg.verify.samples = detail::get_uint(v, "verify", "samples", cfg.verify.samples);
        cfg.verify.reversibility_tol =
            detail::get_double(v, "verify", "reversibility_tol", cfg.verify.reversibility_tol);
        cfg.verify.jacobian_fd_tol =
            detail::get_double(v, "verify", "jacobian_fd_tol", cfg.verify.jacobian_fd_tol);
        cfg.verify.jacobian_quad_tol =
            detail::get_double(v, "verify", "jacobian_quad_tol", cfg.verify.jacobian_quad_tol);
        cfg.verify.ft_sigma = detail::get_double(v, "verify", "ft_sigma", cfg.verify.ft_sigma);
        cfg.verify.positivity_rel =
            detail::get_double(v, "verify", "positivity_rel", cfg.verify.positivity_rel);
        if (cfg.verify.samples < 100) config_fail("key 'verify.samples' must be at least 100");
    }

    if (root.contains("horizon")) {
        const auto& h = root.at("horizon");
        detail::check_keys(h, "horizon", {"n_rays", "max_len"});
        cfg.horizon.n_rays = detail::get_uint(h, "horizon", "n_rays", cfg.horizon.n_rays);
        cfg.horizon.max_len = detail::get_double(h, "horizon", "max_len", cfg.horizon.max_len);
        if (cfg.horizon.n_rays < 1 || !(cfg.horizon.max_len > 0.0))
            config_fail("horizon scan needs positive n_rays and max_len");
    }

    if (root.contains("gc")) {
        const auto& g = root.at("gc");
        detail::check_keys(g, "gc",
                           {"orbits", "n", "bin_width", "min_count", "slope_tol", "burn_in"});
        cfg.gc.orbits = detail::get_uint(g, "gc", "orbits", cfg.gc.orbits);
        cfg.gc.n = detail::get_int(g, "gc", "n", cfg.gc.n, 1, 1000000);
        cfg.gc.bin_width = detail::get_double(g, "gc", "bin_width", cfg.gc.bin_width);
        cfg.gc.min_count = detail::get_uint(g, "gc", "min_count", cfg.gc.min_count);
        cfg.gc.slope_tol = detail::get_double(g, "gc", "slope_tol", cfg.gc.slope_tol);
        cfg.gc.burn_in = detail::get_int(g, "gc", "burn_in", cfg.gc.burn_in, 0, 1000000);
    }

    if (root.contains("gk")) {
        const auto& g = root.at("gk");
        detail::check_keys(g, "gk",
                           {"orbits", "length", "j_max", "burn_in", "rate_eps", "rate_orbits",
                            "rate_length", "rate_h_samples"});
        cfg.gk.orbits = detail::get_uint(g, "gk", "orbits", cfg.gk.orbits);
        cfg.gk.length = detail::get_int(g, "gk", "length", cfg.gk.length, 2, 1000000);
        cfg.gk.j_max = detail::get_int(g, "gk", "j_max", cfg.gk.j_max, 1, 1000000);
        cfg.gk.burn_in = detail::get_int(g, "gk", "burn_in", cfg.gk.burn_in, 0, 1000000);
        cfg.gk.rate_eps = detail::get_double_list(g, "gk", "rate_eps", cfg.gk.rate_eps);
        cfg.gk.rate_orbits = detail::get_uint(g, "gk", "rate_orbits", cfg.gk.rate_orbits);
        cfg.gk.rate_length = detail::get_int(g, "gk", "rate_length", cfg.gk.rate_length, 2, 1000000);
        cfg.gk.rate_h_samples =
            detail::get_uint(g, "gk", "rate_h_samples", cfg.gk.rate_h_samples);
        for (double e : cfg.gk.rate_eps)
            if (!(e > 0.0) || e > cfg.epsilon_max)
                config_fail("key 'gk.rate_eps' entries must lie in (0, epsilon_max]");
    }

    if (root.contains("simulate")) {
        const auto& s = root.at("simulate");
        detail::check_keys(s, "simulate", {"orbits", "steps", "init"});
        cfg.simulate.orbits = detail::get_uint(s, "simulate", "orbits", cfg.simulate.orbits);
        cfg.simulate.steps = detail::get_int(s, "simulate", "steps", cfg.simulate.steps, 1, 100000000);
        cfg.simulate.init = detail::get_init(s, "simulate", "init", cfg.simulate.init);
    }

    return cfg;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) detail::config_fail("cannot open '" + path + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        detail::config_fail("invalid JSON in '" + path + "': " + e.what());
    }
    return parse_config_json(root);
}

// Full echo of the configuration with every default resolved; key order is
// fixed so the dump (and any digest of it) is stable.
inline nlohmann::ordered_json resolved_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["epsilon_max"] = cfg.epsilon_max;

    nlohmann::ordered_json scs = nlohmann::ordered_json::array();
    for (const Scatterer& s : cfg.table.scatterers)
        scs.push_back({{"center", {s.center.x, s.center.y}}, {"radius", s.radius}});
    j["table"] = {{"scatterers", scs}};

    if (const auto* c = std::get_if<ConstantField>(&cfg.force))
        j["force"] = {{"type", "constant"}, {"field", {c->field.x, c->field.y}}};
    else
        j["force"] = {{"type", "none"}};

    if (const auto* a = std::get_if<AngleTwist>(&cfg.twist))
        j["twist"] = {{"type", "angle"}, {"beta", a->beta}};
    else
        j["twist"] = {{"type", "identity"}};

    j["flight"] = {{"step", cfg.flight.step},
                   {"event_tol", cfg.flight.event_tol},
                   {"grazing_cut", cfg.flight.grazing_cut},
                   {"max_flight_time", cfg.flight.max_flight_time}};
    j["mgf"] = {{"a_grid", cfg.mgf.a_grid},
                {"n_list", cfg.mgf.n_list},
                {"n_orbits", cfg.mgf.n_orbits},
                {"init", detail::init_name(cfg.mgf.init)},
                {"burn_in", cfg.mgf.burn_in}};
    j["ulam"] = {{"grid", cfg.ulam.grid},
                 {"samples_per_box", cfg.ulam.samples_per_box},
                 {"a_grid", cfg.ulam.a_grid}};
    j["verify"] = {{"samples", cfg.verify.samples},
                   {"reversibility_tol", cfg.verify.reversibility_tol},
                   {"jacobian_fd_tol", cfg.verify.jacobian_fd_tol},
                   {"jacobian_quad_tol", cfg.verify.jacobian_quad_tol},
                   {"ft_sigma", cfg.verify.ft_sigma},
                   {"positivity_rel", cfg.verify.positivity_rel}};
    j["horizon"] = {{"n_rays", cfg.horizon.n_rays}, {"max_len", cfg.horizon.max_len}};
    j["gc"] = {{"orbits", cfg.gc.orbits},
               {"n", cfg.gc.n},
               {"bin_width", cfg.gc.bin_width},
               {"min_count", cfg.gc.min_count},
               {"slope_tol", cfg.gc.slope_tol},
               {"burn_in", cfg.gc.burn_in}};
    j["gk"] = {{"orbits", cfg.gk.orbits},
               {"length", cfg.gk.length},
               {"j_max", cfg.gk.j_max},
               {"burn_in", cfg.gk.burn_in},
               {"rate_eps", cfg.gk.rate_eps},
               {"rate_orbits", cfg.gk.rate_orbits},
               {"rate_length", cfg.gk.rate_length},
               {"rate_h_samples", cfg.gk.rate_h_samples}};
    j["simulate"] = {{"orbits", cfg.simulate.orbits},
                     {"steps", cfg.simulate.steps},
                     {"init", detail::init_name(cfg.simulate.init)}};
    return j;
}

}  // namespace lorentz
