#pragma once

// Command layer shared by the CLI and the tests.  Each command runs its
// estimators, writes tables plus gnuplot data files into one directory, and
// evaluates its enabled checks; the dispatcher wraps that in a manifest with
// wall time, discard counts, and per-file digests.  Exit code 0 means every
// enabled check passed, 1 means a check failed, 2 means a module error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lorentz/config.hpp"
#include "lorentz/entropy.hpp"
#include "lorentz/io.hpp"
#include "lorentz/sampling.hpp"
#include "lorentz/statistics.hpp"
#include "lorentz/ulam.hpp"

namespace lorentz {

struct CommandOutcome {
    int exit_code = 0;
    bool pass = true;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    std::vector<std::string> notes;
    std::vector<std::string> errors;
    std::map<std::string, std::uint64_t> discarded;
};

struct CheckRow {
    std::string name;
    double statistic = 0.0;
    double threshold = 0.0;
    bool pass = true;
    std::string note;
};

namespace detail {

inline constexpr double kKsCritical1Pct = 1.62762;  // scale by 1/sqrt(n)

inline std::string fmt(double v) { return format_g17(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }

inline void add_check(std::vector<CheckRow>& rows, CommandOutcome& out, std::string name,
                      double statistic, double threshold, bool pass, std::string note = "") {
    if (!pass) out.pass = false;
    rows.push_back({std::move(name), statistic, threshold, pass, std::move(note)});
}

inline void write_checks(RunWriter& w, const std::string& file,
                         const std::vector<CheckRow>& rows, CommandOutcome& out) {
    std::vector<std::vector<std::string>> body;
    int failed = 0;
    for (const CheckRow& r : rows) {
        if (!r.pass) ++failed;
        body.push_back({r.name, fmt(r.statistic), fmt(r.threshold), fmt(r.pass), r.note});
    }
    w.write_table(file, {"check", "statistic", "threshold", "pass", "note"}, body);
    out.summary["checks_total"] = rows.size();
    out.summary["checks_failed"] = failed;
}

// Smallest grazing margin pi/2 - |phi| seen along the start point and its
// next `steps` images; 0 when the orbit is lost.  Finite-difference Jacobian
// probes need the whole probe orbit to stay away from tangency.
inline double orbit_margin(const System& sys, CollisionCoord c, int steps) {
    double m = kPiHalf - std::abs(c.phi);
    for (int k = 0; k < steps; ++k) {
        try {
            c = billiard_map(sys, c).to;
        } catch (const FlightError&) {
            return 0.0;
        }
        m = std::min(m, kPiHalf - std::abs(c.phi));
    }
    return m;
}

// Worst usable symmetry deviation in stderr units; exact-zero differences
// count as zero, anything non-finite poisons the result.
inline double worst_tstat(const std::vector<SymmetryRow>& rows) {
    double worst = 0.0;
    for (const SymmetryRow& row : rows) {
        if (row.diff == 0.0) continue;
        const double ts = row.tstat();
        if (!std::isfinite(ts)) return kNan;
        worst = std::max(worst, ts);
    }
    return worst;
}

inline std::optional<nlohmann::json> read_json_if(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) return std::nullopt;
    std::ifstream in(p);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
        return std::nullopt;
    }
}

// NaN serializes as null, so numeric arrays are decoded entry by entry.
inline std::vector<double> json_doubles(const nlohmann::json& arr) {
    std::vector<double> out;
    if (!arr.is_array()) return out;
    for (const auto& v : arr) out.push_back(v.is_number() ? v.get<double>() : kNan);
    return out;
}

// Cross-route rows comparing the operator eigenvalue against the sampled
// per-step exponent at matching a, budgeted by the refinement proxy plus
// three combined stderr.
inline std::vector<std::vector<std::string>> consistency_rows(
    const std::vector<double>& sa, const std::vector<double>& slog,
    const std::vector<double>& sproxy, const std::vector<double>& sse,
    const std::vector<double>& ma, const std::vector<double>& me,
    const std::vector<double>& mse) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < sa.size() && i < slog.size(); ++i)
        for (std::size_t j = 0; j < ma.size() && j < me.size(); ++j) {
            if (std::abs(sa[i] - ma[j]) > 1e-12) continue;
            if (!std::isfinite(slog[i]) || !std::isfinite(me[j])) continue;
            const double diff = slog[i] - me[j];
            const double budget = sproxy[i] + 3.0 * (sse[i] + mse[j]);
            rows.push_back({fmt(sa[i]), fmt(slog[i]), fmt(me[j]), fmt(diff), fmt(budget),
                            fmt(std::abs(diff) <= budget)});
        }
    return rows;
}

inline const std::vector<std::string> kConsistencyColumns = {"a",    "log_lambda", "e_hat",
                                                             "diff", "budget",     "within"};

}  // namespace detail

inline void cmd_table_check(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const std::vector<std::string> violations = validate_table(cfg.table);
    const HorizonScan scan =
        horizon_scan(cfg.table, cfg.horizon.n_rays, cfg.horizon.max_len, cfg.seed);
    const double eps = force_epsilon(cfg.force);
    const double tau_bound =
        scan.max_free_path + 2.0 * eps * cfg.horizon.max_len * cfg.horizon.max_len;

    w.write_table("horizon.csv",
                  {"n_rays", "max_free_path", "min_free_path", "infinite_horizon",
                   "escaped_rays", "tau_bound_with_margin"},
                  {{detail::fmt(scan.n_rays), detail::fmt(scan.max_free_path),
                    detail::fmt(scan.min_free_path), detail::fmt(scan.infinite_horizon),
                    detail::fmt(scan.escaped_rays), detail::fmt(tau_bound)}});

    std::vector<CheckRow> checks;
    detail::add_check(checks, out, "table_admissible", static_cast<double>(violations.size()),
                      0.0, violations.empty(),
                      violations.empty() ? "" : violations.front());
    detail::add_check(checks, out, "finite_horizon", static_cast<double>(scan.escaped_rays), 0.0,
                      !scan.infinite_horizon);
    detail::write_checks(w, "checks.csv", checks, out);

    out.summary["violations"] = violations;
    out.summary["max_free_path"] = scan.max_free_path;
    out.summary["min_free_path"] = scan.min_free_path;
    out.summary["tau_bound_with_margin"] = tau_bound;
}

inline void cmd_simulate(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    std::vector<std::vector<std::string>> rows;
    std::uint64_t lost = 0;
    for (std::uint64_t k = 0; k < cfg.simulate.orbits; ++k) {
        Rng rng = Rng::substream(cfg.seed, k);
        CollisionCoord c;
        try {
            c = sample_init(sys, cfg.simulate.init, rng, SrbOptions{}, nullptr);
        } catch (const std::runtime_error&) {
            ++lost;
            continue;
        }
        double cumulative = 0.0;
        for (int step = 0; step < cfg.simulate.steps; ++step) {
            StepResult res;
            try {
                res = billiard_map(sys, c);
            } catch (const FlightError&) {
                ++lost;
                break;
            }
            const CollisionRecord& rec = res.record;
            cumulative += rec.s;
            rows.push_back({detail::fmt(k), detail::fmt(step), detail::fmt(rec.from.scatterer),
                            detail::fmt(rec.from.r), detail::fmt(rec.from.phi),
                            detail::fmt(rec.to.scatterer), detail::fmt(rec.to.r),
                            detail::fmt(rec.to.phi), detail::fmt(rec.tau), detail::fmt(rec.s),
                            detail::fmt(cumulative)});
            c = res.to;
        }
    }
    w.write_table("orbit.csv",
                  {"orbit", "step", "scatterer_from", "r_from", "phi_from", "scatterer_to",
                   "r_to", "phi_to", "tau", "s", "s_cumulative"},
                  rows);
    out.discarded["orbits"] = lost;
    out.summary["rows"] = rows.size();
}

inline void cmd_mgf(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    MgfOptions opt;
    opt.a_grid = cfg.mgf.a_grid;
    opt.n_list = cfg.mgf.n_list;
    opt.orbits = cfg.mgf.n_orbits;
    opt.init = cfg.mgf.init;
    opt.srb.burn_in = cfg.mgf.burn_in;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    const MgfTable t = estimate_mgf(sys, opt);
    out.discarded["orbits"] = t.orbits - t.kept;

    std::vector<std::vector<std::string>> rows;
    for (std::size_t ia = 0; ia < t.a_grid.size(); ++ia)
        for (std::size_t jn = 0; jn < t.n_list.size(); ++jn) {
            const MgfCell& c = t.cells[ia][jn];
            rows.push_back({detail::fmt(t.a_grid[ia]), detail::fmt(t.n_list[jn]),
                            detail::fmt(c.e), detail::fmt(c.e_se), detail::fmt(c.slope),
                            detail::fmt(c.slope_se), detail::fmt(c.ess), detail::fmt(c.stable)});
        }
    w.write_table("mgf.csv", {"a", "n", "e", "e_se", "slope", "slope_se", "ess", "stable"}, rows);

    // Report window: the largest n at which every exponent is still stable.
    int n_star = -1;
    for (std::size_t jn = t.n_list.size(); jn-- > 0;) {
        bool all = true;
        for (std::size_t ia = 0; ia < t.a_grid.size(); ++ia)
            if (!t.cells[ia][jn].stable) {
                all = false;
                break;
            }
        if (all) {
            n_star = t.n_list[jn];
            break;
        }
    }
    if (n_star < 0) {
        n_star = t.n_list.back();
        out.notes.push_back("no window is stable for every exponent; reporting the largest n");
    }
    const std::size_t jn_star = static_cast<std::size_t>(t.n_index(n_star));
    std::vector<double> e_row, se_row;
    std::vector<std::vector<std::string>> curve;
    for (std::size_t ia = 0; ia < t.a_grid.size(); ++ia) {
        e_row.push_back(t.cells[ia][jn_star].e);
        se_row.push_back(t.cells[ia][jn_star].e_se);
        curve.push_back({detail::fmt(t.a_grid[ia]), detail::fmt(e_row.back())});
    }
    w.write_table("e_a.dat", {"a", "e"}, curve);
    out.summary["n_star"] = n_star;
    out.summary["kept_orbits"] = t.kept;

    std::vector<CheckRow> checks;
    bool have_rate = true;
    for (double v : e_row)
        if (!std::isfinite(v)) have_rate = false;
    if (have_rate) {
        const RateFunction f = legendre_transform(t.a_grid, e_row, se_row);
        std::vector<std::vector<std::string>> rate_rows, rate_plot;
        for (const RatePoint& p : f.sample(41)) {
            rate_rows.push_back({detail::fmt(p.z), detail::fmt(p.value), detail::fmt(p.se),
                                 detail::fmt(p.a_star)});
            rate_plot.push_back({detail::fmt(p.z), detail::fmt(p.value)});
        }
        w.write_table("rate.csv", {"z", "value", "se", "a_star"}, rate_rows);
        w.write_table("rate.dat", {"z", "I"}, rate_plot);

        const SymmetricBound sb = symmetric_pair_bound(f);
        std::vector<std::vector<std::string>> defect_rows;
        for (const GcDefectRow& d : gc_defect(f))
            defect_rows.push_back({detail::fmt(d.z), detail::fmt(d.defect), detail::fmt(d.se)});
        w.write_table("rate_defect.csv", {"z", "defect", "se"}, defect_rows);
        out.summary["z_lo"] = f.z_lo;
        out.summary["z_hi"] = f.z_hi;
        out.summary["convex_warning"] = f.convex_warning;
        out.summary["pair_bound"] = sb.bound;
        if (!sb.grid_closed)
            out.notes.push_back("symmetry check skipped: a_grid missing 1-a partners");
        if (f.convex_warning) out.notes.push_back("rate estimates dip below convexity");
    } else {
        out.notes.push_back("non-finite estimates at the report window; rate files skipped");
    }

    const bool transient = cfg.mgf.init == InitDistribution::Mu0;
    const std::vector<SymmetryRow> sym = transient ? transient_symmetry(t) : steady_symmetry(t);
    std::vector<std::vector<std::string>> sym_rows;
    for (const SymmetryRow& r : sym)
        sym_rows.push_back({transient ? "transient" : "steady", detail::fmt(r.a),
                            detail::fmt(r.a_mirror), detail::fmt(r.n), detail::fmt(r.diff),
                            detail::fmt(r.se), detail::fmt(r.tstat())});
    w.write_table("symmetry.csv", {"route", "a", "a_mirror", "n", "diff", "se", "tstat"},
                  sym_rows);
    if (sym.empty()) {
        out.notes.push_back("symmetry check skipped: no mirror pairs in a_grid");
    } else {
        const double worst = transient ? transient_ft_residual(t) : detail::worst_tstat(sym);
        detail::add_check(checks, out, transient ? "transient_ft_residual" : "steady_symmetry",
                          worst, cfg.verify.ft_sigma,
                          std::isfinite(worst) && worst <= cfg.verify.ft_sigma);
    }
    detail::write_checks(w, "checks.csv", checks, out);

    // Per-step rate estimates (the n -> infinity proxy) for the cross-route
    // comparison; unstable entries stay NaN and serialize as null.
    std::vector<double> slope_row(t.a_grid.size(), kNan), slope_se_row(t.a_grid.size(), kNan);
    for (std::size_t ia = 0; ia < t.a_grid.size(); ++ia)
        if (const std::optional<StableSlope> s = t.slope_at_largest_stable(static_cast<int>(ia))) {
            slope_row[ia] = s->slope;
            slope_se_row[ia] = s->se;
        }

    nlohmann::ordered_json ms;
    ms["seed"] = cfg.seed;
    ms["manifest_digest"] = w.run_digest();
    ms["init"] = detail::init_name(cfg.mgf.init);
    ms["n_star"] = n_star;
    ms["a_grid"] = t.a_grid;
    ms["e"] = e_row;
    ms["e_se"] = se_row;
    ms["slope"] = slope_row;
    ms["slope_se"] = slope_se_row;
    w.write_text("mgf_summary.json", ms.dump(2) + "\n");

    // Cross-route report against an earlier `ulam` run in the same directory.
    const std::optional<nlohmann::json> ss =
        detail::read_json_if(std::filesystem::path(w.dir()) / "spectral_summary.json");
    if (ss && ss->contains("a_grid") && ss->contains("log_lambda")) {
        if (ss->value("seed", cfg.seed) != cfg.seed)
            out.notes.push_back("consistency report compares runs with different seeds");
        w.write_table("consistency.csv", detail::kConsistencyColumns,
                      detail::consistency_rows(detail::json_doubles((*ss)["a_grid"]),
                                               detail::json_doubles((*ss)["log_lambda"]),
                                               detail::json_doubles((*ss)["refine_proxy"]),
                                               detail::json_doubles((*ss)["log_lambda_se"]),
                                               t.a_grid, slope_row, slope_se_row));
    }
}

inline void cmd_ulam(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    UlamOptions opt;
    opt.fine = UlamGrid{cfg.ulam.grid, cfg.ulam.grid};
    opt.coarse_factor = 2;
    opt.samples_per_box = cfg.ulam.samples_per_box;
    opt.a_grid = cfg.ulam.a_grid;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    const SpectralCurve curve = spectral_mgf(sys, opt);
    const double eps = force_epsilon(cfg.force);
    out.discarded["ulam_samples"] = curve.discarded;
    out.summary["c_hat"] = curve.c_hat;
    out.summary["samples"] = curve.samples;

    std::vector<std::vector<std::string>> rows, plot, brows;
    std::vector<CheckRow> checks;
    double worst_pos = 0.0, min_gap = 1e300, worst_res = 0.0;
    bool brackets_ok = true;
    int flagged = 0;
    for (const SpectralPoint& p : curve.points) {
        rows.push_back({detail::fmt(p.a), detail::fmt(p.lambda), detail::fmt(p.log_lambda),
                        detail::fmt(p.log_lambda_coarse), detail::fmt(p.refine_proxy),
                        detail::fmt(p.log_lambda_se), detail::fmt(p.second_modulus),
                        detail::fmt(p.gap), detail::fmt(p.residual), detail::fmt(p.h_min),
                        detail::fmt(p.h_max), detail::fmt(p.flagged_columns)});
        plot.push_back({detail::fmt(p.a), detail::fmt(p.log_lambda)});
        if (p.h_max > 0.0) worst_pos = std::max(worst_pos, std::max(0.0, -p.h_min) / p.h_max);
        min_gap = std::min(min_gap, p.gap);
        worst_res = std::max(worst_res, p.residual);
        flagged += p.flagged_columns;

        const double slack = p.refine_proxy + 3.0 * p.log_lambda_se;
        const BracketCheck b = bracket_check(p.lambda, curve.c_hat, eps, p.a, slack);
        if (!b.pass) brackets_ok = false;
        brows.push_back({detail::fmt(p.a), detail::fmt(b.lo), detail::fmt(b.hi),
                         detail::fmt(b.lambda), detail::fmt(b.slack), detail::fmt(b.pass)});
    }
    w.write_table("spectral.csv",
                  {"a", "lambda", "log_lambda", "log_lambda_coarse", "refine_proxy",
                   "log_lambda_se", "second_modulus", "gap", "residual", "h_min", "h_max",
                   "flagged_columns"},
                  rows);
    w.write_table("e_spectral.dat", {"a", "log_lambda"}, plot);
    w.write_table("bracket.csv", {"a", "lo", "hi", "lambda", "slack", "pass"}, brows);
    if (flagged > 0)
        out.notes.push_back(std::to_string(flagged) + " matrix columns lost over 1% of samples");

    detail::add_check(checks, out, "eigenvector_positivity", worst_pos,
                      cfg.verify.positivity_rel, worst_pos <= cfg.verify.positivity_rel);
    detail::add_check(checks, out, "spectral_gap", min_gap, 0.0, min_gap > 0.0);
    detail::add_check(checks, out, "power_residual", worst_res, 1e-8, worst_res <= 1e-8);
    detail::add_check(checks, out, "perturbation_bracket", brackets_ok ? 0.0 : 1.0, 0.0,
                      brackets_ok);

    std::vector<double> sa, slog, sproxy, sse;
    for (const SpectralPoint& p : curve.points) {
        sa.push_back(p.a);
        slog.push_back(p.log_lambda);
        sproxy.push_back(p.refine_proxy);
        sse.push_back(p.log_lambda_se);
    }
    nlohmann::ordered_json ss;
    ss["seed"] = cfg.seed;
    ss["manifest_digest"] = w.run_digest();
    ss["c_hat"] = curve.c_hat;
    ss["a_grid"] = sa;
    ss["log_lambda"] = slog;
    ss["log_lambda_se"] = sse;
    ss["refine_proxy"] = sproxy;
    w.write_text("spectral_summary.json", ss.dump(2) + "\n");

    // Cross-route report against an earlier `mgf` run in the same directory.
    const std::optional<nlohmann::json> ms =
        detail::read_json_if(std::filesystem::path(w.dir()) / "mgf_summary.json");
    if (ms && ms->contains("a_grid") && ms->contains("slope")) {
        if (ms->value("seed", cfg.seed) != cfg.seed)
            out.notes.push_back("consistency report compares runs with different seeds");
        w.write_table("consistency.csv", detail::kConsistencyColumns,
                      detail::consistency_rows(sa, slog, sproxy, sse,
                                               detail::json_doubles((*ms)["a_grid"]),
                                               detail::json_doubles((*ms)["slope"]),
                                               detail::json_doubles((*ms)["slope_se"])));
    }
    detail::write_checks(w, "checks.csv", checks, out);
}

inline void cmd_gk(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    const double eps = force_epsilon(cfg.force);
    GkOptions opt;
    opt.orbits = cfg.gk.orbits;
    opt.length = cfg.gk.length;
    opt.j_max = cfg.gk.j_max;
    opt.srb.burn_in = cfg.gk.burn_in;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    const GkResult r = green_kubo(sys, opt);
    out.discarded["orbits"] = r.discarded;

    std::vector<std::vector<std::string>> acv, acn;
    for (std::size_t j = 0; j < r.autocov.size(); ++j) {
        acv.push_back({detail::fmt(j), detail::fmt(r.autocov[j]), detail::fmt(r.autocov_se[j])});
        if (r.autocov[0] > 0.0)
            acn.push_back({detail::fmt(j), detail::fmt(r.autocov[j] / r.autocov[0])});
    }
    w.write_table("autocov.csv", {"j", "autocov", "se"}, acv);
    if (!acn.empty())
        w.write_table("autocorrelation.dat", {"j", "rho"}, acn);
    else
        out.notes.push_back("zero variance: autocorrelation plot skipped");
    if (r.undecayed_warning)
        out.notes.push_back("autocovariance tail has not decayed within j_max");

    out.summary["mean_s"] = r.mean_s;
    out.summary["sigma2_sum"] = r.sigma2_sum;
    out.summary["sigma2_sum_se"] = r.sigma2_sum_se;
    out.summary["sigma2_batch"] = r.sigma2_batch;
    out.summary["sigma2_batch_se"] = r.sigma2_batch_se;

    std::vector<CheckRow> checks;
    if (eps > 0.0) {
        detail::add_check(checks, out, "sigma2_positive", std::min(r.sigma2_sum, r.sigma2_batch),
                          0.0, r.sigma2_sum > 0.0 && r.sigma2_batch > 0.0);
        const double se =
            std::sqrt(r.sigma2_sum_se * r.sigma2_sum_se + r.sigma2_batch_se * r.sigma2_batch_se);
        const double diff = std::abs(r.sigma2_sum - r.sigma2_batch);
        detail::add_check(checks, out, "sigma2_consistency", diff, 3.0 * se,
                          std::isfinite(diff) && diff <= 3.0 * se);
    } else {
        out.notes.push_back("zero field: variance checks skipped");
    }

    if (std::holds_alternative<ConstantField>(cfg.force) && eps > 0.0) {
        MeanRateOptions ropt;
        ropt.eps_list = cfg.gk.rate_eps;
        ropt.orbits = cfg.gk.rate_orbits;
        ropt.length = cfg.gk.rate_length;
        ropt.srb.burn_in = cfg.gk.burn_in;
        ropt.h_samples = cfg.gk.rate_h_samples;
        ropt.seed = cfg.seed;
        ropt.workers = cfg.workers;
        const std::vector<MeanRateRow> rate = mean_entropy_rate(sys, ropt);
        std::vector<std::vector<std::string>> rrows;
        double top_eps = 0.0, top_t = kNan;
        for (const MeanRateRow& row : rate) {
            rrows.push_back({detail::fmt(row.eps), detail::fmt(row.mean_s),
                             detail::fmt(row.mean_s_se), detail::fmt(row.mu0_h),
                             detail::fmt(row.mu0_h_se), detail::fmt(row.delta),
                             detail::fmt(row.delta_se), detail::fmt(row.discarded)});
            out.discarded["rate_orbits"] += row.discarded;
            if (row.eps > top_eps && row.mean_s_se > 0.0) {
                top_eps = row.eps;
                top_t = row.mean_s / row.mean_s_se;
            }
        }
        w.write_table("rate_vs_eps.csv",
                      {"eps", "mean_s", "mean_s_se", "mu0_h", "mu0_h_se", "delta", "delta_se",
                       "discarded"},
                      rrows);
        // The smaller fields in the scan probe the decay rate, not positivity;
        // resolving them to 3 sigma as well would need far larger ensembles.
        detail::add_check(checks, out, "mean_rate_positive", top_t, 3.0,
                          std::isfinite(top_t) && top_t >= 3.0,
                          "at field strength " + detail::fmt(top_eps));
    } else {
        out.notes.push_back("mean rate scan skipped (needs a nonzero constant field)");
    }
    detail::write_checks(w, "checks.csv", checks, out);
}

inline void cmd_gc(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    std::vector<CheckRow> checks;
    if (force_is_zero(cfg.force)) {
        w.write_table("gc.csv", {"z", "log_ratio_rate", "weight", "count_pos", "count_neg"}, {});
        out.notes.push_back("zero field: ratio test skipped");
        detail::write_checks(w, "checks.csv", checks, out);
        return;
    }
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    GcOptions opt;
    opt.orbits = cfg.gc.orbits;
    opt.n = cfg.gc.n;
    opt.srb.burn_in = cfg.gc.burn_in;
    opt.bin_width = cfg.gc.bin_width;
    opt.min_count = cfg.gc.min_count;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    const GcResult r = gc_ratio(sys, opt);
    out.discarded["orbits"] = r.discarded;

    std::vector<std::vector<std::string>> rows, plot;
    for (const GcRow& row : r.rows) {
        rows.push_back({detail::fmt(row.z), detail::fmt(row.log_ratio_rate),
                        detail::fmt(row.weight), detail::fmt(row.count_pos),
                        detail::fmt(row.count_neg)});
        plot.push_back({detail::fmt(row.z), detail::fmt(row.log_ratio_rate)});
    }
    w.write_table("gc.csv", {"z", "log_ratio_rate", "weight", "count_pos", "count_neg"}, rows);
    w.write_table("gc_ratio.dat", {"z", "log_ratio_rate"}, plot);

    out.summary["slope"] = r.slope;
    out.summary["slope_se"] = r.slope_se;
    out.summary["bin_width"] = r.bin_width;
    out.summary["mean_rate"] = r.mean_rate;
    out.summary["mean_rate_se"] = r.mean_rate_se;
    out.summary["populated_bins"] = r.rows.size();

    detail::add_check(checks, out, "populated_bins", static_cast<double>(r.rows.size()), 2.0,
                      r.rows.size() >= 2);
    detail::add_check(checks, out, "ratio_slope", std::abs(r.slope - 1.0), cfg.gc.slope_tol,
                      std::isfinite(r.slope) && std::abs(r.slope - 1.0) <= cfg.gc.slope_tol);
    detail::write_checks(w, "checks.csv", checks, out);
}

inline void cmd_verify(const RunConfig& cfg, RunWriter& w, CommandOutcome& out) {
    const System sys = make_system(cfg.table, cfg.force, cfg.twist, cfg.flight);
    const std::uint64_t n = cfg.verify.samples;
    std::vector<CheckRow> checks;

    if (twist_is_identity(cfg.twist)) {
        double worst = 0.0;
        std::uint64_t used = 0, skipped = 0;
        for (std::uint64_t k = 0; k < n; ++k) {
            Rng rng = Rng::substream(cfg.seed, k);
            const CollisionCoord c = sample_mu0(cfg.table, rng);
            try {
                const StepResult fwd = billiard_map(sys, c);
                const StepResult back = billiard_map(sys, involution(fwd.to));
                worst = std::max(worst, coord_distance(cfg.table, involution(back.to), c));
                ++used;
            } catch (const FlightError&) {
                ++skipped;
            }
        }
        detail::add_check(checks, out, "reversibility", worst, cfg.verify.reversibility_tol,
                          used > 0 && worst <= cfg.verify.reversibility_tol,
                          std::to_string(used) + " points");
        out.discarded["reversibility"] = skipped;
    } else {
        out.notes.push_back("reversibility check skipped (twist breaks time reversal)");
    }

    {
        const std::uint64_t target = std::min<std::uint64_t>(n, 1000);
        double worst_fd = 0.0, worst_quad = 0.0;
        std::uint64_t got = 0;
        const auto* field = std::get_if<ConstantField>(&cfg.force);
        for (std::uint64_t k = 0; k < 64 * target && got < target; ++k) {
            Rng rng = Rng::substream(cfg.seed ^ 0x9e3779b97f4a7c15ull, k);
            const CollisionCoord c = sample_mu0(cfg.table, rng);
            if (detail::orbit_margin(sys, c, 1) <= 0.1) continue;
            StepResult res;
            try {
                res = billiard_map(sys, c);
            } catch (const FlightError&) {
                continue;
            }
            const std::optional<double> fd = log_jac_fd(sys, c);
            if (!fd) continue;
            ++got;
            worst_fd = std::max(worst_fd, std::abs(res.record.log_jac_total - *fd));
            if (field != nullptr)
                worst_quad = std::max(
                    worst_quad, std::abs(res.record.log_jac_flow + dot(field->field, res.record.dq)));
        }
        detail::add_check(checks, out, "jacobian_fd", worst_fd, cfg.verify.jacobian_fd_tol,
                          got > 0 && worst_fd <= cfg.verify.jacobian_fd_tol,
                          std::to_string(got) + " points");
        if (field != nullptr)
            detail::add_check(checks, out, "jacobian_quadrature", worst_quad,
                              cfg.verify.jacobian_quad_tol,
                              got > 0 && worst_quad <= cfg.verify.jacobian_quad_tol);
    }

    {
        const System free = make_system(cfg.table, NoForce{}, IdentityTwist{}, cfg.flight);
        const PushforwardKs pk = mu0_pushforward_ks(free, n, cfg.seed, cfg.workers);
        const double crit =
            detail::kKsCritical1Pct / std::sqrt(static_cast<double>(std::max<std::uint64_t>(pk.kept, 1)));
        detail::add_check(checks, out, "unforced_sinphi_ks", pk.ks_sin_phi, crit,
                          pk.kept > 0 && pk.ks_sin_phi <= crit);
        detail::add_check(checks, out, "unforced_arclength_ks", pk.ks_arclength, crit,
                          pk.kept > 0 && pk.ks_arclength <= crit);
        detail::add_check(checks, out, "unforced_zero_s", pk.max_abs_s, 0.0,
                          pk.max_abs_s == 0.0);
        out.discarded["pushforward"] = pk.discarded;
    }

    if (twist_is_identity(cfg.twist)) {
        MgfOptions mopt;
        mopt.a_grid = {-0.25, 0.25, 0.75, 1.25};
        mopt.n_list = {5, 10};
        mopt.orbits = std::max<std::uint64_t>(n, 1000);
        mopt.init = InitDistribution::Mu0;
        mopt.seed = cfg.seed;
        mopt.workers = cfg.workers;
        const MgfTable t = estimate_mgf(sys, mopt);
        const double worst = transient_ft_residual(t);
        detail::add_check(checks, out, "transient_ft", worst, cfg.verify.ft_sigma,
                          std::isfinite(worst) && worst <= cfg.verify.ft_sigma);
        out.discarded["transient_orbits"] = t.orbits - t.kept;
    } else {
        out.notes.push_back("transient symmetry check skipped (twist breaks time reversal)");
    }

    {
        const UlamMatrix m = build_ulam(sys, UlamGrid{16, 16}, 0.5, 100, cfg.seed, cfg.workers);
        const SpectralResult r = leading_eig(m, 1e-10, 100000, false);
        const double stat = r.h_max > 0.0 ? std::max(0.0, -r.h_min) / r.h_max : 0.0;
        detail::add_check(checks, out, "eigenvector_positivity", stat, cfg.verify.positivity_rel,
                          stat <= cfg.verify.positivity_rel);
    }

    detail::write_checks(w, "verify.csv", checks, out);
}

inline int run_command(const std::string& command, const RunConfig& cfg,
                       const std::string& out_dir) {
    const auto start = std::chrono::steady_clock::now();
    RunWriter w(out_dir, config_digest(cfg));
    CommandOutcome out;
    w.write_text("resolved_config.json", resolved_json(cfg).dump(2) + "\n");
    try {
        if (command == "table-check")
            cmd_table_check(cfg, w, out);
        else if (command == "simulate")
            cmd_simulate(cfg, w, out);
        else if (command == "mgf")
            cmd_mgf(cfg, w, out);
        else if (command == "ulam")
            cmd_ulam(cfg, w, out);
        else if (command == "gk")
            cmd_gk(cfg, w, out);
        else if (command == "gc")
            cmd_gc(cfg, w, out);
        else if (command == "verify")
            cmd_verify(cfg, w, out);
        else
            throw std::invalid_argument("unknown command '" + command + "'");
    } catch (const std::exception& e) {
        out.errors.push_back(e.what());
        out.pass = false;
        out.exit_code = 2;
    }
    if (!out.pass && out.exit_code == 0) out.exit_code = 1;

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    nlohmann::ordered_json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["seed"] = cfg.seed;
    m["manifest_digest"] = w.run_digest();
    m["pass"] = out.pass;
    m["exit_code"] = out.exit_code;
    m["wall_seconds"] = wall;
    nlohmann::ordered_json disc = nlohmann::ordered_json::object();
    for (const auto& [key, value] : out.discarded) disc[key] = value;
    m["discarded"] = disc;
    m["notes"] = out.notes;
    m["errors"] = out.errors;
    m["summary"] = out.summary;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const OutputFile& f : w.outputs()) files.push_back({{"file", f.name}, {"digest", f.digest}});
    m["outputs"] = files;
    m["resolved_config"] = resolved_json(cfg);
    w.write_text("manifest.json", m.dump(2) + "\n");
    return out.exit_code;
}

}  // namespace lorentz
