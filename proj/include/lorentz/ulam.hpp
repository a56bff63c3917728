#pragma once

// Finite-rank surrogate of the weighted transfer operator.  The collision
// space is cut into boxes uniform in (r, sin phi), so every box carries the
// same mu0 mass and the a = 0 matrix is column-stochastic by construction.
// Entry [j, i] estimates E over mu0-restricted-to-box-i of J^a restricted to
// landing in box j, with J^a = exp(-a s); the leading eigenvalue then gives
// the spectral route log lambda_a to the moment generating function.
//
// One sample set of (start box, landing box, log J) triples is drawn per run
// and re-weighted for every a, so a-to-a comparisons carry no fresh Monte
// Carlo noise.  Sampling is parallel over boxes with per-box substreams and
// an index-ordered assembly, which keeps results worker-count independent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorentz/dynamics.hpp"
#include "lorentz/entropy.hpp"
#include "lorentz/parallel.hpp"
#include "lorentz/rng.hpp"

namespace lorentz {

struct UlamGrid {
    int n_r = 64;  // boxes along arclength, per scatterer
    int n_u = 64;  // boxes along u = sin(phi), per scatterer

    int boxes_per_scatterer() const { return n_r * n_u; }
    int total_boxes(const TableConfig& table) const {
        return boxes_per_scatterer() * static_cast<int>(table.scatterers.size());
    }

    int box_of(const TableConfig& table, const CollisionCoord& c) const {
        const double circ =
            table.scatterers[static_cast<std::size_t>(c.scatterer)].circumference();
        int ir = static_cast<int>(std::floor(c.r / circ * n_r));
        int iu = static_cast<int>(std::floor((std::sin(c.phi) + 1.0) / 2.0 * n_u));
        ir = std::clamp(ir, 0, n_r - 1);
        iu = std::clamp(iu, 0, n_u - 1);
        return c.scatterer * boxes_per_scatterer() + iu * n_r + ir;
    }

    // Draws from mu0 conditioned on the box, which is uniform in (r, u).
    CollisionCoord sample_in_box(const TableConfig& table, int box, Rng& rng) const {
        const int per = boxes_per_scatterer();
        const int scatterer = box / per;
        const int rem = box % per;
        const int iu = rem / n_r;
        const int ir = rem % n_r;
        const double circ =
            table.scatterers[static_cast<std::size_t>(scatterer)].circumference();
        const double r = (ir + rng.next_double()) / n_r * circ;
        const double u = std::clamp(-1.0 + 2.0 * (iu + rng.next_double()) / n_u, -1.0, 1.0);
        return {scatterer, r, std::asin(u)};
    }
};

inline constexpr std::uint32_t kUlamAborted = std::numeric_limits<std::uint32_t>::max();

// Shared sample triples: sample t of box i sits at index i * per_box + t.
struct UlamSamples {
    UlamGrid grid;
    int scatterers = 0;
    int per_box = 0;
    std::vector<std::uint32_t> to_box;  // landing box, kUlamAborted on a lost flight
    std::vector<double> log_jac;
    double c_hat = 0.0;  // empirical max |H| over the kept samples
    std::uint64_t discarded = 0;
    std::uint64_t seed = 0;
};

inline UlamSamples draw_ulam_samples(const System& sys, const UlamGrid& grid, int per_box,
                                     std::uint64_t seed, int workers) {
    if (grid.n_r < 1 || grid.n_u < 1)
        throw std::invalid_argument("draw_ulam_samples: grid counts must be positive");
    if (per_box < 100)
        throw std::invalid_argument("draw_ulam_samples: need at least 100 samples per box");

    UlamSamples s;
    s.grid = grid;
    s.scatterers = static_cast<int>(sys.table.scatterers.size());
    s.per_box = per_box;
    const std::uint64_t boxes = static_cast<std::uint64_t>(grid.total_boxes(sys.table));
    s.to_box.assign(boxes * per_box, kUlamAborted);
    s.log_jac.assign(boxes * per_box, std::numeric_limits<double>::quiet_NaN());
    s.seed = seed;

    parallel_for(boxes, workers, [&](std::uint64_t box) {
        Rng rng = Rng::substream(seed, box);
        for (int t = 0; t < per_box; ++t) {
            const std::uint64_t idx = box * per_box + t;
            const CollisionCoord c =
                grid.sample_in_box(sys.table, static_cast<int>(box), rng);
            try {
                const StepResult res = billiard_map(sys, c);
                s.to_box[idx] = static_cast<std::uint32_t>(grid.box_of(sys.table, res.to));
                s.log_jac[idx] = res.record.log_jac_total;
            } catch (const FlightError&) {
            }
        }
    });

    const double eps = force_epsilon(sys.force);
    for (std::uint64_t idx = 0; idx < s.to_box.size(); ++idx) {
        if (s.to_box[idx] == kUlamAborted) {
            ++s.discarded;
            continue;
        }
        if (eps > 0.0) s.c_hat = std::max(s.c_hat, std::abs(std::expm1(s.log_jac[idx]) / eps));
    }
    return s;
}

// Column-compressed Monte Carlo estimate of the weighted transfer operator.
struct UlamMatrix {
    int n = 0;
    double a = 0.0;
    std::vector<std::uint64_t> col_ptr;  // size n + 1
    std::vector<std::uint32_t> row;
    std::vector<double> val;
    int samples_per_box = 0;
    std::vector<std::uint32_t> discarded_per_col;
    int flagged_columns = 0;  // columns losing more than 1% of their samples

    std::vector<double> column_sums() const {
        std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
        for (int i = 0; i < n; ++i)
            for (std::uint64_t e = col_ptr[static_cast<std::size_t>(i)];
                 e < col_ptr[static_cast<std::size_t>(i) + 1]; ++e)
                sums[static_cast<std::size_t>(i)] += val[e];
        return sums;
    }
};

// Aggregates the shared samples into a matrix on the grid coarsened by
// `coarse_factor` in both directions.  jack_block >= 0 leaves out the samples
// with in-box index congruent to it mod jack_blocks, for jackknife errors.
inline UlamMatrix build_matrix(const UlamSamples& s, double a, int coarse_factor = 1,
                               int jack_block = -1, int jack_blocks = 10) {
    if (coarse_factor < 1 || s.grid.n_r % coarse_factor != 0 || s.grid.n_u % coarse_factor != 0)
        throw std::invalid_argument("build_matrix: coarse factor must divide the grid");
    if (jack_block >= 0 && (jack_blocks < 2 || jack_block >= jack_blocks))
        throw std::invalid_argument("build_matrix: jackknife block out of range");

    const UlamGrid coarse{s.grid.n_r / coarse_factor, s.grid.n_u / coarse_factor};
    const int fine_per = s.grid.boxes_per_scatterer();
    const int coarse_per = coarse.boxes_per_scatterer();
    const int n = coarse_per * s.scatterers;
    const int fine_boxes = fine_per * s.scatterers;

    auto coarsen = [&](int fine_id) {
        const int sc = fine_id / fine_per;
        const int rem = fine_id % fine_per;
        const int iu = (rem / s.grid.n_r) / coarse_factor;
        const int ir = (rem % s.grid.n_r) / coarse_factor;
        return sc * coarse_per + iu * coarse.n_r + ir;
    };

    UlamMatrix m;
    m.n = n;
    m.a = a;
    m.samples_per_box = s.per_box * coarse_factor * coarse_factor;
    m.col_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
    m.discarded_per_col.assign(static_cast<std::size_t>(n), 0);

    // Fine boxes of one coarse column are contiguous per scatterer row block;
    // gather them explicitly to stay simple.
    std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
    for (int fb = 0; fb < fine_boxes; ++fb)
        members[static_cast<std::size_t>(coarsen(fb))].push_back(fb);

    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    std::vector<std::uint32_t> touched;
    for (int col = 0; col < n; ++col) {
        touched.clear();
        std::uint64_t included = 0;
        std::uint32_t lost = 0;
        for (int fb : members[static_cast<std::size_t>(col)]) {
            const std::uint64_t base = static_cast<std::uint64_t>(fb) * s.per_box;
            for (int t = 0; t < s.per_box; ++t) {
                if (jack_block >= 0 && t % jack_blocks == jack_block) continue;
                ++included;
                const std::uint32_t fine_to = s.to_box[base + t];
                if (fine_to == kUlamAborted) {
                    ++lost;
                    continue;
                }
                const std::uint32_t j =
                    static_cast<std::uint32_t>(coarsen(static_cast<int>(fine_to)));
                const double w = a == 0.0 ? 1.0 : std::exp(a * s.log_jac[base + t]);
                if (acc[j] == 0.0) touched.push_back(j);
                acc[j] += w;
            }
        }
        std::sort(touched.begin(), touched.end());
        m.discarded_per_col[static_cast<std::size_t>(col)] = lost;
        if (lost > 0 && static_cast<double>(lost) > 0.01 * static_cast<double>(included))
            ++m.flagged_columns;
        for (std::uint32_t j : touched) {
            m.row.push_back(j);
            m.val.push_back(acc[j] / static_cast<double>(included));
            acc[j] = 0.0;
        }
        m.col_ptr[static_cast<std::size_t>(col) + 1] = m.row.size();
    }
    return m;
}

// Single-matrix entry point: draw a fresh stratified sample set on the grid
// and assemble the matrix for one weight exponent.
inline UlamMatrix build_ulam(const System& sys, const UlamGrid& grid, double a,
                             int samples_per_box = 400, std::uint64_t seed = 1, int workers = 1) {
    return build_matrix(draw_ulam_samples(sys, grid, samples_per_box, seed, workers), a);
}

struct SpectralResult {
    double lambda = 0.0;
    std::vector<double> h;  // leading eigenvector, normalized to unit mass
    double residual = 0.0;  // |M h - lambda h|_1 / (lambda |h|_1)
    std::uint64_t iterations = 0;
    double second_modulus = 0.0;
    double gap = 0.0;
    double h_min = 0.0;
    double h_max = 0.0;
};

namespace detail {

inline void ulam_matvec(const UlamMatrix& m, const std::vector<double>& x,
                        std::vector<double>& y) {
    std::fill(y.begin(), y.end(), 0.0);
    for (int i = 0; i < m.n; ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        for (std::uint64_t e = m.col_ptr[static_cast<std::size_t>(i)];
             e < m.col_ptr[static_cast<std::size_t>(i) + 1]; ++e)
            y[m.row[e]] += m.val[e] * xi;
    }
}

inline void ulam_matvec_t(const UlamMatrix& m, const std::vector<double>& x,
                          std::vector<double>& y) {
    for (int i = 0; i < m.n; ++i) {
        double acc = 0.0;
        for (std::uint64_t e = m.col_ptr[static_cast<std::size_t>(i)];
             e < m.col_ptr[static_cast<std::size_t>(i) + 1]; ++e)
            acc += m.val[e] * x[m.row[e]];
        y[static_cast<std::size_t>(i)] = acc;
    }
}

inline double l1_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

// Power iteration with L1 normalization; fn must apply the operator.
template <class MatVec>
inline std::pair<double, std::uint64_t> power_iterate(MatVec&& apply, std::vector<double>& x,
                                                      double tol, std::uint64_t max_iters,
                                                      std::string* fail_msg = nullptr) {
    const std::size_t n = x.size();
    std::vector<double> y(n);
    double lambda = 0.0;
    std::vector<double> history;
    for (std::uint64_t it = 1; it <= max_iters; ++it) {
        apply(x, y);
        lambda = 0.0;
        for (double v : y) lambda += v;  // nonnegative input stays nonnegative
        if (!(lambda > 0.0)) {
            x = y;
            return {0.0, it};
        }
        double res = 0.0;
        for (std::size_t i = 0; i < n; ++i) res += std::abs(y[i] - lambda * x[i]);
        res /= lambda;
        for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / lambda;
        if (res <= tol) return {lambda, it};
        history.push_back(res);
    }
    if (fail_msg != nullptr) {
        *fail_msg = "power iteration did not reach tol; trailing residuals:";
        const std::size_t from = history.size() > 5 ? history.size() - 5 : 0;
        for (std::size_t i = from; i < history.size(); ++i)
            *fail_msg += " " + std::to_string(history[i]);
    }
    return {lambda, max_iters + 1};
}

}  // namespace detail

inline SpectralResult leading_eig(const UlamMatrix& m, double tol = 1e-10,
                                  std::uint64_t max_iters = 100000, bool with_second = true) {
    if (m.n <= 0) throw std::invalid_argument("leading_eig: empty matrix");
    const std::size_t n = static_cast<std::size_t>(m.n);

    SpectralResult out;
    out.h.assign(n, 1.0 / static_cast<double>(m.n));
    std::string fail;
    auto fwd = [&](const std::vector<double>& x, std::vector<double>& y) {
        detail::ulam_matvec(m, x, y);
    };
    auto [lambda, iters] = detail::power_iterate(fwd, out.h, tol, max_iters, &fail);
    if (iters > max_iters) throw std::runtime_error("leading_eig: " + fail);
    out.lambda = lambda;
    out.iterations = iters;

    std::vector<double> y(n);
    detail::ulam_matvec(m, out.h, y);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res += std::abs(y[i] - lambda * out.h[i]);
    out.residual = lambda > 0.0 ? res / lambda : res;
    out.h_min = *std::min_element(out.h.begin(), out.h.end());
    out.h_max = *std::max_element(out.h.begin(), out.h.end());
    if (!with_second || !(lambda > 0.0)) return out;

    // Second modulus by deflating the leading pair: iterate x -> Mx - lambda
    // h (u.x) with u the left eigenvector scaled so u.h = 1.  The L1 growth
    // factor settles on |second eigenvalue|; a geometric mean over a trailing
    // window smooths the oscillation a complex pair would cause.
    std::vector<double> uvec(n, 1.0);
    auto bwd = [&](const std::vector<double>& x, std::vector<double>& z) {
        detail::ulam_matvec_t(m, x, z);
    };
    detail::power_iterate(bwd, uvec, std::max(tol, 1e-12), max_iters / 10);
    double uh = 0.0;
    for (std::size_t i = 0; i < n; ++i) uh += uvec[i] * out.h[i];
    if (uh <= 0.0) return out;
    for (auto& v : uvec) v /= uh;

    std::vector<double> x(n), z(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = (i % 2 == 0 ? 1.0 : -1.0);
    double ux = 0.0;
    for (std::size_t i = 0; i < n; ++i) ux += uvec[i] * x[i];
    for (std::size_t i = 0; i < n; ++i) x[i] -= ux * out.h[i];
    const double nx = detail::l1_norm(x);
    if (nx == 0.0) return out;
    for (auto& v : x) v /= nx;

    const int defl_max = 600, window = 12, warmup = 40;
    std::vector<double> ring(window, 0.0);
    int filled = 0;
    for (int it = 0; it < defl_max; ++it) {
        detail::ulam_matvec(m, x, z);
        double uz = 0.0;
        for (std::size_t i = 0; i < n; ++i) uz += uvec[i] * z[i];
        for (std::size_t i = 0; i < n; ++i) z[i] -= lambda * uz * out.h[i];
        const double nz = detail::l1_norm(z);
        if (nz == 0.0) break;
        for (std::size_t i = 0; i < n; ++i) x[i] = z[i] / nz;
        ring[static_cast<std::size_t>(it % window)] = std::log(nz);
        filled = std::min(filled + 1, window);
        if (it + 1 >= warmup && filled == window) {
            const auto [lo, hi] = std::minmax_element(ring.begin(), ring.end());
            if (*hi - *lo <= 1e-9) break;
        }
    }
    if (filled > 0) {
        double mean = 0.0;
        for (int i = 0; i < filled; ++i) mean += ring[static_cast<std::size_t>(i)];
        out.second_modulus = std::exp(mean / filled);
    }
    out.gap = out.lambda - out.second_modulus;
    return out;
}

// Spectral-radius bracket from the perturbation bound at field size eps with
// the empirical constant c_hat; `slack` widens it by the caller's numerical
// error budget (grid refinement proxy plus statistical error).
struct BracketCheck {
    double lo = 1.0;
    double hi = 1.0;
    double lambda = 0.0;
    double slack = 0.0;
    bool pass = false;
};

inline BracketCheck bracket_check(double lambda, double c_hat, double eps, double a,
                                  double slack = 0.0) {
    if (!(c_hat >= 0.0) || !(eps >= 0.0))
        throw std::invalid_argument("bracket_check: c_hat and eps must be nonnegative");
    if (c_hat * eps >= 1.0)
        throw std::invalid_argument("bracket_check: c_hat * eps must stay below 1");
    BracketCheck out;
    out.lambda = lambda;
    out.slack = slack;
    const double sgn = a > 1.0 ? 1.0 : (a < 1.0 ? -1.0 : 0.0);
    out.lo = std::pow(1.0 - sgn * c_hat * eps, a - 1.0);
    out.hi = std::pow(1.0 + sgn * c_hat * eps, a - 1.0);
    out.pass = lambda >= out.lo - slack && lambda <= out.hi + slack;
    return out;
}

struct SpectralPoint {
    double a = 0.0;
    double log_lambda = 0.0;         // fine-grid point estimate
    double log_lambda_coarse = 0.0;
    double refine_proxy = 0.0;       // |fine - coarse| discretization proxy
    double log_lambda_se = 0.0;      // jackknife on the coarse grid, 0 if off
    double lambda = 0.0;
    double second_modulus = 0.0;
    double gap = 0.0;
    double residual = 0.0;
    double h_min = 0.0;
    double h_max = 0.0;
    int flagged_columns = 0;
};

struct UlamOptions {
    UlamGrid fine{128, 128};
    int coarse_factor = 2;  // coarse grid = fine over this factor (default 64x64)
    int samples_per_box = 400;
    std::vector<double> a_grid;
    int jackknife_blocks = 10;  // 0 disables jackknife errors
    double power_tol = 1e-10;
    std::uint64_t max_iters = 100000;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct SpectralCurve {
    std::vector<SpectralPoint> points;
    double c_hat = 0.0;
    std::uint64_t discarded = 0;
    std::uint64_t samples = 0;
};

inline SpectralCurve spectral_mgf(const System& sys, const UlamOptions& opt) {
    if (opt.a_grid.empty()) throw std::invalid_argument("spectral_mgf: empty a grid");
    const UlamSamples samples =
        draw_ulam_samples(sys, opt.fine, opt.samples_per_box, opt.seed, opt.workers);

    SpectralCurve curve;
    curve.c_hat = samples.c_hat;
    curve.discarded = samples.discarded;
    curve.samples = samples.to_box.size();

    for (double a : opt.a_grid) {
        SpectralPoint p;
        p.a = a;

        const UlamMatrix fine = build_matrix(samples, a);
        const SpectralResult fr = leading_eig(fine, opt.power_tol, opt.max_iters);
        p.lambda = fr.lambda;
        p.log_lambda = std::log(fr.lambda);
        p.second_modulus = fr.second_modulus;
        p.gap = fr.gap;
        p.residual = fr.residual;
        p.h_min = fr.h_min;
        p.h_max = fr.h_max;
        p.flagged_columns = fine.flagged_columns;

        const UlamMatrix coarse = build_matrix(samples, a, opt.coarse_factor);
        const SpectralResult cr = leading_eig(coarse, opt.power_tol, opt.max_iters);
        p.log_lambda_coarse = std::log(cr.lambda);
        p.refine_proxy = std::abs(p.log_lambda - p.log_lambda_coarse);

        if (opt.jackknife_blocks > 1) {
            const int K = opt.jackknife_blocks;
            std::vector<double> leave_out(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) {
                const UlamMatrix mk = build_matrix(samples, a, opt.coarse_factor, k, K);
                leave_out[static_cast<std::size_t>(k)] =
                    std::log(leading_eig(mk, opt.power_tol, opt.max_iters, false).lambda);
            }
            double mean = 0.0;
            for (double v : leave_out) mean += v;
            mean /= K;
            double ss = 0.0;
            for (double v : leave_out) ss += (v - mean) * (v - mean);
            p.log_lambda_se = std::sqrt(ss * (K - 1.0) / K);
        }
        curve.points.push_back(p);
    }
    return curve;
}

}  // namespace lorentz
