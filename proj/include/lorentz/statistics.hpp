#pragma once

// Monte Carlo estimators for the entropy-production observable: the moment
// generating function e(a), its fluctuation symmetries, the Legendre rate
// function, histogram log-ratios, the Green-Kubo diffusion coefficient, and
// the small-field expansion of the mean production rate.
//
// Every estimator draws orbit k from Rng::substream(seed, k) and stores its
// contribution in a per-orbit slot, then reduces the slots sequentially, so
// results are byte-identical for any worker count.  Batch errors use
// contiguous orbit blocks, which keeps paired comparisons across a-values
// valid (common random numbers).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lorentz/dynamics.hpp"
#include "lorentz/entropy.hpp"
#include "lorentz/parallel.hpp"
#include "lorentz/rng.hpp"
#include "lorentz/sampling.hpp"

namespace lorentz {

inline constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Default a-grid, closed under a -> 1 - a so symmetry checks pair up exactly.
inline std::vector<double> default_a_grid() {
    return {-0.25, -0.125, 0.0, 0.125, 0.25, 0.375, 0.5,
            0.625, 0.75,  0.875, 1.0, 1.125, 1.25};
}

inline std::vector<int> default_n_list() { return {5, 10, 20, 30, 50}; }

namespace detail {

struct MeanSd {
    double mean = kNan;
    double sd = kNan;
    std::size_t count = 0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd out;
    double sum = 0.0;
    for (double x : v)
        if (std::isfinite(x)) {
            sum += x;
            ++out.count;
        }
    if (out.count == 0) return out;
    out.mean = sum / static_cast<double>(out.count);
    if (out.count < 2) return out;
    double ss = 0.0;
    for (double x : v)
        if (std::isfinite(x)) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(out.count - 1));
    return out;
}

inline double batch_stderr(const std::vector<double>& batch_values) {
    const MeanSd ms = mean_sd(batch_values);
    if (ms.count < 2) return kNan;
    return ms.sd / std::sqrt(static_cast<double>(ms.count));
}

}  // namespace detail

struct MgfOptions {
    std::vector<double> a_grid = default_a_grid();
    std::vector<int> n_list = default_n_list();
    std::uint64_t orbits = 10000;
    InitDistribution init = InitDistribution::Mu0;
    SrbOptions srb{};
    int batches = 30;
    double ess_min = 100.0;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct MgfCell {
    double e = kNan;      // (1/n) log mean exp(-a S_n)
    double e_se = kNan;
    double slope = kNan;  // log M(n) - log M(n-1), the per-step rate estimate
    double slope_se = kNan;
    double ess = 0.0;     // effective sample size of the weights at this n
    bool stable = false;
};

struct StableSlope {
    int n = 0;
    double slope = kNan;
    double se = kNan;
};

struct MgfTable {
    std::vector<double> a_grid;
    std::vector<int> n_list;
    std::vector<int> capture_n;  // n_list merged with each n-1, ascending
    std::vector<std::vector<MgfCell>> cells;  // [a][n_list index]
    // Per-batch log of the batch-mean weight, [a][capture index][batch];
    // retained so symmetry checks can build paired differences.
    std::vector<std::vector<std::vector<double>>> batch_log_mean;
    std::vector<std::vector<double>> ess_all;  // [a][capture index]
    std::vector<std::uint64_t> batch_kept;
    std::uint64_t orbits = 0;
    std::uint64_t kept = 0;

    int a_index(double a) const {
        for (std::size_t i = 0; i < a_grid.size(); ++i)
            if (std::abs(a_grid[i] - a) < 1e-12) return static_cast<int>(i);
        return -1;
    }
    int n_index(int n) const {
        for (std::size_t i = 0; i < n_list.size(); ++i)
            if (n_list[i] == n) return static_cast<int>(i);
        return -1;
    }
    int capture_index(int n) const {
        for (std::size_t i = 0; i < capture_n.size(); ++i)
            if (capture_n[i] == n) return static_cast<int>(i);
        return -1;
    }

    // Slope estimate at the largest n whose ESS still clears the threshold.
    std::optional<StableSlope> slope_at_largest_stable(int ia) const {
        for (std::size_t i = n_list.size(); i-- > 0;) {
            const MgfCell& c = cells[static_cast<std::size_t>(ia)][i];
            if (c.stable && std::isfinite(c.slope))
                return StableSlope{n_list[i], c.slope, c.slope_se};
        }
        return std::nullopt;
    }
};

inline MgfTable estimate_mgf(const System& sys, const MgfOptions& opt) {
    if (opt.a_grid.empty()) throw std::invalid_argument("estimate_mgf: empty a grid");
    if (opt.n_list.empty()) throw std::invalid_argument("estimate_mgf: empty n list");
    for (std::size_t i = 0; i < opt.n_list.size(); ++i) {
        if (opt.n_list[i] < 2) throw std::invalid_argument("estimate_mgf: n must be >= 2");
        if (i > 0 && opt.n_list[i] <= opt.n_list[i - 1])
            throw std::invalid_argument("estimate_mgf: n list must be strictly increasing");
    }
    if (opt.batches < 2) throw std::invalid_argument("estimate_mgf: need at least 2 batches");
    if (opt.orbits < static_cast<std::uint64_t>(opt.batches))
        throw std::invalid_argument("estimate_mgf: fewer orbits than batches");

    MgfTable t;
    t.a_grid = opt.a_grid;
    t.n_list = opt.n_list;
    t.orbits = opt.orbits;
    for (int n : opt.n_list) {
        t.capture_n.push_back(n - 1);
        t.capture_n.push_back(n);
    }
    std::sort(t.capture_n.begin(), t.capture_n.end());
    t.capture_n.erase(std::unique(t.capture_n.begin(), t.capture_n.end()), t.capture_n.end());

    const std::size_t W = t.capture_n.size();
    const int n_max = t.capture_n.back();
    const std::uint64_t N = opt.orbits;
    const std::uint64_t B = static_cast<std::uint64_t>(opt.batches);

    // Per-orbit Birkhoff sums at every capture point; NaN marks aborted orbits.
    std::vector<double> sums(N * W, kNan);
    parallel_for(N, opt.workers, [&](std::uint64_t k) {
        Rng rng = Rng::substream(opt.seed, k);
        CollisionCoord c;
        try {
            c = sample_init(sys, opt.init, rng, opt.srb);
        } catch (const std::runtime_error&) {
            return;
        }
        double acc = 0.0;
        int step = 0;
        std::size_t next = 0;
        std::vector<double> local(W);
        const bool ok = run_orbit(sys, c, n_max, [&](const CollisionRecord& rec) {
            acc += rec.s;
            ++step;
            if (next < W && step == t.capture_n[next]) local[next++] = acc;
        });
        if (ok)
            for (std::size_t i = 0; i < W; ++i) sums[k * W + i] = local[i];
    });

    std::vector<std::uint64_t> batch_kept(B, 0);
    std::uint64_t kept = 0;
    for (std::uint64_t k = 0; k < N; ++k)
        if (std::isfinite(sums[k * W])) {
            ++kept;
            ++batch_kept[k * B / N];
        }
    t.batch_kept = batch_kept;
    t.kept = kept;
    if (kept == 0) throw std::runtime_error("estimate_mgf: every orbit aborted");

    const std::size_t A = opt.a_grid.size();
    t.cells.assign(A, std::vector<MgfCell>(opt.n_list.size()));
    t.batch_log_mean.assign(A, std::vector<std::vector<double>>(W, std::vector<double>(B, kNan)));
    t.ess_all.assign(A, std::vector<double>(W, 0.0));

    std::vector<double> bsum(W * B);
    std::vector<double> tot_w(W), tot_w2(W);
    for (std::size_t ia = 0; ia < A; ++ia) {
        const double a = opt.a_grid[ia];
        std::fill(bsum.begin(), bsum.end(), 0.0);
        std::fill(tot_w.begin(), tot_w.end(), 0.0);
        std::fill(tot_w2.begin(), tot_w2.end(), 0.0);
        for (std::uint64_t k = 0; k < N; ++k) {
            if (!std::isfinite(sums[k * W])) continue;
            const std::uint64_t b = k * B / N;
            for (std::size_t i = 0; i < W; ++i) {
                const double w = std::exp(-a * sums[k * W + i]);
                bsum[i * B + b] += w;
                tot_w[i] += w;
                tot_w2[i] += w * w;
            }
        }
        for (std::size_t i = 0; i < W; ++i) {
            t.ess_all[ia][i] = tot_w2[i] > 0.0 ? tot_w[i] * tot_w[i] / tot_w2[i] : 0.0;
            for (std::uint64_t b = 0; b < B; ++b)
                if (batch_kept[b] > 0)
                    t.batch_log_mean[ia][i][b] =
                        std::log(bsum[i * B + b] / static_cast<double>(batch_kept[b]));
        }
        for (std::size_t j = 0; j < opt.n_list.size(); ++j) {
            const int n = opt.n_list[j];
            const std::size_t i1 = static_cast<std::size_t>(t.capture_index(n));
            const std::size_t i0 = static_cast<std::size_t>(t.capture_index(n - 1));
            MgfCell& cell = t.cells[ia][j];
            const double log_m1 = std::log(tot_w[i1] / static_cast<double>(kept));
            const double log_m0 = std::log(tot_w[i0] / static_cast<double>(kept));
            cell.e = log_m1 / n;
            cell.slope = log_m1 - log_m0;
            cell.ess = t.ess_all[ia][i1];
            std::vector<double> be(B), bs(B);
            for (std::uint64_t b = 0; b < B; ++b) {
                be[b] = t.batch_log_mean[ia][i1][b] / n;
                bs[b] = t.batch_log_mean[ia][i1][b] - t.batch_log_mean[ia][i0][b];
            }
            cell.e_se = detail::batch_stderr(be);
            cell.slope_se = detail::batch_stderr(bs);
            cell.stable = std::isfinite(cell.e) && std::isfinite(cell.slope) &&
                          t.ess_all[ia][i1] >= opt.ess_min && t.ess_all[ia][i0] >= opt.ess_min;
        }
    }
    return t;
}

// One mirror-pair comparison a vs 1-a.  diff should vanish: exactly in law for
// the mu0-initialized finite-n identity, asymptotically for steady slopes.
struct SymmetryRow {
    double a = 0.0;
    double a_mirror = 0.0;
    int n = 0;
    double diff = kNan;
    double se = kNan;
    bool usable = false;
    double tstat() const {
        if (!usable || !std::isfinite(diff) || !(se > 0.0)) return kNan;
        return std::abs(diff) / se;
    }
};

namespace detail {

inline std::vector<std::pair<int, int>> mirror_pairs(const MgfTable& t) {
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i < t.a_grid.size(); ++i) {
        if (t.a_grid[i] > 0.5 - 1e-12) continue;
        const int j = t.a_index(1.0 - t.a_grid[i]);
        if (j >= 0) pairs.emplace_back(static_cast<int>(i), j);
    }
    return pairs;
}

}  // namespace detail

// Finite-n residuals e_n(a) - e_n(1-a) with paired per-batch errors.
inline std::vector<SymmetryRow> transient_symmetry(const MgfTable& t) {
    std::vector<SymmetryRow> rows;
    const std::uint64_t B = t.batch_kept.size();
    for (const auto& [ia, ja] : detail::mirror_pairs(t)) {
        for (std::size_t jn = 0; jn < t.n_list.size(); ++jn) {
            const int n = t.n_list[jn];
            const std::size_t iw = static_cast<std::size_t>(t.capture_index(n));
            SymmetryRow row;
            row.a = t.a_grid[static_cast<std::size_t>(ia)];
            row.a_mirror = t.a_grid[static_cast<std::size_t>(ja)];
            row.n = n;
            row.diff = t.cells[static_cast<std::size_t>(ia)][jn].e -
                       t.cells[static_cast<std::size_t>(ja)][jn].e;
            std::vector<double> bd(B);
            for (std::uint64_t b = 0; b < B; ++b)
                bd[b] = (t.batch_log_mean[static_cast<std::size_t>(ia)][iw][b] -
                         t.batch_log_mean[static_cast<std::size_t>(ja)][iw][b]) /
                        n;
            row.se = detail::batch_stderr(bd);
            row.usable = std::isfinite(row.diff) && std::isfinite(row.se);
            rows.push_back(row);
        }
    }
    return rows;
}

// Steady-state residuals of the slope estimator at the largest n where both
// members of the pair are stable.
inline std::vector<SymmetryRow> steady_symmetry(const MgfTable& t) {
    std::vector<SymmetryRow> rows;
    const std::uint64_t B = t.batch_kept.size();
    for (const auto& [ia, ja] : detail::mirror_pairs(t)) {
        SymmetryRow row;
        row.a = t.a_grid[static_cast<std::size_t>(ia)];
        row.a_mirror = t.a_grid[static_cast<std::size_t>(ja)];
        for (std::size_t jn = t.n_list.size(); jn-- > 0;) {
            const MgfCell& ca = t.cells[static_cast<std::size_t>(ia)][jn];
            const MgfCell& cb = t.cells[static_cast<std::size_t>(ja)][jn];
            if (!(ca.stable && cb.stable)) continue;
            const int n = t.n_list[jn];
            const std::size_t i1 = static_cast<std::size_t>(t.capture_index(n));
            const std::size_t i0 = static_cast<std::size_t>(t.capture_index(n - 1));
            row.n = n;
            row.diff = ca.slope - cb.slope;
            std::vector<double> bd(B);
            for (std::uint64_t b = 0; b < B; ++b) {
                const double sa = t.batch_log_mean[static_cast<std::size_t>(ia)][i1][b] -
                                  t.batch_log_mean[static_cast<std::size_t>(ia)][i0][b];
                const double sb = t.batch_log_mean[static_cast<std::size_t>(ja)][i1][b] -
                                  t.batch_log_mean[static_cast<std::size_t>(ja)][i0][b];
                bd[b] = sa - sb;
            }
            row.se = detail::batch_stderr(bd);
            row.usable = std::isfinite(row.diff) && std::isfinite(row.se);
            break;
        }
        rows.push_back(row);
    }
    return rows;
}

// Worst paired deviation of the finite-time identity, in stderr units.  An
// exactly zero difference counts as zero even when the batch spread vanishes
// (the unforced map produces both); anything else unusable poisons the result.
inline double transient_ft_residual(const MgfTable& t) {
    double worst = 0.0;
    for (const SymmetryRow& row : transient_symmetry(t)) {
        if (row.diff == 0.0) continue;
        const double ts = row.tstat();
        if (!std::isfinite(ts)) return kNan;
        worst = std::max(worst, ts);
    }
    return worst;
}

// Legendre transform of a sampled convex rate e(a): I(z) = sup_a(-a z - e(a)),
// taken over the grid.  Errors propagate through the maximizing entry.
struct RatePoint {
    double z = 0.0;
    double value = 0.0;
    double se = 0.0;
    double a_star = 0.0;
};

struct RateFunction {
    std::vector<double> a_grid;
    std::vector<double> e;
    std::vector<double> e_se;
    double z_lo = 0.0;  // negated slope range of the grid, the usable z window
    double z_hi = 0.0;
    bool convex_warning = false;

    RatePoint at(double z) const {
        RatePoint best{z, -std::numeric_limits<double>::infinity(), kNan, kNan};
        for (std::size_t i = 0; i < a_grid.size(); ++i) {
            const double v = -a_grid[i] * z - e[i];
            if (v > best.value) {
                best.value = v;
                best.se = e_se[i];
                best.a_star = a_grid[i];
            }
        }
        return best;
    }

    std::vector<RatePoint> sample(int nz = 101) const {
        std::vector<RatePoint> out;
        if (nz < 2 || !(z_hi > z_lo)) return out;
        for (int j = 0; j < nz; ++j)
            out.push_back(at(z_lo + (z_hi - z_lo) * j / (nz - 1)));
        return out;
    }
};

inline RateFunction legendre_transform(const std::vector<double>& a_grid,
                                       const std::vector<double>& e,
                                       const std::vector<double>& e_se) {
    if (a_grid.size() < 2 || a_grid.size() != e.size() || e.size() != e_se.size())
        throw std::invalid_argument("legendre_transform: need matching grids of size >= 2");
    for (std::size_t i = 0; i + 1 < a_grid.size(); ++i)
        if (!(a_grid[i + 1] > a_grid[i]))
            throw std::invalid_argument("legendre_transform: a grid must be increasing");
    for (double v : e)
        if (!std::isfinite(v)) throw std::invalid_argument("legendre_transform: non-finite e value");

    RateFunction f;
    f.a_grid = a_grid;
    f.e = e;
    f.e_se = e_se;
    const std::size_t K = a_grid.size() - 1;
    std::vector<double> d(K), d_se(K);
    for (std::size_t k = 0; k < K; ++k) {
        const double da = a_grid[k + 1] - a_grid[k];
        d[k] = (e[k + 1] - e[k]) / da;
        const double s0 = std::isfinite(e_se[k]) ? e_se[k] : 0.0;
        const double s1 = std::isfinite(e_se[k + 1]) ? e_se[k + 1] : 0.0;
        d_se[k] = std::sqrt(s0 * s0 + s1 * s1) / da;
    }
    f.z_lo = -*std::max_element(d.begin(), d.end());
    f.z_hi = -*std::min_element(d.begin(), d.end());
    for (std::size_t k = 0; k + 1 < K; ++k)
        if (d[k + 1] < d[k] - 3.0 * (d_se[k] + d_se[k + 1]) - 1e-12) f.convex_warning = true;
    return f;
}

// max |e(a) - e(1-a)| over mirror pairs of the grid; bounds the defect
// |I(z) - I(-z) + z| whenever the grid is closed under a -> 1 - a.
struct SymmetricBound {
    double bound = 0.0;
    bool grid_closed = true;
};

inline SymmetricBound symmetric_pair_bound(const RateFunction& f) {
    SymmetricBound out;
    for (std::size_t i = 0; i < f.a_grid.size(); ++i) {
        int j = -1;
        for (std::size_t l = 0; l < f.a_grid.size(); ++l)
            if (std::abs(f.a_grid[l] - (1.0 - f.a_grid[i])) < 1e-12) j = static_cast<int>(l);
        if (j < 0) {
            out.grid_closed = false;
            continue;
        }
        out.bound = std::max(out.bound, std::abs(f.e[i] - f.e[static_cast<std::size_t>(j)]));
    }
    return out;
}

struct GcDefectRow {
    double z = 0.0;
    double defect = 0.0;  // I(z) - I(-z) + z
    double se = 0.0;
};

inline std::vector<GcDefectRow> gc_defect(const RateFunction& f, int nz = 21) {
    std::vector<GcDefectRow> rows;
    const double z_m = 0.95 * std::min(f.z_hi, -f.z_lo);
    if (!(z_m > 0.0)) return rows;
    for (int j = 1; j <= nz; ++j) {
        const double z = z_m * j / nz;
        const RatePoint p = f.at(z);
        const RatePoint q = f.at(-z);
        const double sp = std::isfinite(p.se) ? p.se : 0.0;
        const double sq = std::isfinite(q.se) ? q.se : 0.0;
        rows.push_back({z, p.value - q.value + z, std::sqrt(sp * sp + sq * sq)});
    }
    return rows;
}

// Histogram estimate of the fluctuation ratio: bins S_n/n symmetrically about
// zero and regresses (1/n) log(count(+z)/count(-z)) through the origin.
struct GcOptions {
    std::uint64_t orbits = 1000000;
    int n = 30;
    InitDistribution init = InitDistribution::Srb;
    SrbOptions srb{};
    double bin_width = 0.0;  // 0 picks sd/4 of the observed S_n/n
    std::uint64_t min_count = 50;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct GcRow {
    double z = 0.0;
    double log_ratio_rate = 0.0;  // (1/n) log(count_pos/count_neg)
    double weight = 0.0;
    std::uint64_t count_pos = 0;
    std::uint64_t count_neg = 0;
};

struct GcResult {
    double slope = kNan;
    double slope_se = kNan;
    double bin_width = 0.0;
    double mean_rate = kNan;  // mean of S_n/n, the entropy production rate
    double mean_rate_se = kNan;
    std::vector<GcRow> rows;
    std::uint64_t kept = 0;
    std::uint64_t discarded = 0;
};

inline GcResult gc_ratio(const System& sys, const GcOptions& opt) {
    if (opt.n < 1) throw std::invalid_argument("gc_ratio: n must be positive");
    const std::uint64_t N = opt.orbits;
    std::vector<double> rate(N, kNan);
    parallel_for(N, opt.workers, [&](std::uint64_t k) {
        Rng rng = Rng::substream(opt.seed, k);
        CollisionCoord c;
        try {
            c = sample_init(sys, opt.init, rng, opt.srb);
        } catch (const std::runtime_error&) {
            return;
        }
        double acc = 0.0;
        if (run_orbit(sys, c, opt.n, [&](const CollisionRecord& rec) { acc += rec.s; }))
            rate[k] = acc / opt.n;
    });

    GcResult out;
    std::vector<double> vals;
    vals.reserve(N);
    for (double v : rate)
        if (std::isfinite(v)) vals.push_back(v);
    out.kept = vals.size();
    out.discarded = N - out.kept;
    if (vals.size() < 2) throw std::runtime_error("gc_ratio: too few surviving orbits");

    const detail::MeanSd ms = detail::mean_sd(vals);
    out.mean_rate = ms.mean;
    out.mean_rate_se = ms.sd / std::sqrt(static_cast<double>(ms.count));
    out.bin_width = opt.bin_width > 0.0 ? opt.bin_width : ms.sd / 4.0;
    if (!(out.bin_width > 0.0)) throw std::runtime_error("gc_ratio: degenerate histogram width");

    double vmax = 0.0;
    for (double v : vals) vmax = std::max(vmax, std::abs(v));
    const long kmax = static_cast<long>(std::floor(vmax / out.bin_width)) + 1;
    std::vector<std::uint64_t> count(static_cast<std::size_t>(2 * kmax), 0);
    for (double v : vals) {
        const long kbin = static_cast<long>(std::floor(v / out.bin_width));
        ++count[static_cast<std::size_t>(kbin + kmax)];
    }

    double swyz = 0.0, swzz = 0.0;
    for (long kbin = 0; kbin < kmax; ++kbin) {
        const std::uint64_t cp = count[static_cast<std::size_t>(kbin + kmax)];
        const std::uint64_t cn = count[static_cast<std::size_t>(-kbin - 1 + kmax)];
        if (cp < opt.min_count || cn < opt.min_count) continue;
        GcRow row;
        row.z = (kbin + 0.5) * out.bin_width;
        row.count_pos = cp;
        row.count_neg = cn;
        row.log_ratio_rate = std::log(static_cast<double>(cp) / static_cast<double>(cn)) / opt.n;
        row.weight = static_cast<double>(opt.n) * opt.n /
                     (1.0 / static_cast<double>(cp) + 1.0 / static_cast<double>(cn));
        swyz += row.weight * row.log_ratio_rate * row.z;
        swzz += row.weight * row.z * row.z;
        out.rows.push_back(row);
    }
    if (swzz > 0.0) {
        out.slope = swyz / swzz;
        out.slope_se = 1.0 / std::sqrt(swzz);
    }
    return out;
}

// Green-Kubo diffusion coefficient of s: truncated autocovariance sum and the
// batch-means variance of orbit averages, each with block stderr.
struct GkOptions {
    std::uint64_t orbits = 20000;
    int length = 300;
    int j_max = 50;
    InitDistribution init = InitDistribution::Srb;
    SrbOptions srb{};
    int batches = 30;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct GkResult {
    double mean_s = kNan;
    std::vector<double> autocov;     // lags 0..j_max
    std::vector<double> autocov_se;
    double sigma2_sum = kNan;  // autocov[0] + 2 * sum of later lags
    double sigma2_sum_se = kNan;
    double sigma2_batch = kNan;  // length * variance of orbit means
    double sigma2_batch_se = kNan;
    bool undecayed_warning = false;  // tail lag still resolved away from zero
    std::uint64_t kept = 0;
    std::uint64_t discarded = 0;
};

inline GkResult green_kubo(const System& sys, const GkOptions& opt) {
    if (opt.length < 2 || opt.j_max < 1 || opt.j_max >= opt.length)
        throw std::invalid_argument("green_kubo: need 1 <= j_max < length");
    if (opt.batches < 2) throw std::invalid_argument("green_kubo: need at least 2 batches");
    const std::uint64_t N = opt.orbits;
    const std::size_t L = static_cast<std::size_t>(opt.length);
    std::vector<double> series(N * L, kNan);
    parallel_for(N, opt.workers, [&](std::uint64_t k) {
        Rng rng = Rng::substream(opt.seed, k);
        CollisionCoord c;
        try {
            c = sample_init(sys, opt.init, rng, opt.srb);
        } catch (const std::runtime_error&) {
            return;
        }
        std::size_t i = 0;
        std::vector<double> local(L);
        if (run_orbit(sys, c, opt.length, [&](const CollisionRecord& rec) { local[i++] = rec.s; }))
            std::copy(local.begin(), local.end(), series.begin() + static_cast<long>(k * L));
    });

    GkResult out;
    const std::uint64_t B = static_cast<std::uint64_t>(opt.batches);
    std::vector<std::uint64_t> batch_kept(B, 0);
    double total = 0.0;
    for (std::uint64_t k = 0; k < N; ++k) {
        if (!std::isfinite(series[k * L])) continue;
        ++batch_kept[k * B / N];
        ++out.kept;
        for (std::size_t i = 0; i < L; ++i) total += series[k * L + i];
    }
    out.discarded = N - out.kept;
    if (out.kept < B) throw std::runtime_error("green_kubo: too few surviving orbits");
    const double m = total / (static_cast<double>(out.kept) * static_cast<double>(L));
    out.mean_s = m;

    const std::size_t J = static_cast<std::size_t>(opt.j_max);
    std::vector<double> gsum(B * (J + 1), 0.0);
    std::vector<double> bm_sum(B, 0.0), bm_ss(B, 0.0);
    for (std::uint64_t k = 0; k < N; ++k) {
        if (!std::isfinite(series[k * L])) continue;
        const std::uint64_t b = k * B / N;
        const double* s = &series[k * L];
        for (std::size_t j = 0; j <= J; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i + j < L; ++i) acc += (s[i] - m) * (s[i + j] - m);
            gsum[b * (J + 1) + j] += acc;
        }
        double om = 0.0;
        for (std::size_t i = 0; i < L; ++i) om += s[i];
        om /= static_cast<double>(L);
        bm_sum[b] += om;
        bm_ss[b] += om * om;
    }

    out.autocov.assign(J + 1, kNan);
    out.autocov_se.assign(J + 1, kNan);
    std::vector<double> batch_sigma2(B, kNan);
    std::vector<double> batch_gamma(B);
    for (std::size_t j = 0; j <= J; ++j) {
        double g = 0.0;
        for (std::uint64_t b = 0; b < B; ++b) {
            const double cnt = static_cast<double>(batch_kept[b]) * static_cast<double>(L - j);
            batch_gamma[b] = batch_kept[b] > 0 ? gsum[b * (J + 1) + j] / cnt : kNan;
            g += gsum[b * (J + 1) + j];
        }
        out.autocov[j] = g / (static_cast<double>(out.kept) * static_cast<double>(L - j));
        out.autocov_se[j] = detail::batch_stderr(batch_gamma);
        for (std::uint64_t b = 0; b < B; ++b) {
            if (batch_kept[b] == 0) continue;
            if (j == 0)
                batch_sigma2[b] = batch_gamma[b];
            else
                batch_sigma2[b] += 2.0 * batch_gamma[b];
        }
    }
    out.sigma2_sum = out.autocov[0];
    for (std::size_t j = 1; j <= J; ++j) out.sigma2_sum += 2.0 * out.autocov[j];
    out.sigma2_sum_se = detail::batch_stderr(batch_sigma2);
    out.undecayed_warning =
        std::isfinite(out.autocov_se[J]) && std::abs(out.autocov[J]) > 3.0 * out.autocov_se[J];

    std::vector<double> batch_bm(B, kNan);
    double vsum = 0.0, vss = 0.0;
    for (std::uint64_t b = 0; b < B; ++b) {
        vsum += bm_sum[b];
        vss += bm_ss[b];
        if (batch_kept[b] >= 2) {
            const double nb = static_cast<double>(batch_kept[b]);
            const double mb = bm_sum[b] / nb;
            batch_bm[b] = static_cast<double>(L) * (bm_ss[b] - nb * mb * mb) / (nb - 1.0);
        }
    }
    const double nk = static_cast<double>(out.kept);
    const double mk = vsum / nk;
    out.sigma2_batch = static_cast<double>(L) * (vss - nk * mk * mk) / (nk - 1.0);
    out.sigma2_batch_se = detail::batch_stderr(batch_bm);
    return out;
}

// Mean production rate against the small-field expansion: the steady-state
// average of s per step should match -eps * mu0(H) up to o(eps), with
// H = (J - 1)/eps evaluated on fresh mu0 samples at the same field.
struct MeanRateOptions {
    std::vector<double> eps_list = {0.1, 0.05, 0.025};
    std::uint64_t orbits = 100000;
    int length = 50;
    SrbOptions srb{};
    std::uint64_t h_samples = 1000000;
    std::uint64_t seed = 1;
    int workers = 1;
};

struct MeanRateRow {
    double eps = 0.0;
    double mean_s = kNan;  // per-step steady-state entropy production
    double mean_s_se = kNan;
    double mu0_h = kNan;
    double mu0_h_se = kNan;
    double delta = kNan;  // |mean_s + eps * mu0_h|
    double delta_se = kNan;
    std::uint64_t discarded = 0;
};

inline std::vector<MeanRateRow> mean_entropy_rate(const System& proto, const MeanRateOptions& opt) {
    const auto* cf = std::get_if<ConstantField>(&proto.force);
    if (cf == nullptr || !(norm(cf->field) > 0.0))
        throw std::invalid_argument("mean_entropy_rate: needs a nonzero constant field");
    const Vec2 dir = (1.0 / norm(cf->field)) * cf->field;

    std::vector<MeanRateRow> rows;
    for (double eps : opt.eps_list) {
        System sys = proto;
        sys.force = ConstantField{eps * dir};
        MeanRateRow row;
        row.eps = eps;

        const std::uint64_t N = opt.orbits;
        std::vector<double> orbit_mean(N, kNan);
        parallel_for(N, opt.workers, [&](std::uint64_t k) {
            Rng rng = Rng::substream(opt.seed, k);
            CollisionCoord c;
            try {
                c = sample_srb(sys, rng, opt.srb);
            } catch (const std::runtime_error&) {
                return;
            }
            double acc = 0.0;
            if (run_orbit(sys, c, opt.length, [&](const CollisionRecord& rec) { acc += rec.s; }))
                orbit_mean[k] = acc / opt.length;
        });
        std::vector<double> om;
        om.reserve(N);
        for (double v : orbit_mean)
            if (std::isfinite(v)) om.push_back(v);
        row.discarded += N - om.size();
        const detail::MeanSd ms = detail::mean_sd(om);
        row.mean_s = ms.mean;
        row.mean_s_se = ms.sd / std::sqrt(static_cast<double>(ms.count));

        const std::uint64_t M = opt.h_samples;
        std::vector<double> hvals(M, kNan);
        parallel_for(M, opt.workers, [&](std::uint64_t j) {
            Rng rng = Rng::substream(opt.seed, N + j);
            const CollisionCoord c = sample_mu0(sys.table, rng);
            try {
                hvals[j] = h_value(sys, billiard_map(sys, c).record);
            } catch (const FlightError&) {
            }
        });
        std::vector<double> hv;
        hv.reserve(M);
        for (double v : hvals)
            if (std::isfinite(v)) hv.push_back(v);
        row.discarded += M - hv.size();
        const detail::MeanSd hs = detail::mean_sd(hv);
        row.mu0_h = hs.mean;
        row.mu0_h_se = hs.sd / std::sqrt(static_cast<double>(hs.count));

        row.delta = std::abs(row.mean_s + eps * row.mu0_h);
        row.delta_se =
            std::sqrt(row.mean_s_se * row.mean_s_se + eps * eps * row.mu0_h_se * row.mu0_h_se);
        rows.push_back(row);
    }
    return rows;
}

// Kolmogorov-Smirnov distance of a sample against the uniform law on [lo, hi].
inline double ks_uniform(std::vector<double> v, double lo, double hi) {
    if (v.empty() || !(hi > lo)) throw std::invalid_argument("ks_uniform: bad input");
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = std::clamp((v[i] - lo) / (hi - lo), 0.0, 1.0);
        d = std::max(d, std::max(f - static_cast<double>(i) / n,
                                 static_cast<double>(i + 1) / n - f));
    }
    return d;
}

// Pushes mu0 samples through one collision step and reports KS distances of
// the image marginals against the mu0 marginals, plus the largest |s| seen.
struct PushforwardKs {
    double ks_sin_phi = kNan;  // sin(phi') against uniform[-1,1]
    double ks_arclength = kNan;  // boundary position against its uniform law
    double max_abs_s = 0.0;
    std::uint64_t kept = 0;
    std::uint64_t discarded = 0;
};

inline PushforwardKs mu0_pushforward_ks(const System& sys, std::uint64_t n, std::uint64_t seed,
                                        int workers) {
    std::vector<double> sin_phi(n, kNan), arc(n, kNan), abs_s(n, 0.0);
    std::vector<double> offset(sys.table.scatterers.size(), 0.0);
    for (std::size_t i = 1; i < offset.size(); ++i)
        offset[i] = offset[i - 1] + sys.table.scatterers[i - 1].circumference();
    const double total_len = sys.table.total_boundary_length();
    parallel_for(n, workers, [&](std::uint64_t k) {
        Rng rng = Rng::substream(seed, k);
        const CollisionCoord c = sample_mu0(sys.table, rng);
        try {
            const StepResult res = billiard_map(sys, c);
            sin_phi[k] = std::sin(res.to.phi);
            arc[k] = (offset[static_cast<std::size_t>(res.to.scatterer)] + res.to.r) / total_len;
            abs_s[k] = std::abs(res.record.s);
        } catch (const FlightError&) {
        }
    });
    PushforwardKs out;
    std::vector<double> vs, va;
    for (std::uint64_t k = 0; k < n; ++k) {
        if (!std::isfinite(sin_phi[k])) continue;
        vs.push_back(sin_phi[k]);
        va.push_back(arc[k]);
        out.max_abs_s = std::max(out.max_abs_s, abs_s[k]);
    }
    out.kept = vs.size();
    out.discarded = n - out.kept;
    if (out.kept == 0) throw std::runtime_error("mu0_pushforward_ks: every sample aborted");
    out.ks_sin_phi = ks_uniform(vs, -1.0, 1.0);
    out.ks_arclength = ks_uniform(va, 0.0, 1.0);
    return out;
}

}  // namespace lorentz
