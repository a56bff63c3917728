#pragma once

// Entropy production observable and its independent Jacobian cross-checks.
//
// The per-step entropy production is s = -log J, where J is the Jacobian of
// the collision map with respect to the invariant measure cos(phi) dr dphi of
// the force-free billiard.  The map step already factors J into a flow part
// (the quadrature of d(kappa)/d(theta)) and a twist part; this header adds
//   * h_value: the normalized observable H = (J - 1) / eps, which stays O(1)
//     as the force size eps shrinks,
//   * log_jac_fd: a finite-difference evaluation of log J straight from the
//     definition (differentiating the map in (r, phi)), sharing no code with
//     the quadrature route.

#include <cmath>
#include <optional>
#include <vector>

#include "lorentz/dynamics.hpp"

namespace lorentz {

struct LogJacobianBreakdown {
    double flow = 0.0;
    double twist = 0.0;
    double total = 0.0;
    double s = 0.0;
};

inline LogJacobianBreakdown log_jacobian(const System& sys, const CollisionCoord& c) {
    const CollisionRecord rec = billiard_map(sys, c).record;
    return {rec.log_jac_flow, rec.log_jac_twist, rec.log_jac_total, rec.s};
}

inline double entropy_production(const System& sys, const CollisionCoord& c) {
    return billiard_map(sys, c).record.s;
}

// H = (J - 1) / eps for a step record; zero by convention at zero force.
inline double h_value(const System& sys, const CollisionRecord& rec) {
    const double eps = force_epsilon(sys.force);
    if (eps == 0.0) return 0.0;
    return std::expm1(rec.log_jac_total) / eps;
}

struct FdOptions {
    double h = 1e-6;          // perturbation in (r, phi)
    int steps = 1;            // differentiate the `steps`-fold composed map
    double window = 0.05;     // itinerary gate: perturbed images must stay this close
};

namespace detail {

struct FdProbe {
    std::vector<int> itinerary;
    CollisionCoord end;
    bool ok = false;
};

inline FdProbe fd_probe(const System& sys, CollisionCoord c, int steps) {
    FdProbe probe;
    try {
        for (int k = 0; k < steps; ++k) {
            const StepResult res = billiard_map(sys, c);
            c = res.to;
            probe.itinerary.push_back(c.scatterer);
        }
    } catch (const FlightError&) {
        return probe;
    }
    probe.end = c;
    probe.ok = true;
    return probe;
}

}  // namespace detail

// Finite-difference log Jacobian of the composed map at c.  Returns nothing
// when the 5-point stencil straddles a singularity line (different itinerary,
// a grazing abort, or images further apart than the window), in which case a
// derivative estimate would be meaningless.
inline std::optional<double> log_jac_fd(const System& sys, const CollisionCoord& c,
                                        const FdOptions& opt = {}) {
    const double h = opt.h;
    if (kPiHalf - std::abs(c.phi) <= 2.0 * h) return std::nullopt;

    const detail::FdProbe center = detail::fd_probe(sys, c, opt.steps);
    if (!center.ok) return std::nullopt;

    const double circ =
        sys.table.scatterers[static_cast<std::size_t>(c.scatterer)].circumference();
    auto shifted = [&](double dr, double dphi) {
        CollisionCoord p = c;
        p.r = p.r + dr;
        p.r -= circ * std::floor(p.r / circ);
        p.phi += dphi;
        return detail::fd_probe(sys, p, opt.steps);
    };

    const detail::FdProbe rp = shifted(h, 0.0), rm = shifted(-h, 0.0);
    const detail::FdProbe pp = shifted(0.0, h), pm = shifted(0.0, -h);

    const double end_circ =
        sys.table.scatterers[static_cast<std::size_t>(center.end.scatterer)].circumference();
    auto admissible = [&](const detail::FdProbe& p) {
        if (!p.ok || p.itinerary != center.itinerary) return false;
        const double dr =
            end_circ * std::abs(torus_mindelta1((p.end.r - center.end.r) / end_circ));
        return dr <= opt.window && std::abs(p.end.phi - center.end.phi) <= opt.window;
    };
    if (!admissible(rp) || !admissible(rm) || !admissible(pp) || !admissible(pm))
        return std::nullopt;

    auto rdiff = [&](const CollisionCoord& a, const CollisionCoord& b) {
        return end_circ * torus_mindelta1((a.r - b.r) / end_circ);
    };
    const double drr = rdiff(rp.end, rm.end) / (2.0 * h);
    const double dpr = (rp.end.phi - rm.end.phi) / (2.0 * h);
    const double drp = rdiff(pp.end, pm.end) / (2.0 * h);
    const double dpp = (pp.end.phi - pm.end.phi) / (2.0 * h);

    const double det = drr * dpp - drp * dpr;
    const double density = std::cos(center.end.phi) / std::cos(c.phi);
    return std::log(std::abs(det) * density);
}

}  // namespace lorentz
