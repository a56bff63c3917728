#pragma once

// Scatterer table on the unit torus and boundary coordinates.
//
// Conventions used throughout:
//   * A scatterer is a closed disk; the billiard domain is the torus minus the
//     open disks.  Disks must stay pairwise disjoint under every torus
//     translate, and a radius must be < 1/2 so a disk cannot meet its own
//     images.
//   * Boundary arclength r on a disk of radius R runs clockwise, starting on
//     the +x axis through the center:  position(r) = center + R * (cos(-r/R),
//     sin(-r/R)), r in [0, 2*pi*R).
//   * The outward normal at r is (cos(-r/R), sin(-r/R)); the reference tangent
//     is the clockwise one, i.e. the normal rotated 90 degrees clockwise.
//   * An outgoing direction at the boundary is written as
//       v = cos(phi) * normal + sin(phi) * tangent,  phi in [-pi/2, pi/2],
//     so phi = 0 leaves along the normal and phi > 0 leans toward the
//     clockwise tangent.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lorentz/rng.hpp"
#include "lorentz/torus.hpp"
#include "lorentz/vec2.hpp"

namespace lorentz {

inline constexpr double kPi = 3.14159265358979323846;

struct Scatterer {
    Vec2 center;    // wrapped into [0,1)^2
    double radius = 0.0;

    double circumference() const { return 2.0 * kPi * radius; }
};

struct TableConfig {
    std::vector<Scatterer> scatterers;

    double total_boundary_length() const {
        double len = 0.0;
        for (const auto& s : scatterers) len += s.circumference();
        return len;
    }
};

// Two-disk table with a finite horizon; the standard configuration for runs.
inline TableConfig default_table() {
    return TableConfig{{Scatterer{{0.0, 0.0}, 0.4}, Scatterer{{0.5, 0.5}, 0.2}}};
}

struct BoundaryFrame {
    Vec2 position;  // wrapped into [0,1)^2
    Vec2 normal;    // outward unit normal
    Vec2 tangent;   // clockwise unit tangent
};

inline BoundaryFrame boundary_point(const Scatterer& s, double r) {
    const double psi = -r / s.radius;
    const Vec2 n{std::cos(psi), std::sin(psi)};
    return {torus_wrap(s.center + s.radius * n), n, perp_cw(n)};
}

// Arclength coordinate in [0, 2*pi*R) of a boundary position given as the
// outward normal direction at that position.
inline double arc_from_normal(const Scatterer& s, Vec2 n) {
    const double psi = std::atan2(n.y, n.x);
    double r = -psi * s.radius;
    const double c = s.circumference();
    r -= c * std::floor(r / c);
    if (r >= c) r -= c;
    return r;
}

// Lists every violated table precondition; an empty result means the table is
// admissible.  Overlap is checked against all torus translates.
inline std::vector<std::string> validate_table(const TableConfig& table) {
    std::vector<std::string> violations;
    const auto& sc = table.scatterers;
    for (std::size_t i = 0; i < sc.size(); ++i) {
        if (!(sc[i].radius > 0.0))
            violations.push_back("scatterer " + std::to_string(i) + ": nonpositive radius");
        else if (!(sc[i].radius < 0.5))
            violations.push_back("scatterer " + std::to_string(i) +
                                 ": radius must be < 0.5 to avoid self-overlap across the torus");
    }
    for (std::size_t i = 0; i < sc.size(); ++i) {
        for (std::size_t j = i; j < sc.size(); ++j) {
            if (sc[i].radius <= 0.0 || sc[j].radius <= 0.0) continue;
            // Distance to the nearest translate; for i == j the relevant
            // translates are the nonzero ones, at distance >= 1 - |min image|.
            if (i == j) continue;  // covered by the radius < 0.5 check
            const double d = torus_distance(sc[i].center, sc[j].center);
            if (d <= sc[i].radius + sc[j].radius)
                violations.push_back("scatterer overlap: disks " + std::to_string(i) + " and " +
                                     std::to_string(j));
        }
    }
    return violations;
}

struct RayHit {
    double t = 0.0;       // distance along the ray
    int scatterer = -1;   // index into table.scatterers
};

// First intersection of the straight ray p + t*v (|v| = 1, t > t_min) with any
// scatterer image, searching image cells in rings of increasing Chebyshev
// radius.  Returns nothing if no hit occurs within max_len.
inline std::optional<RayHit> ray_first_hit(const TableConfig& table, Vec2 p, Vec2 v,
                                           double t_min, double max_len) {
    double best_t = max_len;
    int best_id = -1;
    const int k_max = static_cast<int>(std::ceil(max_len)) + 1;
    for (int k = 0; k <= k_max; ++k) {
        // Any center in ring k is at distance >= k - 1 from p, so once the
        // current best hit is closer than the ring can reach we can stop.
        if (best_id >= 0 && best_t <= static_cast<double>(k) - 1.5) break;
        for (int m = -k; m <= k; ++m) {
            for (int n = -k; n <= k; ++n) {
                if (std::max(std::abs(m), std::abs(n)) != k) continue;
                for (std::size_t i = 0; i < table.scatterers.size(); ++i) {
                    const Scatterer& s = table.scatterers[i];
                    const Vec2 q{s.center.x + m, s.center.y + n};
                    const Vec2 w = p - q;
                    const double b = dot(v, w);
                    const double c = norm2(w) - s.radius * s.radius;
                    const double disc = b * b - c;
                    if (disc < 0.0) continue;
                    const double t = -b - std::sqrt(disc);
                    if (t > t_min && t < best_t) {
                        best_t = t;
                        best_id = static_cast<int>(i);
                    }
                }
            }
        }
    }
    if (best_id < 0) return std::nullopt;
    return RayHit{best_t, best_id};
}

struct HorizonScan {
    double max_free_path = 0.0;
    double min_free_path = 0.0;
    bool infinite_horizon = false;
    std::uint64_t escaped_rays = 0;
    std::uint64_t n_rays = 0;
};

// Monte Carlo bound on the free path: casts straight rays from boundary points
// drawn uniformly in (arclength, outgoing angle).  A single escape past
// max_len flags an infinite horizon.  An empty table is trivially infinite.
inline HorizonScan horizon_scan(const TableConfig& table, std::uint64_t n_rays,
                                double max_len, std::uint64_t seed = 0x5ca71e5) {
    HorizonScan scan;
    scan.n_rays = n_rays;
    if (table.scatterers.empty() || n_rays == 0) {
        scan.infinite_horizon = true;
        scan.max_free_path = max_len;
        return scan;
    }
    const double total_len = table.total_boundary_length();
    double max_t = 0.0;
    double min_t = max_len;
    for (std::uint64_t ray = 0; ray < n_rays; ++ray) {
        Rng rng = Rng::substream(seed, ray);
        double pick = rng.next_double() * total_len;
        std::size_t id = 0;
        while (id + 1 < table.scatterers.size() &&
               pick >= table.scatterers[id].circumference()) {
            pick -= table.scatterers[id].circumference();
            ++id;
        }
        const Scatterer& s = table.scatterers[id];
        const double r = rng.next_double() * s.circumference();
        const double phi = rng.next_range(-kPi / 2.0, kPi / 2.0);
        const BoundaryFrame f = boundary_point(s, r);
        const Vec2 v = std::cos(phi) * f.normal + std::sin(phi) * f.tangent;
        const auto hit = ray_first_hit(table, f.position, v, 1e-9, max_len);
        if (!hit) {
            scan.infinite_horizon = true;
            ++scan.escaped_rays;
            max_t = max_len;
            continue;
        }
        max_t = std::max(max_t, hit->t);
        min_t = std::min(min_t, hit->t);
    }
    scan.max_free_path = max_t;
    scan.min_free_path = std::min(min_t, max_t);
    return scan;
}

}  // namespace lorentz
