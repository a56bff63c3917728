#pragma once

// Collision map of the periodic Lorentz gas under a weak thermostatted force.
//
// A state between collisions is a unit-speed particle at a torus position with
// direction theta.  Collisions are elastic reflections off the scatterers,
// optionally followed by a boundary twist of the outgoing angle.  The map
// recorded here acts on collision coordinates (scatterer, r, phi), see
// geometry.hpp for the conventions.
//
// Each step also accumulates the data the entropy observable needs:
//   * tau, the flight time,
//   * dq, the unwrapped displacement (winding included),
//   * the integral of d(kappa)/d(theta) along the flight, which is the log
//     Jacobian of the flight map with respect to the measure cos(phi) dr dphi,
//   * the twist contribution to that Jacobian.
// The per-step entropy production is s = -(flow + twist) log Jacobian.
//
// Flights integrate with fixed-step RK4.  The quadrature above is integrated
// as an extra RK4 component, so for a constant field E the identity
// curv_integral = -E . dq holds to rounding at any step size.  Collisions are
// located by a safeguarded Newton/bisection refinement of the signed distance
// to the scatterer union along the last step.  Zero-force flights skip the
// integrator entirely and use exact ray-circle intersections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>

#include "lorentz/force.hpp"
#include "lorentz/geometry.hpp"
#include "lorentz/torus.hpp"
#include "lorentz/vec2.hpp"

namespace lorentz {

struct FlightParams {
    double step = 1e-3;             // RK4 base step; tau_min/20 caps it for exotic tables
    double event_tol = 1e-12;       // |signed distance| accepted at a collision
    double grazing_cut = 1e-9;      // reject collisions with |phi| > pi/2 - grazing_cut
    double max_flight_time = 20.0;  // flights longer than this abort the orbit
};

struct System {
    TableConfig table;
    ForceModel force;
    TwistModel twist;
    FlightParams flight;
};

inline System make_system(TableConfig table, ForceModel force, TwistModel twist = IdentityTwist{},
                          FlightParams flight = FlightParams{}) {
    return System{std::move(table), std::move(force), std::move(twist), flight};
}

struct CollisionCoord {
    int scatterer = 0;
    double r = 0.0;    // arclength in [0, circumference)
    double phi = 0.0;  // outgoing angle in (-pi/2, pi/2)
};

// Time reversal on collision coordinates.
inline CollisionCoord involution(CollisionCoord c) {
    c.phi = -c.phi;
    return c;
}

// Distance between collision coordinates: wrapped arclength offset plus angle
// offset; points on different scatterers are infinitely far apart.
inline double coord_distance(const TableConfig& table, const CollisionCoord& a,
                             const CollisionCoord& b) {
    if (a.scatterer != b.scatterer) return 1e300;
    const double c = table.scatterers[static_cast<std::size_t>(a.scatterer)].circumference();
    double dr = std::abs(a.r - b.r);
    dr = std::min(dr, c - dr);
    return dr + std::abs(a.phi - b.phi);
}

struct FlowState {
    Vec2 position;       // wrapped into [0,1)^2
    double theta = 0.0;  // direction angle
    long wx = 0;         // winding counters (integer torus cell of the lift)
    long wy = 0;
    double p = 1.0;      // speed, held at 1 by the thermostat
};

struct CollisionRecord {
    CollisionCoord from;
    CollisionCoord to;
    double tau = 0.0;
    Vec2 dq;                     // unwrapped displacement of the flight
    double curv_integral = 0.0;  // integral of d(kappa)/d(theta) dt along the flight
    double log_jac_flow = 0.0;
    double log_jac_twist = 0.0;
    double log_jac_total = 0.0;
    double s = 0.0;  // entropy production of the step
};

enum class FlightFault { Grazing, HorizonViolation, Penetration };

class FlightError : public std::runtime_error {
  public:
    FlightError(FlightFault kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    FlightFault kind() const { return kind_; }

  private:
    FlightFault kind_;
};

// Post-collision flow state for a collision coordinate.
inline FlowState lift(const System& sys, const CollisionCoord& c) {
    const Scatterer& s = sys.table.scatterers.at(static_cast<std::size_t>(c.scatterer));
    const BoundaryFrame f = boundary_point(s, c.r);
    const Vec2 v = std::cos(c.phi) * f.normal + std::sin(c.phi) * f.tangent;
    return FlowState{f.position, std::atan2(v.y, v.x), 0, 0, 1.0};
}

struct Proximity {
    double d = 0.0;
    int id = -1;
};

// Signed distance from p to the scatterer union (negative inside), optionally
// ignoring one scatterer.  Radii below 1/2 make the torus minimal image the
// only candidate for each disk.
inline Proximity signed_distance(const TableConfig& table, Vec2 p, int skip = -1) {
    Proximity best{1e300, -1};
    for (std::size_t i = 0; i < table.scatterers.size(); ++i) {
        if (static_cast<int>(i) == skip) continue;
        const Scatterer& s = table.scatterers[i];
        const double d = torus_distance(p, s.center) - s.radius;
        if (d < best.d) best = {d, static_cast<int>(i)};
    }
    return best;
}

struct FlightOutcome {
    FlowState end;          // on the boundary of the hit scatterer, incoming
    int hit = -1;           // scatterer index
    double tau = 0.0;
    Vec2 dq;                // unwrapped displacement
    double curv_integral = 0.0;
};

namespace detail {

struct Deriv {
    double dx, dy, dtheta, di;
};

struct ConstantDeriv {
    double e1, e2;
    Deriv operator()(Vec2, double theta) const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        return {c, s, -e1 * s + e2 * c, -e1 * c - e2 * s};
    }
};

struct CustomDeriv {
    const CustomField* f;
    Deriv operator()(Vec2 u, double theta) const {
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const Vec2 pos = torus_wrap({u.x, u.y});
        const Vec2 F = f->force(pos, theta);
        return {c, s, -F.x * s + F.y * c, f->dkappa_dtheta(pos, theta)};
    }
};

struct IntState {
    Vec2 u;           // unwrapped position
    double theta;
    double integral;  // running quadrature of d(kappa)/d(theta)
};

template <class DerivFn>
inline IntState rk4_step(const DerivFn& fn, const IntState& s, double h) {
    const Deriv k1 = fn(s.u, s.theta);
    const Deriv k2 = fn({s.u.x + 0.5 * h * k1.dx, s.u.y + 0.5 * h * k1.dy},
                        s.theta + 0.5 * h * k1.dtheta);
    const Deriv k3 = fn({s.u.x + 0.5 * h * k2.dx, s.u.y + 0.5 * h * k2.dy},
                        s.theta + 0.5 * h * k2.dtheta);
    const Deriv k4 = fn({s.u.x + h * k3.dx, s.u.y + h * k3.dy}, s.theta + h * k3.dtheta);
    const double w = h / 6.0;
    return {{s.u.x + w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
             s.u.y + w * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy)},
            s.theta + w * (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta),
            s.integral + w * (k1.di + 2.0 * k2.di + 2.0 * k3.di + k4.di)};
}

// Locates the zero of the signed distance inside the step (prev, prev + h],
// given that the distance is positive at prev and negative at the end.
// Safeguarded Newton on the flight time, bisection fallback.
template <class DerivFn>
inline IntState refine_event(const DerivFn& fn, const TableConfig& table, const IntState& prev,
                             double h, int skip, double event_tol, double* alpha_out, int* hit_out) {
    double lo = 0.0;
    double hi = h;
    double alpha = h;
    IntState cand = rk4_step(fn, prev, h);
    for (int iter = 0; iter < 200; ++iter) {
        const Vec2 pw = torus_wrap(cand.u);
        const Proximity prox = signed_distance(table, pw, skip);
        if (std::abs(prox.d) <= event_tol) {
            *alpha_out = alpha;
            *hit_out = prox.id;
            return cand;
        }
        if (prox.d > 0.0)
            lo = alpha;
        else
            hi = alpha;
        // Newton step using d(dist)/dt = v . n at the current candidate.
        const Scatterer& s = table.scatterers[static_cast<std::size_t>(prox.id)];
        const Vec2 disp = torus_displacement(pw, s.center);
        const double dn = norm(disp);
        const double ddot =
            (std::cos(cand.theta) * disp.x + std::sin(cand.theta) * disp.y) / dn;
        double next = alpha - prox.d / ddot;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        alpha = next;
        cand = rk4_step(fn, prev, alpha);
        if (hi - lo < 1e-17) {
            const Proximity p2 = signed_distance(table, torus_wrap(cand.u), skip);
            *alpha_out = alpha;
            *hit_out = p2.id;
            return cand;
        }
    }
    throw FlightError(FlightFault::Penetration,
                      "penetration: collision refinement failed to converge");
}

template <class DerivFn>
inline FlightOutcome rk4_flight(const System& sys, const FlowState& start, double dt_max,
                                int start_scatterer, const DerivFn& fn) {
    const TableConfig& table = sys.table;
    const FlightParams& par = sys.flight;
    const double h = par.step;
    const double h_floor = std::min(h, 2e-4);
    const double d_engage = 0.01;

    // The start scatterer is invisible for a short while so the departure does
    // not read as an immediate collision.  Convexity makes a genuine return to
    // it impossible that early: the gap to its nearest translate is at least
    // 1 - 2R, and curvature (<= 0.2) cannot fold the path back that fast.
    double t_excl = 0.0;
    if (start_scatterer >= 0) {
        const double R = table.scatterers[static_cast<std::size_t>(start_scatterer)].radius;
        t_excl = std::min(0.15, 0.45 * (1.0 - 2.0 * R));
    }

    IntState cur{start.position, start.theta, 0.0};
    IntState prev = cur;
    double t = 0.0;
    double t_prev = 0.0;
    double last_h = 0.0;

    while (true) {
        const Vec2 pw = torus_wrap(cur.u);
        const int skip = (t < t_excl) ? start_scatterer : -1;
        const Proximity prox = signed_distance(table, pw, skip);
        if (prox.d <= 0.0) {
            if (last_h == 0.0)
                throw FlightError(FlightFault::Penetration,
                                  "penetration: flight started inside a scatterer");
            double alpha = 0.0;
            int hit = -1;
            const int skip_prev = (t_prev < t_excl) ? start_scatterer : -1;
            const IntState ev =
                refine_event(fn, table, prev, last_h, skip_prev, par.event_tol, &alpha, &hit);
            FlightOutcome out;
            out.tau = t_prev + alpha;
            out.dq = {ev.u.x - start.position.x, ev.u.y - start.position.y};
            out.curv_integral = ev.integral;
            out.hit = hit;
            out.end.position = torus_wrap(ev.u);
            out.end.theta = ev.theta;
            out.end.wx = start.wx + static_cast<long>(std::floor(ev.u.x));
            out.end.wy = start.wy + static_cast<long>(std::floor(ev.u.y));
            out.end.p = 1.0;
            return out;
        }
        if (t >= dt_max)
            throw FlightError(FlightFault::HorizonViolation,
                              "horizon violation: no collision within the flight time limit");

        if (prox.d >= d_engage) {
            // Distance can shrink at most by arclength, so this many full
            // steps cannot reach the boundary; skip the checks in between.
            long k = static_cast<long>(std::floor((prox.d - 0.5 * d_engage) / h));
            if (k < 1) k = 1;
            if (t < t_excl) {
                const long k_excl = static_cast<long>(std::ceil((t_excl - t) / h));
                k = std::min(k, std::max<long>(1, k_excl));
            }
            for (long i = 0; i < k; ++i) {
                prev = cur;
                cur = rk4_step(fn, cur, h);
            }
            t_prev = t + (k - 1) * h;
            t += k * h;
            last_h = h;
        } else {
            const double hs = std::max(std::min(h, 0.5 * prox.d), h_floor);
            prev = cur;
            cur = rk4_step(fn, cur, hs);
            t_prev = t;
            t += hs;
            last_h = hs;
        }
    }
}

inline FlightOutcome straight_flight(const System& sys, const FlowState& start, double dt_max) {
    const Vec2 v{std::cos(start.theta), std::sin(start.theta)};
    const double limit = std::min(dt_max, sys.flight.max_flight_time);
    const auto hit = ray_first_hit(sys.table, start.position, v, 1e-9, limit);
    if (!hit)
        throw FlightError(FlightFault::HorizonViolation,
                          "horizon violation: no collision within the flight time limit");
    FlightOutcome out;
    out.tau = hit->t;
    out.dq = hit->t * v;
    out.curv_integral = 0.0;
    out.hit = hit->scatterer;
    const Vec2 u{start.position.x + out.dq.x, start.position.y + out.dq.y};
    out.end.position = torus_wrap(u);
    out.end.theta = start.theta;
    out.end.wx = start.wx + static_cast<long>(std::floor(u.x));
    out.end.wy = start.wy + static_cast<long>(std::floor(u.y));
    out.end.p = 1.0;
    return out;
}

}  // namespace detail

// Integrates from `start` until the next collision.  `start_scatterer` names
// the disk the state departs from (-1 if none); it is excluded from collision
// detection during the departure.
inline FlightOutcome free_flight(const System& sys, const FlowState& start, double dt_max,
                                 int start_scatterer = -1) {
    if (force_is_zero(sys.force)) return detail::straight_flight(sys, start, dt_max);
    if (const auto* c = std::get_if<ConstantField>(&sys.force))
        return detail::rk4_flight(sys, start, dt_max, start_scatterer,
                                  detail::ConstantDeriv{c->field.x, c->field.y});
    return detail::rk4_flight(sys, start, dt_max, start_scatterer,
                              detail::CustomDeriv{&std::get<CustomField>(sys.force)});
}

// Specular reflection of an incoming boundary state into an outgoing
// collision coordinate (before any twist).
inline CollisionCoord reflect(const System& sys, const FlowState& incoming, int scatterer) {
    const Scatterer& s = sys.table.scatterers.at(static_cast<std::size_t>(scatterer));
    Vec2 n = torus_displacement(incoming.position, s.center);
    const double nn = norm(n);
    n = (1.0 / nn) * n;
    const Vec2 tg = perp_cw(n);
    const Vec2 vin{std::cos(incoming.theta), std::sin(incoming.theta)};
    const double vn = dot(vin, n);
    const Vec2 vout = vin - 2.0 * vn * n;
    const double phi = std::atan2(dot(vout, tg), dot(vout, n));
    if (kPiHalf - std::abs(phi) <= sys.flight.grazing_cut)
        throw FlightError(FlightFault::Grazing, "grazing collision at |phi| ~ pi/2");
    return CollisionCoord{scatterer, arc_from_normal(s, n), phi};
}

struct StepResult {
    CollisionCoord to;
    CollisionRecord record;
};

// One step of the collision map: flight, specular reflection, twist.
inline StepResult billiard_map(const System& sys, const CollisionCoord& from) {
    if (kPiHalf - std::abs(from.phi) <= sys.flight.grazing_cut)
        throw FlightError(FlightFault::Grazing, "grazing outgoing angle at |phi| ~ pi/2");
    const FlowState start = lift(sys, from);
    const FlightOutcome flight =
        free_flight(sys, start, sys.flight.max_flight_time, from.scatterer);
    const CollisionCoord pre = reflect(sys, flight.end, flight.hit);

    StepResult res;
    res.record.from = from;
    res.record.tau = flight.tau;
    res.record.dq = flight.dq;
    res.record.curv_integral = flight.curv_integral;
    res.record.log_jac_flow = flight.curv_integral;
    res.record.log_jac_twist = twist_log_jacobian(sys.twist, pre.phi);
    res.record.log_jac_total = res.record.log_jac_flow + res.record.log_jac_twist;
    res.record.s = -res.record.log_jac_total;
    res.to = CollisionCoord{pre.scatterer, pre.r, twist_angle(sys.twist, pre.phi)};
    res.record.to = res.to;
    return res;
}

// Inverse step, realized as the involution conjugate of the forward map.  The
// reported record describes the inverse step from `from`: tau/dq/Jacobians are
// those of the reversed-time flight, so record.s is the entropy production of
// the inverse map at `from`.
inline StepResult billiard_map_inverse(const System& sys, const CollisionCoord& from) {
    StepResult fwd = billiard_map(sys, involution(from));
    StepResult res;
    res.to = involution(fwd.to);
    res.record = fwd.record;
    res.record.from = from;
    res.record.to = res.to;
    return res;
}

}  // namespace lorentz
