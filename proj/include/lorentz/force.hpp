#pragma once

// External force models for the flow between collisions, and the collision
// twist models.
//
// The particle moves at unit speed: an isokinetic thermostat removes the
// component of the force along the velocity, so a force only turns the
// velocity direction.  Writing the direction as theta, the turning rate is
// the signed curvature
//     kappa(x, y, theta) = -F1 * sin(theta) + F2 * cos(theta)
// and theta' = kappa.  The flow Jacobian needs the analytic partial
// d(kappa)/d(theta) as well, so a custom force must supply both.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <variant>

#include "lorentz/vec2.hpp"

namespace lorentz {

struct NoForce {};

// Constant field E; curvature -E1*sin(theta) + E2*cos(theta).
struct ConstantField {
    Vec2 field;
};

// Arbitrary thermostatted force F(position, theta) with its analytic
// d(kappa)/d(theta).  `strength` is the dimensionless size used when results
// are normalized per unit field (the H observable); it plays the role |E|
// plays for a constant field.
struct CustomField {
    std::function<Vec2(Vec2, double)> force;
    std::function<double(Vec2, double)> dkappa_dtheta;
    double strength = 0.0;
};

using ForceModel = std::variant<NoForce, ConstantField, CustomField>;

inline double force_epsilon(const ForceModel& f) {
    if (std::holds_alternative<NoForce>(f)) return 0.0;
    if (const auto* c = std::get_if<ConstantField>(&f)) return norm(c->field);
    return std::get<CustomField>(f).strength;
}

inline bool force_is_zero(const ForceModel& f) { return force_epsilon(f) == 0.0; }

// Collision twists: an extra boundary kick applied to the outgoing angle
// after the specular reflection.

struct IdentityTwist {};

// phi -> phi + beta * (pi^2/4 - phi^2).  Fixes +-pi/2, and stays a monotone
// bijection of [-pi/2, pi/2] exactly when |beta| < 1/pi.
struct AngleTwist {
    double beta = 0.0;
};

using TwistModel = std::variant<IdentityTwist, AngleTwist>;

inline constexpr double kPiHalf = 1.57079632679489661923;

inline bool twist_is_identity(const TwistModel& t) {
    if (std::holds_alternative<IdentityTwist>(t)) return true;
    return std::get<AngleTwist>(t).beta == 0.0;
}

inline void validate_twist(const TwistModel& t) {
    if (const auto* a = std::get_if<AngleTwist>(&t)) {
        if (!(std::abs(a->beta) < 1.0 / (2.0 * kPiHalf)))
            throw std::invalid_argument("twist beta must satisfy |beta| < 1/pi");
    }
}

inline double twist_angle(const TwistModel& t, double phi) {
    if (const auto* a = std::get_if<AngleTwist>(&t))
        return phi + a->beta * (kPiHalf * kPiHalf - phi * phi);
    return phi;
}

// log of the Jacobian of the twist with respect to the invariant measure
// cos(phi) dr dphi:  log g'(phi) + log cos(g(phi)) - log cos(phi).
inline double twist_log_jacobian(const TwistModel& t, double phi) {
    if (const auto* a = std::get_if<AngleTwist>(&t)) {
        if (a->beta == 0.0) return 0.0;
        const double g = phi + a->beta * (kPiHalf * kPiHalf - phi * phi);
        const double gp = 1.0 - 2.0 * a->beta * phi;
        return std::log(gp) + std::log(std::cos(g)) - std::log(std::cos(phi));
    }
    return 0.0;
}

}  // namespace lorentz
