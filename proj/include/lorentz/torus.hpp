#pragma once

// Coordinate helpers for the unit 2-torus [0,1) x [0,1).

#include <cmath>

#include "lorentz/vec2.hpp"

namespace lorentz {

// Wraps a scalar into [0, 1).
inline double torus_wrap1(double x) {
    double r = x - std::floor(x);
    if (r >= 1.0) r -= 1.0;
    return r;
}

inline Vec2 torus_wrap(Vec2 p) { return {torus_wrap1(p.x), torus_wrap1(p.y)}; }

// Signed representative of x modulo 1 in [-1/2, 1/2).
inline double torus_mindelta1(double x) { return x - std::floor(x + 0.5); }

// Minimal-image displacement a - b, components in [-1/2, 1/2).
inline Vec2 torus_displacement(Vec2 a, Vec2 b) {
    return {torus_mindelta1(a.x - b.x), torus_mindelta1(a.y - b.y)};
}

inline double torus_distance(Vec2 a, Vec2 b) { return norm(torus_displacement(a, b)); }

}  // namespace lorentz
