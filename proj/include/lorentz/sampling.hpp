#pragma once

// Initial-condition samplers for orbit ensembles.
//
// mu0 is the smooth invariant measure of the force-free billiard: scatterer
// weighted by boundary length, arclength uniform, and sin(phi) uniform (the
// cos(phi) density).  The steady state of the forced map is sampled by
// running a burn-in orbit from a mu0 draw; an aborted flight restarts the
// burn-in from a fresh draw of the same stream, so the result is a pure
// function of the stream.

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "lorentz/dynamics.hpp"
#include "lorentz/rng.hpp"

namespace lorentz {

enum class InitDistribution { Mu0, Srb, Lebesgue };

inline int sample_scatterer_by_length(const TableConfig& table, Rng& rng) {
    double pick = rng.next_double() * table.total_boundary_length();
    int id = 0;
    while (id + 1 < static_cast<int>(table.scatterers.size()) &&
           pick >= table.scatterers[static_cast<std::size_t>(id)].circumference()) {
        pick -= table.scatterers[static_cast<std::size_t>(id)].circumference();
        ++id;
    }
    return id;
}

inline CollisionCoord sample_mu0(const TableConfig& table, Rng& rng) {
    const int id = sample_scatterer_by_length(table, rng);
    const Scatterer& s = table.scatterers[static_cast<std::size_t>(id)];
    const double r = rng.next_double() * s.circumference();
    const double phi = std::asin(2.0 * rng.next_double() - 1.0);
    return {id, r, phi};
}

// Uniform in (r, phi); not invariant, used for init-independence checks.
inline CollisionCoord sample_lebesgue(const TableConfig& table, Rng& rng) {
    const int id = sample_scatterer_by_length(table, rng);
    const Scatterer& s = table.scatterers[static_cast<std::size_t>(id)];
    const double r = rng.next_double() * s.circumference();
    const double phi = rng.next_range(-kPiHalf, kPiHalf);
    return {id, r, phi};
}

struct SrbOptions {
    int burn_in = 1000;
    int max_retries = 64;
};

inline CollisionCoord sample_srb(const System& sys, Rng& rng, const SrbOptions& opt,
                                 std::uint64_t* aborted_orbits = nullptr) {
    for (int attempt = 0; attempt < opt.max_retries; ++attempt) {
        CollisionCoord c = sample_mu0(sys.table, rng);
        try {
            for (int k = 0; k < opt.burn_in; ++k) c = billiard_map(sys, c).to;
            return c;
        } catch (const FlightError&) {
            if (aborted_orbits) ++(*aborted_orbits);
        }
    }
    throw std::runtime_error("sample_srb: burn-in kept aborting; table badly conditioned");
}

inline CollisionCoord sample_init(const System& sys, InitDistribution init, Rng& rng,
                                  const SrbOptions& srb, std::uint64_t* aborted = nullptr) {
    switch (init) {
        case InitDistribution::Mu0:
            return sample_mu0(sys.table, rng);
        case InitDistribution::Lebesgue:
            return sample_lebesgue(sys.table, rng);
        case InitDistribution::Srb:
        default:
            return sample_srb(sys, rng, srb, aborted);
    }
}

// Runs n steps of the collision map, invoking cb(record) after each.  Returns
// false if a flight aborts (grazing/horizon), leaving the orbit incomplete.
template <class Cb>
inline bool run_orbit(const System& sys, CollisionCoord c, int n, Cb&& cb) {
    try {
        for (int k = 0; k < n; ++k) {
            const StepResult res = billiard_map(sys, c);
            cb(res.record);
            c = res.to;
        }
    } catch (const FlightError&) {
        return false;
    }
    return true;
}

}  // namespace lorentz
