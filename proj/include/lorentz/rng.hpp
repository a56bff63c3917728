#pragma once

// SplitMix64 generator with cheap substreams.
//
// Every Monte Carlo routine in this project draws from Rng::substream(seed, k)
// where k indexes the unit of work (orbit, sample box, ...).  Substream state
// depends only on (seed, k), never on scheduling, so results are byte-identical
// for any worker count.

#include <cstdint>

namespace lorentz {

class Rng {
  public:
    explicit Rng(std::uint64_t state) : state_(state) {}

    // Finalizer from the SplitMix64 reference implementation.
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t h = mix(seed + 0x9E3779B97F4A7C15ULL);
        return Rng(mix(h ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL)));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform double in [lo, hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t state_;
};

}  // namespace lorentz
