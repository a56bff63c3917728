#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "lorentz/entropy.hpp"
#include "lorentz/rng.hpp"
#include "lorentz/sampling.hpp"

using namespace lorentz;

namespace {

// Smallest distance to the grazing band along the start point and its next
// `steps` images; zero when the orbit aborts.  Finite differences degrade as
// 1/cos(phi) wherever the probe orbit approaches tangency, so tests of the
// smooth-region identities sample away from it.
double grazing_margin(const System& sys, CollisionCoord c, int steps) {
    double margin = kPiHalf - std::abs(c.phi);
    try {
        for (int k = 0; k < steps; ++k) {
            c = billiard_map(sys, c).to;
            margin = std::min(margin, kPiHalf - std::abs(c.phi));
        }
    } catch (const FlightError&) {
        return 0.0;
    }
    return margin;
}

std::vector<CollisionCoord> fd_friendly_points(const System& sys, int want, std::uint64_t seed,
                                               int steps = 1) {
    Rng rng = Rng::substream(seed, 0);
    std::vector<CollisionCoord> pts;
    while (static_cast<int>(pts.size()) < want) {
        const CollisionCoord c = sample_mu0(sys.table, rng);
        if (grazing_margin(sys, c, steps) > 0.05) pts.push_back(c);
    }
    return pts;
}

}  // namespace

TEST_CASE("quadrature and finite-difference log Jacobians agree", "[entropy]") {
    const System sys = make_system(default_table(), ConstantField{{0.05, 0.0}});
    int compared = 0;
    double worst = 0.0;
    for (const CollisionCoord& c : fd_friendly_points(sys, 300, 11)) {
        const auto fd = log_jac_fd(sys, c);
        if (!fd) continue;
        ++compared;
        worst = std::max(worst, std::abs(*fd - log_jacobian(sys, c).total));
    }
    CHECK(compared >= 250);
    CHECK(worst <= 1e-5);
}

TEST_CASE("twisted map Jacobian still matches the finite difference", "[entropy]") {
    const System sys = make_system(default_table(), ConstantField{{0.03, 0.04}}, AngleTwist{0.2});
    int compared = 0;
    double worst = 0.0;
    for (const CollisionCoord& c : fd_friendly_points(sys, 200, 12)) {
        const auto fd = log_jac_fd(sys, c);
        if (!fd) continue;
        const LogJacobianBreakdown jac = log_jacobian(sys, c);
        CHECK(jac.total == Catch::Approx(jac.flow + jac.twist).margin(1e-14));
        ++compared;
        worst = std::max(worst, std::abs(*fd - jac.total));
    }
    CHECK(compared >= 150);
    CHECK(worst <= 1e-5);
}

TEST_CASE("force-free map is measure preserving", "[entropy]") {
    const System sys = make_system(default_table(), NoForce{});
    double worst_fd = 0.0;
    for (const CollisionCoord& c : fd_friendly_points(sys, 100, 13)) {
        const LogJacobianBreakdown jac = log_jacobian(sys, c);
        CHECK(jac.total == 0.0);
        CHECK(jac.s == 0.0);
        const auto fd = log_jac_fd(sys, c);
        if (fd) worst_fd = std::max(worst_fd, std::abs(*fd));
    }
    CHECK(worst_fd <= 5e-6);
}

TEST_CASE("entropy production is antisymmetric under time reversal", "[entropy]") {
    const System sys = make_system(default_table(), ConstantField{{0.05, 0.0}});
    Rng rng = Rng::substream(17, 0);
    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        const CollisionCoord c = sample_mu0(sys.table, rng);
        const StepResult fwd = billiard_map(sys, c);
        const double s_rev = billiard_map(sys, involution(fwd.to)).record.s;
        worst = std::max(worst, std::abs(fwd.record.s + s_rev));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("log Jacobian is additive along the orbit", "[entropy]") {
    const System sys = make_system(default_table(), ConstantField{{0.05, 0.0}});
    // The composed map expands like the product of per-step factors, which
    // grow with flight time and near tangency; the h^2 truncation term of the
    // stencil grows with it, so the probe keeps short, well-separated orbits
    // and a finer h than the one-step default.
    FdOptions two_step;
    two_step.steps = 2;
    two_step.h = 1e-7;
    Rng rng = Rng::substream(14, 0);
    int compared = 0;
    double worst = 0.0;
    while (compared < 150) {
        const CollisionCoord c = sample_mu0(sys.table, rng);
        double margin = kPiHalf - std::abs(c.phi);
        double tau_total = 0.0, chained = 0.0;
        CollisionCoord x = c;
        bool ok = true;
        try {
            for (int j = 0; j < 2; ++j) {
                const StepResult res = billiard_map(sys, x);
                x = res.to;
                chained += res.record.log_jac_total;
                tau_total += res.record.tau;
                margin = std::min(margin, kPiHalf - std::abs(x.phi));
            }
        } catch (const FlightError&) {
            ok = false;
        }
        if (!ok || margin <= 0.05 || tau_total > 0.9) continue;
        const auto fd2 = log_jac_fd(sys, c, two_step);
        if (!fd2) continue;
        ++compared;
        worst = std::max(worst, std::abs(*fd2 - chained));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("normalized observable H stays order one", "[entropy]") {
    Rng rng = Rng::substream(19, 0);

    SECTION("zero at zero force") {
        const System sys = make_system(default_table(), NoForce{});
        const CollisionCoord c = sample_mu0(sys.table, rng);
        CHECK(h_value(sys, billiard_map(sys, c).record) == 0.0);
    }

    SECTION("bounded and consistent across field sizes") {
        for (double eps : {0.1, 0.05, 0.025}) {
            const System sys = make_system(default_table(), ConstantField{{eps, 0.0}});
            for (int k = 0; k < 100; ++k) {
                const CollisionCoord c = sample_mu0(sys.table, rng);
                const CollisionRecord rec = billiard_map(sys, c).record;
                const double h = h_value(sys, rec);
                CHECK(std::abs(h) <= 50.0);
                CHECK(std::log1p(eps * h) == Catch::Approx(rec.log_jac_total).margin(1e-14));
            }
        }
    }
}

TEST_CASE("finite difference declines near singularity lines", "[entropy]") {
    const System sys = make_system(default_table(), ConstantField{{0.05, 0.0}});

    SECTION("grazing band is rejected outright") {
        FdOptions opt;
        CHECK_FALSE(log_jac_fd(sys, {0, 0.3, kPiHalf - 1e-7}, opt).has_value());
        CHECK_FALSE(log_jac_fd(sys, {0, 0.3, -(kPiHalf - 1e-7)}, opt).has_value());
    }

    SECTION("a coarse stencil gets rejected where a fine one passes") {
        FdOptions coarse;
        coarse.h = 0.01;
        coarse.window = 0.3;
        Rng rng = Rng::substream(23, 0);
        int rejected = 0, accepted = 0;
        for (int k = 0; k < 200; ++k) {
            const CollisionCoord c = sample_mu0(sys.table, rng);
            if (log_jac_fd(sys, c, coarse))
                ++accepted;
            else
                ++rejected;
        }
        CHECK(rejected > 0);
        CHECK(accepted > 0);
    }
}
