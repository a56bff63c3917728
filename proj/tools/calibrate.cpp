// Prints the reference values that are frozen into the regression tests.
// Rerun after any change to the geometry or dynamics conventions and update
// the affected constants by hand.

#include <cmath>
#include <cstdio>

#include "lorentz/dynamics.hpp"
#include "lorentz/geometry.hpp"

using namespace lorentz;

static void print_step(const char* label, const StepResult& res) {
    std::printf("%s\n", label);
    std::printf("  to = (%d, %.17g, %.17g)\n", res.to.scatterer, res.to.r, res.to.phi);
    std::printf("  tau = %.17g  dq = (%.17g, %.17g)\n", res.record.tau, res.record.dq.x,
                res.record.dq.y);
    std::printf("  log_jac_flow = %.17g  s = %.17g\n", res.record.log_jac_flow, res.record.s);
}

int main() {
    const TableConfig table = default_table();

    {
        const HorizonScan scan = horizon_scan(table, 1000000, 10.0);
        std::printf("horizon_scan(default_table, 1e6 rays, max_len 10, seed default):\n");
        std::printf("  max_free_path = %.17g\n", scan.max_free_path);
        std::printf("  min_free_path = %.17g\n", scan.min_free_path);
        std::printf("  infinite      = %d  escaped = %llu\n", scan.infinite_horizon ? 1 : 0,
                    static_cast<unsigned long long>(scan.escaped_rays));
    }

    {
        System sys = make_system(table, ConstantField{{0.05, 0.0}});
        const CollisionCoord c{0, 0.3, 0.2};
        print_step("billiard_map eps=0.05 from (0, 0.3, 0.2), h=1e-3:", billiard_map(sys, c));

        System fine = sys;
        fine.flight.step = 1e-4;
        const StepResult a = billiard_map(sys, c);
        const StepResult b = billiard_map(fine, c);
        std::printf("  self-oracle h=1e-3 vs 1e-4: dr=%.3g dphi=%.3g dtau=%.3g\n",
                    std::abs(a.to.r - b.to.r), std::abs(a.to.phi - b.to.phi),
                    std::abs(a.record.tau - b.record.tau));

        System coarse = sys;
        coarse.flight.step = 5e-3;
        System coarse_ref = sys;
        coarse_ref.flight.step = 5e-4;
        const StepResult ca = billiard_map(coarse, c);
        const StepResult cb = billiard_map(coarse_ref, c);
        std::printf("  self-oracle h=5e-3 vs 5e-4: dr=%.3g dphi=%.3g dtau=%.3g\n",
                    std::abs(ca.to.r - cb.to.r), std::abs(ca.to.phi - cb.to.phi),
                    std::abs(ca.record.tau - cb.record.tau));
    }

    {
        // Near-tangent aim at disk 1 from (0.4, 0): closest approach R - 1e-9.
        System sys = make_system(table, NoForce{});
        sys.flight.grazing_cut = 1e-3;
        const Vec2 p{0.4, 0.0};
        const Vec2 L{0.1, 0.5};
        const double len = norm(L);
        const double alpha = std::asin((0.2 - 1e-9) / len);
        const double base = std::atan2(L.y, L.x);
        const double theta = base + alpha;  // pass on the upper-left side
        const auto hit = ray_first_hit(table, p, {std::cos(theta), std::sin(theta)}, 1e-9, 10.0);
        if (hit)
            std::printf("grazing probe: hits scatterer %d at t=%.6g\n", hit->scatterer, hit->t);
        else
            std::printf("grazing probe: no hit\n");
    }

    return 0;
}
