#pragma once

#include <iostream>

#include "forcedvi/experiment.hpp"

namespace forcedvi {

/// Small deterministic generator for selftest states (xorshift64*).
class SelftestRng {
  public:
    explicit SelftestRng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}
    double uniform(double lo, double hi) {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        const uint64_t z = state_ * 0x2545f4914f6cdd1dull;
        const double u = static_cast<double>(z >> 11) / 9007199254740992.0;
        return lo + u * (hi - lo);
    }
    StateTQ state1d(double box) {
        Vec q(1), v(1);
        q[0] = uniform(-box, box);
        v[0] = uniform(-box, box);
        return StateTQ(q, v);
    }

  private:
    uint64_t state_;
};

/// Quick battery of internal consistency checks; the seed controls the random
/// test states only. Returns the number of failed checks.
inline int run_selftest(uint64_t seed, std::ostream& os) {
    SelftestRng rng(seed);
    SolverSettings settings;
    int failures = 0;
    auto report = [&](const char* name, bool ok) {
        os << (ok ? "PASS " : "FAIL ") << name << "\n";
        if (!ok) ++failures;
    };

    const SystemFMS particle = make_damped_particle(1.0);
    const FlowOracle analytic = make_flow_oracle(particle, FlowMode::analytic, settings);
    const FlowOracle numeric = make_flow_oracle(particle, FlowMode::numeric, settings);

    {  // analytic derivatives vs finite differences at random states
        SystemFMS fd_only = particle;
        fd_only.lagrangian_dq = nullptr;
        fd_only.lagrangian_dv = nullptr;
        fd_only.lagrangian_dvdv = nullptr;
        fd_only.lagrangian_dvdq = nullptr;
        double worst = 0.0;
        for (int i = 0; i < 25; ++i) {
            const StateTQ s = rng.state1d(2.0);
            const Vec a = fiber_derivative(particle, s, settings);
            const Vec b = fiber_derivative(fd_only, s, settings);
            worst = std::max(worst, detail::sup_norm(a - b) / (1.0 + detail::sup_norm(a)));
        }
        report("fiber_derivative analytic vs finite differences", worst <= 1e-6);
    }

    {  // numeric oracle against the closed-form flow
        double worst = 0.0;
        for (int i = 0; i < 5; ++i) {
            const StateTQ s = rng.state1d(1.5);
            const double t = rng.uniform(0.1, 1.5);
            const StateTQ a = flow(analytic, t, s);
            const StateTQ b = flow(numeric, t, s);
            worst = std::max(worst, std::max(detail::sup_norm(a.q - b.q), detail::sup_norm(a.v - b.v)));
        }
        report("numeric flow vs closed form", worst <= 1e-10);
    }

    {  // discretization axioms
        std::vector<double> hs = {0.4, 0.2, -0.2, 0.05};
        std::vector<StateTQ> states;
        for (int i = 0; i < 5; ++i) states.push_back(rng.state1d(1.0));
        const auto lin = verify_discretization_axioms(make_linear_discretization(1), hs, states, settings);
        const auto exact =
            verify_discretization_axioms(make_exact_discretization(analytic), hs, states, settings);
        report("discretization axioms (linear, exact)", lin.ok && exact.ok);
    }

    {  // order-1 consistency of built-in data
        std::vector<StateTQ> states;
        for (int i = 0; i < 4; ++i) states.push_back(rng.state1d(1.0));
        const auto scaled = check_consistency_order1(particle, make_scaled_data(particle), states, settings);
        const auto exact =
            check_consistency_order1(particle, exact_discrete_data_tq(analytic, settings), states, settings);
        const auto trunc = check_consistency_order1(
            particle, truncated_exact_friction(1.0, 2).second, states, settings);
        report("discrete data h-consistency", scaled.ok && exact.ok && trunc.ok);
    }

    {  // exactness at desk scale
        const auto rep = exactness_check(analytic, 0.25, StateTQ({0.0}, {1.0}), 6, settings);
        report("exact discretization reproduces flow samples", rep.ok);
    }

    {  // synthetic order fit
        std::vector<double> h = default_h_grid(), err;
        for (double hv : h) err.push_back(hv * hv * hv);
        const auto rep = estimate_order(h, err);
        report("estimate_order synthetic cubic", std::abs(rep.slope - 3.0) <= 1e-12);
    }

    os << (failures == 0 ? "selftest: all checks passed\n"
                         : "selftest: " + std::to_string(failures) + " check(s) failed\n");
    return failures;
}

}  // namespace forcedvi
