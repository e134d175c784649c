// Shared test helpers: a deterministic RNG for property-style sweeps and a
// couple of independent numerical oracles (kept away from the library code
// paths they check).
#pragma once

#include <catch2/catch.hpp>

#include "forcedvi/system.hpp"

namespace testsupport {

using forcedvi::Mat;
using forcedvi::StateTQ;
using forcedvi::Vec;

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 1) {}
    double uniform(double lo, double hi) {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        const uint64_t z = state_ * 0x2545f4914f6cdd1dull;
        return lo + (static_cast<double>(z >> 11) / 9007199254740992.0) * (hi - lo);
    }
    Vec vec(int n, double box) {
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = uniform(-box, box);
        return x;
    }
    StateTQ state(int n, double box) { return StateTQ(vec(n, box), vec(n, box)); }

  private:
    uint64_t state_;
};

/// Independent derivative oracle: central difference with Richardson step
/// refinement, no shared code with the library FD helpers.
inline double richardson_derivative(const std::function<double(double)>& f, double x) {
    const double h1 = 1e-4;
    const double d1 = (f(x + h1) - f(x - h1)) / (2.0 * h1);
    const double d2 = (f(x + h1 / 2) - f(x - h1 / 2)) / h1;
    return (4.0 * d2 - d1) / 3.0;
}

/// Independent quadrature oracle: composite Simpson with doubling panels.
inline double simpson_integrate(const std::function<double(double)>& f, double a, double b,
                                double tol = 1e-12) {
    auto simpson = [&](int panels) {
        const double h = (b - a) / panels;
        double acc = f(a) + f(b);
        for (int i = 1; i < panels; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
        return acc * h / 3.0;
    };
    double prev = simpson(8);
    for (int panels = 16; panels <= (1 << 22); panels *= 2) {
        const double cur = simpson(panels);
        if (std::abs(cur - prev) <= tol) return cur;
        prev = cur;
    }
    return prev;
}

}  // namespace testsupport
