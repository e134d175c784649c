#pragma once

#include <functional>

#include "forcedvi/types.hpp"

namespace forcedvi {

/// Nodes and weights on the reference interval [-1, 1].
struct GaussRule {
    Vec nodes;
    Vec weights;
};

/// Gauss-Legendre rule with k points, computed by Newton iteration on the
/// Legendre polynomial from the Chebyshev-like initial guesses. Deterministic
/// and stateless; k is small everywhere this is used.
inline GaussRule gauss_legendre(int k) {
    if (k < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
    GaussRule rule;
    rule.nodes.resize(k);
    rule.weights.resize(k);
    for (int i = 0; i < k; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (k + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            // Legendre recurrence for P_k(x) and P_k'(x).
            double p0 = 1.0, p1 = x;
            for (int j = 2; j <= k; ++j) {
                const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            dp = k * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[k - 1 - i] = x;
        rule.weights[k - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

namespace detail {

// 10-point Gauss-Legendre half tables (symmetric about 0).
inline constexpr double kGL10Nodes[5] = {
    0.14887433898163121, 0.43339539412924719, 0.67940956829902441,
    0.86506336668898451, 0.97390652851717172};
inline constexpr double kGL10Weights[5] = {
    0.29552422471475287, 0.26926671930999635, 0.21908636251598204,
    0.14945134915058059, 0.066671344308688138};

template <class F>
Vec gl10_panel(F&& f, double a, double b) {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    Vec acc;
    for (int i = 0; i < 5; ++i) {
        const double dx = half * kGL10Nodes[i];
        Vec term = f(mid + dx) + f(mid - dx);
        if (acc.size() == 0) acc = Vec::Zero(term.size());
        acc += kGL10Weights[i] * term;
    }
    return half * acc;
}

template <class F>
Vec adaptive_panel(F&& f, double a, double b, double budget, const Vec& whole, int depth) {
    const double mid = 0.5 * (a + b);
    const Vec left = gl10_panel(f, a, mid);
    const Vec right = gl10_panel(f, mid, b);
    const Vec refined = left + right;
    if ((refined - whole).lpNorm<Eigen::Infinity>() <= budget) return refined;
    if (depth >= 24) throw NoConvergence("adaptive quadrature: bisection depth cap reached");
    return adaptive_panel(f, a, mid, 0.5 * budget, left, depth + 1) +
           adaptive_panel(f, mid, b, 0.5 * budget, right, depth + 1);
}

}  // namespace detail

/// Adaptive composite 10-point Gauss-Legendre integration of a vector-valued
/// integrand over [a, b] (signed when b < a). Panels are bisected, left
/// before right, until the refinement change fits the panel's share of tol.
template <class F>
Vec integrate_adaptive(F&& f, double a, double b, double tol, int dim) {
    if (a == b) return Vec::Zero(dim);
    const Vec whole = detail::gl10_panel(f, a, b);
    return detail::adaptive_panel(f, a, b, tol, whole, 0);
}

inline double integrate_adaptive_scalar(const std::function<double(double)>& f, double a, double b,
                                        double tol) {
    auto g = [&](double t) {
        Vec r(1);
        r[0] = f(t);
        return r;
    };
    return integrate_adaptive(g, a, b, tol, 1)[0];
}

}  // namespace forcedvi
