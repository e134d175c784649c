#pragma once

#include <functional>

#include "forcedvi/types.hpp"

namespace forcedvi {

struct NewtonResult {
    Vec x;
    double residual_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline Mat jacobian_fd(const std::function<Vec(const Vec&)>& r, const Vec& x, double fd_scale) {
    const int m = static_cast<int>(x.size());
    const double step = fd_step(fd_scale, x);
    Vec p = x;
    Mat J;
    for (int j = 0; j < m; ++j) {
        p[j] = x[j] + step;
        const Vec hi = r(p);
        p[j] = x[j] - step;
        const Vec lo = r(p);
        p[j] = x[j];
        if (J.size() == 0) J.resize(hi.size(), m);
        J.col(j) = (hi - lo) / (2.0 * step);
    }
    return J;
}

}  // namespace detail

/// Damped Newton iteration on a square residual. Backtracking halves the step
/// up to 20 times on residual-norm increase. After the tolerance is met, up
/// to 3 full polish steps run while the residual strictly improves, so
/// downstream finite differences through solver output see machine-level
/// noise rather than newton_tol-level noise.
inline NewtonResult newton_solve(const std::function<Vec(const Vec&)>& residual, Vec x0,
                                 const SolverSettings& settings,
                                 const std::function<Mat(const Vec&)>& jacobian = nullptr) {
    NewtonResult res;
    res.x = std::move(x0);
    Vec r = residual(res.x);
    res.residual_norm = detail::sup_norm(r);

    auto step_once = [&](bool backtrack) -> bool {
        const Mat J = jacobian ? jacobian(res.x) : detail::jacobian_fd(residual, res.x, settings.fd_step_scale);
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible()) throw SingularJacobian("newton_solve: singular Jacobian");
        const Vec dx = lu.solve(-r);
        if (!dx.allFinite()) throw SingularJacobian("newton_solve: non-finite Newton step");
        double lambda = 1.0;
        for (int bt = 0; bt <= 20; ++bt) {
            const Vec cand = res.x + lambda * dx;
            const Vec rc = residual(cand);
            const double norm_c = detail::sup_norm(rc);
            if (norm_c < res.residual_norm || !backtrack) {
                res.x = cand;
                r = rc;
                res.residual_norm = norm_c;
                return true;
            }
            lambda *= 0.5;
        }
        return false;  // no decrease found
    };

    for (; res.iterations < settings.newton_max_iter; ) {
        if (res.residual_norm <= settings.newton_tol) {
            res.converged = true;
            break;
        }
        ++res.iterations;
        if (!step_once(true)) break;
    }
    if (res.residual_norm <= settings.newton_tol) res.converged = true;

    if (res.converged) {
        for (int polish = 0; polish < 3 && res.iterations < settings.newton_max_iter; ++polish) {
            const Vec x_save = res.x;
            const Vec r_save = r;
            const double norm_save = res.residual_norm;
            ++res.iterations;
            if (!step_once(false) || res.residual_norm >= norm_save) {
                res.x = x_save;
                r = r_save;
                res.residual_norm = norm_save;
                break;
            }
        }
    }
    return res;
}

}  // namespace forcedvi
