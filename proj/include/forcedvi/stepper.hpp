#pragma once

#include <optional>

#include "forcedvi/disc_qq.hpp"

namespace forcedvi {

/// Per-step solver diagnostics.
struct StepStats {
    int iterations = 0;
    double residual_norm = std::numeric_limits<double>::infinity();
    double distance_to_guess = 0.0;  ///< which root was picked, relative to the initial guess
};

/// Discrete Lagrange-D'Alembert residual at the interior point q1:
///   D2 L_d(q0,q1) + D1 L_d(q1,q2) + f_d^+(q0,q1) + f_d^-(q1,q2).
inline Vec del_residual(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                        const Vec& q2, const SolverSettings& settings = {}) {
    if (!d.is_admissible(h, q0, q1) || !d.is_admissible(h, q1, q2))
        throw std::invalid_argument("del_residual: inadmissible point pair");
    return Vec(detail::d2_lagrangian(d, h, q0, q1, settings) +
               detail::d1_lagrangian(d, h, q1, q2, settings) + d.force_plus(h, q0, q1) +
               d.force_minus(h, q1, q2));
}

/// One step of the discrete Lagrange-D'Alembert equations: solves
/// del_residual(q0, q1, .) = 0 for q2 by damped Newton from q2 = 2 q1 - q0.
/// On failure one retry runs from the data's second-order predictor; a
/// second failure is fatal for the step.
inline Vec step_qq(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                   const SolverSettings& settings = {}, StepStats* stats = nullptr) {
    if (!d.is_admissible(h, q0, q1))
        throw std::invalid_argument("step_qq: inadmissible seed pair");
    // The (q0, q1) half of the DEL residual is constant during the solve.
    const Vec fixed_part =
        detail::d2_lagrangian(d, h, q0, q1, settings) + d.force_plus(h, q0, q1);
    auto residual = [&](const Vec& q2) {
        if (!d.is_admissible(h, q1, q2))
            throw std::invalid_argument("step_qq: inadmissible candidate pair");
        return Vec(fixed_part + detail::d1_lagrangian(d, h, q1, q2, settings) +
                   d.force_minus(h, q1, q2));
    };
    const Vec guess = 2.0 * q1 - q0;
    NewtonResult res = newton_solve(residual, guess, settings);
    if (!res.converged && d.predictor)
        res = newton_solve(residual, d.predictor(h, q0, q1), settings);
    if (!res.converged)
        throw NewtonNoConvergence("step_qq: Newton failed", res.residual_norm, res.iterations);
    if (stats) {
        stats->iterations = res.iterations;
        stats->residual_norm = res.residual_norm;
        stats->distance_to_guess = detail::sup_norm(res.x - guess);
    }
    return res.x;
}

namespace detail {

/// Criticality covector mu(h, s) = d L_cp(h, s) + f_cp(h, s) over the 2n
/// state coordinates; the L_cp gradient is FD unless the data supplies one.
inline Vec mu_covector(const DiscreteDataTQ& data, double h, const StateTQ& s,
                       const SolverSettings& settings) {
    Vec grad(2 * data.n);
    if (data.lagrangian_grad) {
        grad = data.lagrangian_grad(h, s);
    } else {
        const Vec y = s.packed();
        const double step = fd_step(settings.fd_step_scale, y);
        Vec p = y;
        for (int i = 0; i < 2 * data.n; ++i) {
            p[i] = y[i] + step;
            const double hi = data.lagrangian(h, StateTQ::unpack(p));
            p[i] = y[i] - step;
            const double lo = data.lagrangian(h, StateTQ::unpack(p));
            p[i] = y[i];
            grad[i] = (hi - lo) / (2.0 * step);
        }
    }
    return Vec(grad + data.force(h, s));
}

/// Orthonormal basis (columns) of the fixed-endpoint variation space
///   { (dv, dv~) : J-(s) dv = 0, J+(s~) dv~ = 0, J+(s) dv = J-(s~) dv~ }
/// via column-pivoted Householder QR of the stacked constraint transpose.
inline Mat variation_space_basis(const Mat& jm_s, const Mat& jp_s, const Mat& jm_t,
                                 const Mat& jp_t) {
    const int n = static_cast<int>(jm_s.rows());
    Mat C = Mat::Zero(3 * n, 4 * n);
    C.block(0, 0, n, 2 * n) = jm_s;
    C.block(n, 2 * n, n, 2 * n) = jp_t;
    C.block(2 * n, 0, n, 2 * n) = jp_s;
    C.block(2 * n, 2 * n, n, 2 * n) = -jm_t;
    Eigen::ColPivHouseholderQR<Mat> qr(C.transpose());
    const int rank = static_cast<int>(qr.rank());
    if (4 * n - rank != n)
        throw DegenerateVariationSpace("step_tq: variation space dimension " +
                                       std::to_string(4 * n - rank) + ", expected " +
                                       std::to_string(n));
    const Mat Q = qr.householderQ() * Mat::Identity(4 * n, 4 * n);
    return Q.rightCols(n);
}

}  // namespace detail

/// One step of the discrete flow on the TQ side: finds the state s~ with
///   boundary_minus(s~) = boundary_plus(s)                      (matching)
///   mu(s)(dv) + mu(s~)(dv~) = 0 on fixed-endpoint variations   (criticality)
/// by Newton on the stacked 2n residual from the guess (boundary_plus(s), v).
/// The variation-space basis is rebuilt at each iterate and frozen while that
/// iterate's FD Jacobian and line search are evaluated.
inline StateTQ step_tq(const DiscreteDataTQ& data, const DiscretizationTQ& d, double h,
                       const StateTQ& s, const SolverSettings& settings = {},
                       StepStats* stats = nullptr) {
    if (h == 0.0) throw std::invalid_argument("step_tq: h must be nonzero");
    if (data.n != d.n) throw DimensionMismatch("step_tq: data/discretization dimension mismatch");
    detail::require_state(s, d.n, "step_tq");
    const int n = d.n;

    const Vec target = boundary_plus(d, h, s);
    const Mat jm_s = boundary_minus_jacobian(d, h, s, settings);
    const Mat jp_s = boundary_plus_jacobian(d, h, s, settings);
    const Vec mu_s = detail::mu_covector(data, h, s, settings);

    // Residual with the variation basis held fixed.
    auto residual_with_basis = [&](const Vec& y, const Mat& basis) {
        const StateTQ cand = StateTQ::unpack(y);
        Vec r(2 * n);
        r.head(n) = boundary_minus(d, h, cand) - target;
        Vec stacked(4 * n);
        stacked.head(2 * n) = mu_s;
        stacked.tail(2 * n) = detail::mu_covector(data, h, cand, settings);
        r.tail(n) = basis.transpose() * stacked;
        return r;
    };
    auto basis_at = [&](const Vec& y) {
        const StateTQ cand = StateTQ::unpack(y);
        return detail::variation_space_basis(jm_s, jp_s,
                                             boundary_minus_jacobian(d, h, cand, settings),
                                             boundary_plus_jacobian(d, h, cand, settings));
    };

    Vec guess(2 * n);
    guess.head(n) = target;
    guess.tail(n) = s.v;

    Vec y = guess;
    Mat basis;
    Vec r;
    double rnorm = std::numeric_limits<double>::infinity();
    int iters = 0;
    bool converged = false;

    auto restart_from = [&](const Vec& start) {
        y = start;
        basis = basis_at(y);
        r = residual_with_basis(y, basis);
        rnorm = detail::sup_norm(r);
        converged = rnorm <= settings.newton_tol;
    };
    restart_from(guess);

    bool retried = false;
    while (!converged && iters < settings.newton_max_iter) {
        ++iters;
        // FD Jacobian with the basis frozen at the current iterate.
        const double step = detail::fd_step(settings.fd_step_scale, y);
        Mat J(2 * n, 2 * n);
        Vec p = y;
        for (int j = 0; j < 2 * n; ++j) {
            p[j] = y[j] + step;
            const Vec hi = residual_with_basis(p, basis);
            p[j] = y[j] - step;
            const Vec lo = residual_with_basis(p, basis);
            p[j] = y[j];
            J.col(j) = (hi - lo) / (2.0 * step);
        }
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible()) throw SingularJacobian("step_tq: singular Newton Jacobian");
        const Vec dy = lu.solve(-r);
        double lambda = 1.0;
        bool accepted = false;
        for (int bt = 0; bt <= 20; ++bt) {
            const Vec cand = y + lambda * dy;
            const Vec rc = residual_with_basis(cand, basis);
            if (detail::sup_norm(rc) < rnorm) {
                y = cand;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            // One retry from a predictor velocity; a second stall is fatal.
            if (!retried && data.acceleration) {
                retried = true;
                Vec restart = guess;
                restart.tail(n) = s.v + h * data.acceleration(s);
                restart_from(restart);
                continue;
            }
            break;
        }
        basis = basis_at(y);
        r = residual_with_basis(y, basis);
        rnorm = detail::sup_norm(r);
        converged = rnorm <= settings.newton_tol;
        if (converged) {
            // Polish with full steps while the residual strictly improves, so
            // the accepted state sits at machine noise rather than at tol.
            for (int polish = 0; polish < 3 && iters < settings.newton_max_iter; ++polish) {
                ++iters;
                const double step = detail::fd_step(settings.fd_step_scale, y);
                Mat Jp(2 * n, 2 * n);
                Vec pp = y;
                for (int j = 0; j < 2 * n; ++j) {
                    pp[j] = y[j] + step;
                    const Vec hi = residual_with_basis(pp, basis);
                    pp[j] = y[j] - step;
                    const Vec lo = residual_with_basis(pp, basis);
                    pp[j] = y[j];
                    Jp.col(j) = (hi - lo) / (2.0 * step);
                }
                Eigen::FullPivLU<Mat> lup(Jp);
                if (!lup.isInvertible()) break;
                const Vec cand = y + lup.solve(-r);
                const Mat cand_basis = basis_at(cand);
                const Vec rc = residual_with_basis(cand, cand_basis);
                if (detail::sup_norm(rc) >= rnorm) break;
                y = cand;
                basis = cand_basis;
                r = rc;
                rnorm = detail::sup_norm(r);
            }
        }
    }
    if (!converged)
        throw NewtonNoConvergence("step_tq: Newton failed", rnorm, iters);
    if (stats) {
        stats->iterations = iters;
        stats->residual_norm = rnorm;
        stats->distance_to_guess = detail::sup_norm(y - guess);
    }
    return StateTQ::unpack(y);
}

/// Position q1 compatible with the continuous state (q0, v0) through the
/// forced discrete Legendre transform: solves
///   fiber_derivative(q0, v0) = discrete_legendre_minus(h, q0, q1).
inline Vec initialize_from_state(const DiscreteDataQQ& d, const SystemFMS& sys, double h,
                                 const Vec& q0, const Vec& v0, const SolverSettings& settings = {}) {
    const Vec p0 = fiber_derivative(sys, StateTQ(q0, v0), settings);
    auto residual = [&](const Vec& q1) {
        return Vec(p0 - discrete_legendre_minus(d, h, q0, q1, settings));
    };
    NewtonResult res = newton_solve(residual, Vec(q0 + h * v0), settings);
    if (!res.converged)
        throw NewtonNoConvergence("initialize_from_state: Newton failed", res.residual_norm,
                                  res.iterations);
    return res.x;
}

/// Discrete path with per-step diagnostics. On a step failure the trajectory
/// holds the positions reached so far plus the error description.
struct TrajectoryDiscrete {
    double h = 0.0;
    std::vector<Vec> positions;
    std::vector<double> residual_norms;  ///< accepted DEL residual at each interior point
    std::vector<int> iterations;
    std::optional<int> failed_step;
    std::string error;

    bool complete() const { return !failed_step.has_value(); }
};

/// Iterates step_qq from the seed pair (q0, q1) until positions q_0..q_N.
inline TrajectoryDiscrete run_trajectory(const DiscreteDataQQ& d, double h, const Vec& q0,
                                         const Vec& q1, int N, const SolverSettings& settings = {}) {
    if (N < 2) throw std::invalid_argument("run_trajectory: N must be >= 2");
    TrajectoryDiscrete traj;
    traj.h = h;
    traj.positions = {q0, q1};
    for (int k = 1; k < N; ++k) {
        StepStats stats;
        try {
            Vec q2 = step_qq(d, h, traj.positions[k - 1], traj.positions[k], settings, &stats);
            traj.positions.push_back(std::move(q2));
            traj.residual_norms.push_back(stats.residual_norm);
            traj.iterations.push_back(stats.iterations);
        } catch (const std::exception& e) {
            traj.failed_step = k;
            traj.error = e.what();
            break;
        }
    }
    return traj;
}

}  // namespace forcedvi
