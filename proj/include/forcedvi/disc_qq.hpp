#pragma once

#include "forcedvi/disc_tq.hpp"
#include "forcedvi/newton.hpp"

namespace forcedvi {

/// Discrete Lagrangian and force pair on Q x Q. The force splits into a
/// covector at q0 and one at q1; h = 0 is generally inadmissible.
struct DiscreteDataQQ {
    int n = 0;
    std::function<double(double h, const Vec& q0, const Vec& q1)> lagrangian;
    std::function<Vec(double h, const Vec& q0, const Vec& q1)> force_minus;
    std::function<Vec(double h, const Vec& q0, const Vec& q1)> force_plus;
    std::function<Vec(double h, const Vec& q0, const Vec& q1)> lagrangian_d1;  ///< optional
    std::function<Vec(double h, const Vec& q0, const Vec& q1)> lagrangian_d2;  ///< optional
    std::function<bool(double h, const Vec& q0, const Vec& q1)> admissible;
    std::function<Vec(double h, const Vec& q0, const Vec& q1)> predictor;  ///< optional retry guess for q2
    int declared_order = 0;

    bool is_admissible(double h, const Vec& q0, const Vec& q1) const {
        if (h == 0.0) return false;
        return admissible ? admissible(h, q0, q1) : true;
    }
};

/// Second-order guess for the next position, used as a one-shot retry when a
/// step's Newton iteration fails from the default extrapolated guess.
inline std::function<Vec(double, const Vec&, const Vec&)> make_step_predictor(
    const SystemFMS& sys, const SolverSettings& settings = {}) {
    return [sys, settings](double h, const Vec& q0, const Vec& q1) {
        const StateTQ end(q1, (q1 - q0) / h);
        return Vec(2.0 * q1 - q0 + h * h * el_acceleration(sys, end, settings));
    };
}

/// Inverts the boundary pair map: finds s with boundary_minus(s) = q0 and
/// boundary_plus(s) = q1. Linear discretizations invert in closed form; with
/// a vanishing alpha_minus the base point is pinned to q0 and only the
/// velocity is found by Newton shooting (Jacobian from the curve state
/// Jacobian, which for exact discretizations is the tangent flow). The
/// general case solves the full 2n system. On a first Newton failure the
/// shot is retried once from a second-order predictor built on
/// el_acceleration when an oracle is available.
inline StateTQ boundary_inverse(const DiscretizationTQ& d, const FlowOracle* oracle, double h,
                                const Vec& q0, const Vec& q1, const SolverSettings& settings = {},
                                const Vec* velocity_guess = nullptr) {
    if (h == 0.0) throw std::invalid_argument("boundary_inverse: h must be nonzero");
    d.require_h(h);
    const int n = d.n;
    if (q0.size() != n || q1.size() != n)
        throw DimensionMismatch("boundary_inverse: endpoint dimension mismatch");

    if (d.provenance == DiscProvenance::linear) return StateTQ(q0, (q1 - q0) / h);

    const bool pinned_base = std::abs(d.alpha_minus(h)) == 0.0;
    if (pinned_base) {
        auto residual = [&](const Vec& v) {
            return Vec(d.curve(h, d.alpha_plus(h), StateTQ(q0, v)) - q1);
        };
        auto jac = [&](const Vec& v) {
            return Mat(curve_state_jacobian(d, h, d.alpha_plus(h), StateTQ(q0, v), settings)
                           .rightCols(n));
        };
        Vec guess = velocity_guess ? *velocity_guess : Vec((q1 - q0) / h);
        NewtonResult res = newton_solve(residual, guess, settings, jac);
        if (!res.converged && oracle) {
            const Vec a = el_acceleration(oracle->sys, StateTQ(q0, guess), settings);
            Vec retry = (q1 - q0 - 0.5 * h * h * a) / h;
            res = newton_solve(residual, retry, settings, jac);
        }
        if (!res.converged)
            throw NewtonNoConvergence("boundary_inverse: shooting failed", res.residual_norm,
                                      res.iterations);
        return StateTQ(q0, res.x);
    }

    auto residual = [&](const Vec& y) {
        const StateTQ s = StateTQ::unpack(y);
        Vec r(2 * n);
        r.head(n) = boundary_minus(d, h, s) - q0;
        r.tail(n) = boundary_plus(d, h, s) - q1;
        return r;
    };
    Vec guess(2 * n);
    guess.head(n) = q0;
    guess.tail(n) = velocity_guess ? *velocity_guess : Vec((q1 - q0) / h);
    NewtonResult res = newton_solve(residual, guess, settings);
    if (!res.converged)
        throw NewtonNoConvergence("boundary_inverse: 2n solve failed", res.residual_norm,
                                  res.iterations);
    return StateTQ::unpack(res.x);
}

/// Transports TQ-side data to Q x Q through the boundary pair map:
///   L_d = L_cp o inverse,  f_d^-/+ = f_cp paired with the inverse Jacobian
/// columns belonging to q0 and q1 (implicit function through the boundary
/// Jacobian).
inline DiscreteDataQQ to_qq(const DiscreteDataTQ& data_tq, const DiscretizationTQ& d,
                            const FlowOracle& oracle, const SolverSettings& settings = {}) {
    if (data_tq.n != d.n) throw DimensionMismatch("to_qq: dimension mismatch");
    DiscreteDataQQ out;
    const int n = d.n;
    out.n = n;
    out.declared_order = data_tq.declared_order;

    out.lagrangian = [data_tq, d, oracle, settings](double h, const Vec& q0, const Vec& q1) {
        const StateTQ s = boundary_inverse(d, &oracle, h, q0, q1, settings);
        return data_tq.lagrangian(h, s);
    };

    // Shared helper: full (f_d^-, f_d^+) covector as one length-2n row.
    auto pulled_force = [data_tq, d, oracle, settings, n](double h, const Vec& q0, const Vec& q1) {
        const StateTQ s = boundary_inverse(d, &oracle, h, q0, q1, settings);
        Mat K(2 * n, 2 * n);
        K.topRows(n) = boundary_minus_jacobian(d, h, s, settings);
        K.bottomRows(n) = boundary_plus_jacobian(d, h, s, settings);
        // f_d = f_cp o K^{-1}; as a column vector this is K^{-T} f_cp.
        Eigen::FullPivLU<Mat> lu(K.transpose());
        if (!lu.isInvertible())
            throw SingularJacobian("to_qq: boundary pair map not invertible at query point");
        return Vec(lu.solve(data_tq.force(h, s)));
    };
    out.force_minus = [pulled_force, n](double h, const Vec& q0, const Vec& q1) {
        return Vec(pulled_force(h, q0, q1).head(n));
    };
    out.force_plus = [pulled_force, n](double h, const Vec& q0, const Vec& q1) {
        return Vec(pulled_force(h, q0, q1).tail(n));
    };
    out.predictor = make_step_predictor(oracle.sys, settings);
    return out;
}

/// Exact discrete Lagrangian and force on Q x Q for the one-sided boundary
/// pair: solves the two-point boundary problem by shooting, then integrates
/// L along the connecting trajectory and the force against the trajectory's
/// endpoint sensitivities (implicit function theorem through the shooting
/// equation, then tangent flow).
inline DiscreteDataQQ exact_discrete_data_qq(const FlowOracle& oracle,
                                             const SolverSettings& settings = {}) {
    DiscreteDataQQ out;
    const int n = oracle.sys.n;
    out.n = n;
    out.declared_order = -1;
    const DiscretizationTQ exact_d = make_exact_discretization(oracle, alpha_one_sided());

    out.lagrangian = [oracle, exact_d, settings](double h, const Vec& q0, const Vec& q1) {
        const StateTQ s01 = boundary_inverse(exact_d, &oracle, h, q0, q1, settings);
        auto integrand = [&](double t) { return eval_lagrangian(oracle.sys, flow(oracle, t, s01)); };
        return integrate_adaptive_scalar(integrand, 0.0, h, settings.quad_tol);
    };

    auto force_both = [oracle, exact_d, settings, n](double h, const Vec& q0, const Vec& q1) {
        const StateTQ s01 = boundary_inverse(exact_d, &oracle, h, q0, q1, settings);
        // Endpoint sensitivity of the shot velocity: position block A of the
        // tangent flow at t = h gives  dv/dq0 = -Av^{-1} Aq,  dv/dq1 = Av^{-1}.
        const Mat A = flow_with_jacobian(oracle, h, s01).second.topRows(n);
        const Mat Aq = A.leftCols(n);
        const Mat Av = A.rightCols(n);
        Eigen::FullPivLU<Mat> lu(Av);
        if (!lu.isInvertible())
            throw SingularJacobian("exact_discrete_data_qq: singular shooting Jacobian");
        const Mat dv_dq0 = -lu.solve(Aq);
        const Mat dv_dq1 = lu.solve(Mat::Identity(n, n));
        auto integrand = [&](double t) {
            const auto [st, J] = flow_with_jacobian(oracle, t, s01);
            const Vec f = eval_force(oracle.sys, st);
            const Mat Mq = J.topRows(n).leftCols(n);
            const Mat Mv = J.topRows(n).rightCols(n);
            Vec row(2 * n);
            row.head(n) = (Mq + Mv * dv_dq0).transpose() * f;  // against delta-q0
            row.tail(n) = (Mv * dv_dq1).transpose() * f;       // against delta-q1
            return row;
        };
        return integrate_adaptive(integrand, 0.0, h, settings.quad_tol, 2 * n);
    };
    out.force_minus = [force_both, n](double h, const Vec& q0, const Vec& q1) {
        return Vec(force_both(h, q0, q1).head(n));
    };
    out.force_plus = [force_both, n](double h, const Vec& q0, const Vec& q1) {
        return Vec(force_both(h, q0, q1).tail(n));
    };
    out.predictor = make_step_predictor(oracle.sys, settings);
    return out;
}

/// Classical midpoint data: L_d = h L(midpoint state), force split evenly
/// between the endpoints. The (h/2, h/2) split is one of several valid
/// choices; alternatives only change endpoint terms, not DEL residuals at
/// interior points.
inline DiscreteDataQQ midpoint_data_qq(const SystemFMS& sys) {
    DiscreteDataQQ out;
    const int n = sys.n;
    out.n = n;
    out.declared_order = 2;
    auto state = [n](double h, const Vec& q0, const Vec& q1) {
        return StateTQ(0.5 * (q0 + q1), (q1 - q0) / h);
    };
    out.lagrangian = [sys, state](double h, const Vec& q0, const Vec& q1) {
        return h * eval_lagrangian(sys, state(h, q0, q1));
    };
    out.force_minus = [sys, state](double h, const Vec& q0, const Vec& q1) {
        return Vec(0.5 * h * eval_force(sys, state(h, q0, q1)));
    };
    out.force_plus = out.force_minus;
    if (sys.has_analytic_first_derivatives()) {
        out.lagrangian_d1 = [sys, state](double h, const Vec& q0, const Vec& q1) {
            const StateTQ m = state(h, q0, q1);
            return Vec(0.5 * h * sys.lagrangian_dq(m) - sys.lagrangian_dv(m));
        };
        out.lagrangian_d2 = [sys, state](double h, const Vec& q0, const Vec& q1) {
            const StateTQ m = state(h, q0, q1);
            return Vec(0.5 * h * sys.lagrangian_dq(m) + sys.lagrangian_dv(m));
        };
    }
    out.predictor = make_step_predictor(sys);
    return out;
}

/// Trapezoid data: L_d averages the endpoint Lagrangians along the chord,
/// force evaluated at each endpoint with the symmetric (h/2, h/2) split.
inline DiscreteDataQQ trapezoid_data_qq(const SystemFMS& sys) {
    DiscreteDataQQ out;
    const int n = sys.n;
    out.n = n;
    out.declared_order = 2;
    out.lagrangian = [sys](double h, const Vec& q0, const Vec& q1) {
        const Vec w = (q1 - q0) / h;
        return 0.5 * h * (eval_lagrangian(sys, StateTQ(q0, w)) + eval_lagrangian(sys, StateTQ(q1, w)));
    };
    out.force_minus = [sys](double h, const Vec& q0, const Vec& q1) {
        return Vec(0.5 * h * eval_force(sys, StateTQ(q0, (q1 - q0) / h)));
    };
    out.force_plus = [sys](double h, const Vec& q0, const Vec& q1) {
        return Vec(0.5 * h * eval_force(sys, StateTQ(q1, (q1 - q0) / h)));
    };
    if (sys.has_analytic_first_derivatives()) {
        out.lagrangian_d1 = [sys](double h, const Vec& q0, const Vec& q1) {
            const Vec w = (q1 - q0) / h;
            const StateTQ s0(q0, w), s1(q1, w);
            return Vec(0.5 * h * sys.lagrangian_dq(s0) -
                       0.5 * (sys.lagrangian_dv(s0) + sys.lagrangian_dv(s1)));
        };
        out.lagrangian_d2 = [sys](double h, const Vec& q0, const Vec& q1) {
            const Vec w = (q1 - q0) / h;
            const StateTQ s0(q0, w), s1(q1, w);
            return Vec(0.5 * h * sys.lagrangian_dq(s1) +
                       0.5 * (sys.lagrangian_dv(s0) + sys.lagrangian_dv(s1)));
        };
    }
    out.predictor = make_step_predictor(sys);
    return out;
}

namespace detail {

inline Vec d1_lagrangian(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                         const SolverSettings& settings) {
    if (d.lagrangian_d1) return d.lagrangian_d1(h, q0, q1);
    const double step = fd_step(settings.fd_step_scale, q0);
    Vec g(q0.size());
    Vec p = q0;
    for (int i = 0; i < q0.size(); ++i) {
        p[i] = q0[i] + step;
        const double hi = d.lagrangian(h, p, q1);
        p[i] = q0[i] - step;
        const double lo = d.lagrangian(h, p, q1);
        p[i] = q0[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

inline Vec d2_lagrangian(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                         const SolverSettings& settings) {
    if (d.lagrangian_d2) return d.lagrangian_d2(h, q0, q1);
    const double step = fd_step(settings.fd_step_scale, q1);
    Vec g(q1.size());
    Vec p = q1;
    for (int i = 0; i < q1.size(); ++i) {
        p[i] = q1[i] + step;
        const double hi = d.lagrangian(h, q0, p);
        p[i] = q1[i] - step;
        const double lo = d.lagrangian(h, q0, p);
        p[i] = q1[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

}  // namespace detail

/// Forced discrete Legendre transform at the left endpoint:
///   p- = -D1 L_d(q0, q1) - f_d^-(q0, q1).
inline Vec discrete_legendre_minus(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                                   const SolverSettings& settings = {}) {
    return Vec(-detail::d1_lagrangian(d, h, q0, q1, settings) - d.force_minus(h, q0, q1));
}

/// Forced discrete Legendre transform at the right endpoint:
///   p+ = D2 L_d(q0, q1) + f_d^+(q0, q1).
inline Vec discrete_legendre_plus(const DiscreteDataQQ& d, double h, const Vec& q0, const Vec& q1,
                                  const SolverSettings& settings = {}) {
    return Vec(detail::d2_lagrangian(d, h, q0, q1, settings) + d.force_plus(h, q0, q1));
}

}  // namespace forcedvi
