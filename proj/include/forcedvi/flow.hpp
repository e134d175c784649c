#pragma once

#include "forcedvi/system.hpp"

namespace forcedvi {

enum class FlowMode { analytic, numeric };

/// Ground-truth evaluator of the continuous flow of a regular forced system
/// and of its tangent map. Analytic mode is available only for systems that
/// register a closed-form flow; numeric mode integrates the equations of
/// motion with classical RK4, halving the fixed step until two successive
/// estimates agree within ode_tol (step cap 2^20) and returning the
/// Richardson-extrapolated fine solution.
struct FlowOracle {
    SystemFMS sys;
    FlowMode mode = FlowMode::numeric;
    SolverSettings settings;
};

inline FlowOracle make_flow_oracle(SystemFMS sys, const SolverSettings& settings = {},
                                   bool prefer_analytic = true) {
    FlowOracle o;
    o.mode = (prefer_analytic && sys.has_closed_form_flow()) ? FlowMode::analytic : FlowMode::numeric;
    o.sys = std::move(sys);
    o.settings = settings;
    return o;
}

inline FlowOracle make_flow_oracle(SystemFMS sys, FlowMode mode, const SolverSettings& settings = {}) {
    if (mode == FlowMode::analytic && !sys.has_closed_form_flow())
        throw std::invalid_argument("FlowOracle: analytic mode requires a registered closed-form flow");
    FlowOracle o;
    o.sys = std::move(sys);
    o.mode = mode;
    o.settings = settings;
    return o;
}

namespace detail {

/// First-order form of the equations of motion on the packed state (q, v).
/// Non-finite states (integrator overshoot near blow-up) yield NaN rather
/// than a spurious regularity error; the halving loop then reports its cap.
inline Vec ode_rhs(const SystemFMS& sys, const SolverSettings& settings, const Vec& y) {
    if (!y.allFinite()) return Vec::Constant(y.size(), std::numeric_limits<double>::quiet_NaN());
    const StateTQ s = StateTQ::unpack(y);
    Vec dy(y.size());
    dy.head(sys.n) = s.v;
    dy.tail(sys.n) = el_acceleration(sys, s, settings);
    return dy;
}

template <class F>
Vec rk4_fixed(F&& f, Vec y, double t, int steps) {
    const double h = t / steps;
    for (int k = 0; k < steps; ++k) {
        const Vec k1 = f(y);
        const Vec k2 = f(y + 0.5 * h * k1);
        const Vec k3 = f(y + 0.5 * h * k2);
        const Vec k4 = f(y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

/// RK4 with step halving until two successive grids agree within tol.
template <class F>
Vec integrate_to(F&& f, const Vec& y0, double t, double tol) {
    if (t == 0.0) return y0;
    constexpr int step_cap = 1 << 20;
    int steps = 8;
    Vec coarse = rk4_fixed(f, y0, t, steps);
    while (true) {
        steps *= 2;
        if (steps > step_cap)
            throw NoConvergence("flow: step-halving cap reached without agreement");
        Vec fine = rk4_fixed(f, y0, t, steps);
        if (coarse.allFinite() && fine.allFinite() &&
            (fine - coarse).lpNorm<Eigen::Infinity>() <= tol) {
            return fine + (fine - coarse) / 15.0;
        }
        coarse.swap(fine);
    }
}

/// Jacobian of the equations-of-motion RHS by central differences.
inline Mat rhs_jacobian_fd(const SystemFMS& sys, const SolverSettings& settings, const Vec& y) {
    const int m = static_cast<int>(y.size());
    const double step = fd_step(settings.fd_step_scale, y);
    Mat J(m, m);
    Vec p = y;
    for (int j = 0; j < m; ++j) {
        p[j] = y[j] + step;
        const Vec hi = ode_rhs(sys, settings, p);
        p[j] = y[j] - step;
        const Vec lo = ode_rhs(sys, settings, p);
        p[j] = y[j];
        J.col(j) = (hi - lo) / (2.0 * step);
    }
    return J;
}

}  // namespace detail

/// Evaluates the flow at time t from state s.
inline StateTQ flow(const FlowOracle& oracle, double t, const StateTQ& s) {
    detail::require_state(s, oracle.sys.n, "flow");
    if (oracle.mode == FlowMode::analytic) return oracle.sys.flow_closed_form(t, s);
    if (t == 0.0) return s;
    auto rhs = [&](const Vec& y) { return detail::ode_rhs(oracle.sys, oracle.settings, y); };
    return StateTQ::unpack(detail::integrate_to(rhs, s.packed(), t, oracle.settings.ode_tol));
}

/// Tangent map of the flow applied to one tangent vector: integrates the
/// variational equations alongside the base flow (numeric mode) or
/// differentiates the closed form (analytic mode).
inline TangentTQ tangent_flow(const FlowOracle& oracle, double t, const StateTQ& s,
                              const TangentTQ& ds) {
    detail::require_state(s, oracle.sys.n, "tangent_flow");
    if (oracle.mode == FlowMode::analytic) return oracle.sys.tangent_flow_closed_form(t, s, ds);
    if (t == 0.0) return ds;
    const int m = 2 * oracle.sys.n;
    Vec y0(2 * m);
    y0.head(m) = s.packed();
    y0.tail(m) = ds.packed();
    auto rhs = [&](const Vec& y) {
        Vec dy(y.size());
        dy.head(m) = detail::ode_rhs(oracle.sys, oracle.settings, y.head(m));
        dy.tail(m) = detail::rhs_jacobian_fd(oracle.sys, oracle.settings, y.head(m)) * y.tail(m);
        return dy;
    };
    const Vec yt = detail::integrate_to(rhs, y0, t, oracle.settings.ode_tol);
    return TangentTQ::unpack(yt.tail(m));
}

/// Flow together with the full 2n x 2n state Jacobian, integrated in one pass
/// so all columns share the same accepted step size.
inline std::pair<StateTQ, Mat> flow_with_jacobian(const FlowOracle& oracle, double t,
                                                  const StateTQ& s) {
    detail::require_state(s, oracle.sys.n, "flow_with_jacobian");
    const int m = 2 * oracle.sys.n;
    if (oracle.mode == FlowMode::analytic) {
        Mat J(m, m);
        for (int j = 0; j < m; ++j) {
            Vec e = Vec::Zero(m);
            e[j] = 1.0;
            J.col(j) = oracle.sys.tangent_flow_closed_form(t, s, TangentTQ::unpack(e)).packed();
        }
        return {oracle.sys.flow_closed_form(t, s), J};
    }
    if (t == 0.0) return {s, Mat::Identity(m, m)};
    Vec y0(m + m * m);
    y0.head(m) = s.packed();
    Mat id = Mat::Identity(m, m);
    y0.tail(m * m) = Eigen::Map<const Vec>(id.data(), m * m);
    auto rhs = [&](const Vec& y) {
        Vec dy(y.size());
        dy.head(m) = detail::ode_rhs(oracle.sys, oracle.settings, y.head(m));
        const Mat J = detail::rhs_jacobian_fd(oracle.sys, oracle.settings, y.head(m));
        Eigen::Map<const Mat> V(y.tail(m * m).data(), m, m);
        Mat dV = J * V;
        dy.tail(m * m) = Eigen::Map<const Vec>(dV.data(), m * m);
        return dy;
    };
    const Vec yt = detail::integrate_to(rhs, y0, t, oracle.settings.ode_tol);
    Mat J = Eigen::Map<const Mat>(yt.tail(m * m).data(), m, m);
    return {StateTQ::unpack(yt.head(m)), J};
}

/// Samples flow(k h, s0) for k = 0..N by composing single-step flows.
inline std::vector<StateTQ> sample_trajectory(const FlowOracle& oracle, const StateTQ& s0, double h,
                                              int N) {
    if (N < 1) throw std::invalid_argument("sample_trajectory: N must be >= 1");
    if (!(h > 0)) throw std::invalid_argument("sample_trajectory: h must be positive");
    std::vector<StateTQ> out;
    out.reserve(N + 1);
    out.push_back(s0);
    for (int k = 0; k < N; ++k) out.push_back(flow(oracle, h, out.back()));
    return out;
}

}  // namespace forcedvi
