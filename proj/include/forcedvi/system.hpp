#pragma once

#include <functional>

#include "forcedvi/types.hpp"

namespace forcedvi {

/// A regular forced mechanical system on Q = R^n: a Lagrangian L(q,v) and a
/// force field pairing with position variations. Derivative evaluators are
/// optional; central finite differences are used where they are absent.
/// Immutable after construction and safe for concurrent shared use.
struct SystemFMS {
    int n = 0;
    std::string name;  ///< registry name; empty for ad-hoc systems
    std::map<std::string, double> params;

    std::function<double(const StateTQ&)> lagrangian;
    std::function<Vec(const StateTQ&)> force;  ///< force field, covector on delta-q

    // Optional analytic derivatives of L.
    std::function<Vec(const StateTQ&)> lagrangian_dq;
    std::function<Vec(const StateTQ&)> lagrangian_dv;
    std::function<Mat(const StateTQ&)> lagrangian_dvdv;  ///< fiber Hessian
    std::function<Mat(const StateTQ&)> lagrangian_dvdq;  ///< (i,j) = d2L/(dv_i dq_j)

    // Optional closed-form flow of the equations of motion, registered only
    // for systems whose trajectories are known exactly.
    std::function<StateTQ(double t, const StateTQ&)> flow_closed_form;
    std::function<TangentTQ(double t, const StateTQ&, const TangentTQ&)> tangent_flow_closed_form;

    bool has_analytic_first_derivatives() const {
        return static_cast<bool>(lagrangian_dq) && static_cast<bool>(lagrangian_dv);
    }
    bool has_closed_form_flow() const { return static_cast<bool>(flow_closed_form); }
};

inline double eval_lagrangian(const SystemFMS& sys, const StateTQ& s) {
    detail::require_state(s, sys.n, "eval_lagrangian");
    return sys.lagrangian(s);
}

inline Vec eval_force(const SystemFMS& sys, const StateTQ& s) {
    detail::require_state(s, sys.n, "eval_force");
    Vec f = sys.force(s);
    if (f.size() != sys.n) throw DimensionMismatch("eval_force: force evaluator returned wrong length");
    return f;
}

/// Legendre transform dL/dv as a covector; analytic when supplied, otherwise
/// central differences with step fd_step_scale * max(1, |v|).
inline Vec fiber_derivative(const SystemFMS& sys, const StateTQ& s,
                            const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "fiber_derivative");
    if (sys.lagrangian_dv) return sys.lagrangian_dv(s);
    const double step = detail::fd_step(settings.fd_step_scale, s.v);
    Vec g(sys.n);
    StateTQ p = s;
    for (int i = 0; i < sys.n; ++i) {
        p.v[i] = s.v[i] + step;
        const double hi = sys.lagrangian(p);
        p.v[i] = s.v[i] - step;
        const double lo = sys.lagrangian(p);
        p.v[i] = s.v[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

/// Gradient of L with respect to q (not part of the public fiber calculus but
/// needed by the equations of motion).
inline Vec lagrangian_gradient_q(const SystemFMS& sys, const StateTQ& s,
                                 const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "lagrangian_gradient_q");
    if (sys.lagrangian_dq) return sys.lagrangian_dq(s);
    const double step = detail::fd_step(settings.fd_step_scale, s.q);
    Vec g(sys.n);
    StateTQ p = s;
    for (int i = 0; i < sys.n; ++i) {
        p.q[i] = s.q[i] + step;
        const double hi = sys.lagrangian(p);
        p.q[i] = s.q[i] - step;
        const double lo = sys.lagrangian(p);
        p.q[i] = s.q[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

/// Second fiber derivative d2L/dv dv, symmetrized before return.
inline Mat fiber_hessian(const SystemFMS& sys, const StateTQ& s,
                         const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "fiber_hessian");
    Mat H(sys.n, sys.n);
    if (sys.lagrangian_dvdv) {
        H = sys.lagrangian_dvdv(s);
    } else if (sys.lagrangian_dv) {
        const double step = detail::fd_step(settings.fd_step_scale, s.v);
        StateTQ p = s;
        for (int j = 0; j < sys.n; ++j) {
            p.v[j] = s.v[j] + step;
            const Vec hi = sys.lagrangian_dv(p);
            p.v[j] = s.v[j] - step;
            const Vec lo = sys.lagrangian_dv(p);
            p.v[j] = s.v[j];
            H.col(j) = (hi - lo) / (2.0 * step);
        }
    } else {
        const double step = detail::fd_step2(s.v);
        StateTQ p = s;
        for (int i = 0; i < sys.n; ++i) {
            for (int j = i; j < sys.n; ++j) {
                p.v[i] += step;
                p.v[j] += step;
                const double pp = sys.lagrangian(p);
                p.v[j] -= 2.0 * step;
                const double pm = sys.lagrangian(p);
                p.v[i] -= 2.0 * step;
                const double mm = sys.lagrangian(p);
                p.v[j] += 2.0 * step;
                const double mp = sys.lagrangian(p);
                p.v[i] = s.v[i];
                p.v[j] = s.v[j];
                H(i, j) = (pp - pm - mp + mm) / (4.0 * step * step);
                H(j, i) = H(i, j);
            }
        }
    }
    return 0.5 * (H + H.transpose());
}

/// Mixed second derivative, (i,j) = d2L/(dv_i dq_j).
inline Mat mixed_hessian_vq(const SystemFMS& sys, const StateTQ& s,
                            const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "mixed_hessian_vq");
    if (sys.lagrangian_dvdq) return sys.lagrangian_dvdq(s);
    Mat M(sys.n, sys.n);
    if (sys.lagrangian_dv) {
        const double step = detail::fd_step(settings.fd_step_scale, s.q);
        StateTQ p = s;
        for (int j = 0; j < sys.n; ++j) {
            p.q[j] = s.q[j] + step;
            const Vec hi = sys.lagrangian_dv(p);
            p.q[j] = s.q[j] - step;
            const Vec lo = sys.lagrangian_dv(p);
            p.q[j] = s.q[j];
            M.col(j) = (hi - lo) / (2.0 * step);
        }
        return M;
    }
    const double sq = detail::fd_step2(s.q);
    const double sv = detail::fd_step2(s.v);
    StateTQ p = s;
    for (int i = 0; i < sys.n; ++i) {
        for (int j = 0; j < sys.n; ++j) {
            p.v[i] = s.v[i] + sv;
            p.q[j] = s.q[j] + sq;
            const double pp = sys.lagrangian(p);
            p.q[j] = s.q[j] - sq;
            const double pm = sys.lagrangian(p);
            p.v[i] = s.v[i] - sv;
            const double mm = sys.lagrangian(p);
            p.q[j] = s.q[j] + sq;
            const double mp = sys.lagrangian(p);
            p.v[i] = s.v[i];
            p.q[j] = s.q[j];
            M(i, j) = (pp - pm - mp + mm) / (4.0 * sq * sv);
        }
    }
    return M;
}

struct RegularityReport {
    double min_abs_det = std::numeric_limits<double>::infinity();
    double max_condition_number = 0.0;
    bool ok = false;
};

/// Samples the fiber Hessian and reports whether the Legendre transform is a
/// local diffeomorphism at every sample. Degenerate systems yield ok = false,
/// never an exception.
inline RegularityReport check_regularity(const SystemFMS& sys, const std::vector<StateTQ>& samples,
                                         const SolverSettings& settings = {}) {
    if (samples.empty()) throw std::invalid_argument("check_regularity: empty sample list");
    RegularityReport rep;
    rep.ok = true;
    for (const StateTQ& s : samples) {
        const Mat H = fiber_hessian(sys, s, settings);
        Eigen::JacobiSVD<Mat> svd(H);
        const Vec& sv = svd.singularValues();
        double det = 1.0;
        for (int i = 0; i < sv.size(); ++i) det *= sv[i];
        const double smin = sv[sv.size() - 1];
        const double cond = smin > 0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
        rep.min_abs_det = std::min(rep.min_abs_det, det);
        rep.max_condition_number = std::max(rep.max_condition_number, cond);
        if (!(det > settings.regularity_min_det) || !(cond < settings.regularity_max_cond))
            rep.ok = false;
    }
    return rep;
}

/// Acceleration of the Euler-Lagrange equations with force: solves
///   (d2L/dv dv) a = force + dL/dq - (d2L/dv dq) v.
inline Vec el_acceleration(const SystemFMS& sys, const StateTQ& s,
                           const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "el_acceleration");
    const Mat H = fiber_hessian(sys, s, settings);
    Eigen::FullPivLU<Mat> lu(H);
    const double det = std::abs(lu.determinant());
    if (!(det > settings.regularity_min_det))
        throw SingularMassMatrix("el_acceleration: fiber Hessian below regularity threshold");
    const Vec rhs = eval_force(sys, s) + lagrangian_gradient_q(sys, s, settings) -
                    mixed_hessian_vq(sys, s, settings) * s.v;
    return lu.solve(rhs);
}

/// E_L = dL/dv . v - L.
inline double energy(const SystemFMS& sys, const StateTQ& s, const SolverSettings& settings = {}) {
    detail::require_state(s, sys.n, "energy");
    return fiber_derivative(sys, s, settings).dot(s.v) - sys.lagrangian(s);
}

}  // namespace forcedvi
