#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace forcedvi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Point of the tangent bundle TQ in chart coordinates: position q and
/// velocity v, both of length n.
struct StateTQ {
    Vec q;
    Vec v;

    StateTQ() = default;
    StateTQ(Vec q_, Vec v_) : q(std::move(q_)), v(std::move(v_)) {}
    StateTQ(std::initializer_list<double> q_, std::initializer_list<double> v_) {
        q.resize(static_cast<Eigen::Index>(q_.size()));
        v.resize(static_cast<Eigen::Index>(v_.size()));
        Eigen::Index i = 0;
        for (double x : q_) q[i++] = x;
        i = 0;
        for (double x : v_) v[i++] = x;
    }

    int dim() const { return static_cast<int>(q.size()); }

    /// Flatten to a length-2n vector (q stacked over v).
    Vec packed() const {
        Vec y(q.size() + v.size());
        y << q, v;
        return y;
    }
    static StateTQ unpack(const Vec& y) {
        const Eigen::Index n = y.size() / 2;
        return StateTQ(y.head(n), y.tail(n));
    }
};

/// Tangent vector (delta-q, delta-v) at a point of TQ.
struct TangentTQ {
    Vec dq;
    Vec dv;

    TangentTQ() = default;
    TangentTQ(Vec dq_, Vec dv_) : dq(std::move(dq_)), dv(std::move(dv_)) {}

    Vec packed() const {
        Vec y(dq.size() + dv.size());
        y << dq, dv;
        return y;
    }
    static TangentTQ unpack(const Vec& y) {
        const Eigen::Index n = y.size() / 2;
        return TangentTQ(y.head(n), y.tail(n));
    }
};

/// Shared numeric tolerances and limits.
struct SolverSettings {
    double newton_tol = 1e-12;     ///< residual sup-norm accepted by Newton solvers
    int newton_max_iter = 50;
    double fd_step_scale = 6.0554544523933429e-6;  ///< cbrt(machine eps), relative FD step
    double quad_tol = 1e-12;       ///< adaptive quadrature tolerance
    double ode_tol = 1e-12;        ///< ODE oracle step-halving tolerance

    // Regularity thresholds for the fiber Hessian (configuration, not magic
    // numbers inside the operations).
    double regularity_min_det = 1e-10;
    double regularity_max_cond = 1e10;

    void validate() const {
        if (!(newton_tol > 0) || !(fd_step_scale > 0) || !(quad_tol > 0) || !(ode_tol > 0))
            throw std::invalid_argument("SolverSettings: tolerances must be positive");
        if (newton_max_iter < 1)
            throw std::invalid_argument("SolverSettings: newton_max_iter must be >= 1");
    }
};

struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SingularMassMatrix : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularJacobian : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Newton iteration failed to reach the residual tolerance.
struct NewtonNoConvergence : std::runtime_error {
    double final_residual;
    int iterations;
    NewtonNoConvergence(const std::string& what, double res, int iters)
        : std::runtime_error(what + " (residual " + std::to_string(res) + " after " +
                             std::to_string(iters) + " iterations)"),
          final_residual(res),
          iterations(iters) {}
};

/// Step-halving or panel-bisection hit its cap without meeting its tolerance.
struct NoConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The fixed-endpoint variation space did not have dimension n.
struct DegenerateVariationSpace : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline bool all_finite(const Vec& x) { return x.allFinite(); }

inline void require_state(const StateTQ& s, int n, const char* where) {
    if (s.q.size() != n || s.v.size() != n)
        throw DimensionMismatch(std::string(where) + ": state dimension mismatch");
    if (!s.q.allFinite() || !s.v.allFinite())
        throw std::invalid_argument(std::string(where) + ": non-finite state entries");
}

inline double sup_norm(const Vec& x) { return x.size() == 0 ? 0.0 : x.lpNorm<Eigen::Infinity>(); }

/// Relative FD step anchored at the sup-norm of the point being perturbed.
inline double fd_step(double scale, const Vec& x) {
    return scale * std::max(1.0, sup_norm(x));
}

/// Step for second-order differences (quartic root of machine eps).
inline double fd_step2(const Vec& x) {
    return 1.220703125e-4 * std::max(1.0, sup_norm(x));
}

}  // namespace detail

}  // namespace forcedvi
