#pragma once

#include <atomic>
#include <mutex>
#include <thread>

#include "forcedvi/stepper.hpp"

namespace forcedvi {

enum class FitVerdict { pass, fail, inconclusive, exact, fitted };

inline const char* to_string(FitVerdict v) {
    switch (v) {
        case FitVerdict::pass: return "pass";
        case FitVerdict::fail: return "fail";
        case FitVerdict::inconclusive: return "inconclusive";
        case FitVerdict::exact: return "exact";
        case FitVerdict::fitted: return "fitted";
    }
    return "?";
}

/// Error table over an h-grid with fitted log-log slope. Points outside
/// [error_floor, error_ceiling] are masked out of the fit: the floor drops
/// solver-noise-dominated errors, the ceiling drops pre-asymptotic ones.
struct OrderFitReport {
    std::vector<double> h_values;
    std::vector<double> errors;
    std::vector<bool> used_mask;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double r_squared = std::numeric_limits<double>::quiet_NaN();
    double expected_slope = std::numeric_limits<double>::quiet_NaN();
    double error_floor = 0.0;
    double error_ceiling = 0.0;
    FitVerdict verdict = FitVerdict::inconclusive;

    int used_count() const {
        int c = 0;
        for (bool b : used_mask) c += b ? 1 : 0;
        return c;
    }
};

/// Default experiment grid h_k = 0.2 * 2^{-k}, k = 0..6.
inline std::vector<double> default_h_grid() {
    std::vector<double> h;
    for (int k = 0; k <= 6; ++k) h.push_back(0.2 * std::pow(2.0, -k));
    return h;
}

/// Least-squares fit of log(error) against log(h) on the usable points.
/// With fewer than 3 usable points the verdict is inconclusive (exact when
/// every error sits below the floor); with an expected slope the verdict is
/// pass iff slope lies in [expected - 0.25, expected + 0.75].
inline OrderFitReport estimate_order(
    const std::vector<double>& h_values, const std::vector<double>& errors,
    double error_floor = 1e-10, double error_ceiling = 1e-1,
    double expected_slope = std::numeric_limits<double>::quiet_NaN()) {
    if (h_values.size() != errors.size())
        throw DimensionMismatch("estimate_order: grid/error length mismatch");
    for (size_t i = 1; i < h_values.size(); ++i)
        if (!(h_values[i] < h_values[i - 1]))
            throw std::invalid_argument("estimate_order: h grid must be strictly decreasing");

    OrderFitReport rep;
    rep.h_values = h_values;
    rep.errors = errors;
    rep.error_floor = error_floor;
    rep.error_ceiling = error_ceiling;
    rep.expected_slope = expected_slope;
    rep.used_mask.resize(h_values.size(), false);

    std::vector<double> x, y;
    bool all_below_floor = true;
    for (size_t i = 0; i < h_values.size(); ++i) {
        if (errors[i] > error_floor) all_below_floor = false;
        if (errors[i] >= error_floor && errors[i] <= error_ceiling) {
            rep.used_mask[i] = true;
            x.push_back(std::log(h_values[i]));
            y.push_back(std::log(errors[i]));
        }
    }
    if (x.size() < 3) {
        rep.verdict = all_below_floor ? FitVerdict::exact : FitVerdict::inconclusive;
        return rep;
    }

    const double m = static_cast<double>(x.size());
    double xbar = 0, ybar = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        xbar += x[i];
        ybar += y[i];
    }
    xbar /= m;
    ybar /= m;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - xbar) * (x[i] - xbar);
        sxy += (x[i] - xbar) * (y[i] - ybar);
        syy += (y[i] - ybar) * (y[i] - ybar);
    }
    rep.slope = sxy / sxx;
    rep.intercept = ybar - rep.slope * xbar;
    double ss_res = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double fit = rep.intercept + rep.slope * x[i];
        ss_res += (y[i] - fit) * (y[i] - fit);
    }
    rep.r_squared = syy > 0 ? 1.0 - ss_res / syy : 1.0;

    if (std::isnan(expected_slope)) {
        rep.verdict = FitVerdict::fitted;
    } else {
        rep.verdict = (rep.slope >= expected_slope - 0.25 && rep.slope <= expected_slope + 0.75)
                          ? FitVerdict::pass
                          : FitVerdict::fail;
    }
    return rep;
}

/// One-step error of the TQ stepper against the continuous flow, sup norm
/// over the concatenated (q, v) coordinates.
inline double flow_error_tq(const DiscreteDataTQ& data, const DiscretizationTQ& d,
                            const FlowOracle& oracle, double h, const StateTQ& s,
                            const SolverSettings& settings = {}) {
    const StateTQ stepped = step_tq(data, d, h, s, settings);
    const StateTQ truth = flow(oracle, h, s);
    return std::max(detail::sup_norm(stepped.q - truth.q), detail::sup_norm(stepped.v - truth.v));
}

/// One-step error of the Q x Q stepper: seeds (q0, q1) with the exact
/// boundary pair at s (one-sided alpha) and steps once to q2. The error
/// combines the position gap against the flow at 2h with the gap of the TQ
/// state recovered from the stepped pair (q1, q2) against the flow at h; the
/// recovered velocity is what the contact-order statement for Q x Q flows
/// measures, and it dominates when symmetric rules superconverge in the
/// position alone.
inline double flow_error_qq(const DiscreteDataQQ& data, const FlowOracle& oracle, double h,
                            const StateTQ& s, const SolverSettings& settings = {}) {
    const Vec q0 = s.q;
    const Vec q1 = flow(oracle, h, s).q;
    const Vec q2 = step_qq(data, h, q0, q1, settings);
    const Vec truth2 = flow(oracle, 2.0 * h, s).q;
    double err = detail::sup_norm(q2 - truth2);

    const DiscretizationTQ exact_d = make_exact_discretization(oracle, alpha_one_sided());
    const StateTQ recovered = boundary_inverse(exact_d, &oracle, h, q1, q2, settings);
    const StateTQ truth1 = flow(oracle, h, s);
    err = std::max(err, detail::sup_norm(recovered.q - truth1.q));
    err = std::max(err, detail::sup_norm(recovered.v - truth1.v));
    return err;
}

namespace detail {

template <class F>
void parallel_for(int count, int threads, F&& body) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::mutex mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline OrderFitReport fit_errors(const std::vector<double>& h_grid, std::vector<double> errors,
                                 int r_expected, const SolverSettings& settings) {
    return estimate_order(h_grid, std::move(errors), 100.0 * settings.newton_tol, 1e-1,
                          static_cast<double>(r_expected) + 1.0);
}

}  // namespace detail

/// Contact-order experiment for the TQ stepper: one-step errors over the
/// grid, fitted slope compared against the order theorem's r + 1 target.
inline OrderFitReport order_of_flow_experiment_tq(const DiscreteDataTQ& data,
                                                  const DiscretizationTQ& d,
                                                  const FlowOracle& oracle, int r_expected,
                                                  const StateTQ& s0,
                                                  const std::vector<double>& h_grid,
                                                  const SolverSettings& settings = {},
                                                  int threads = 1) {
    std::vector<double> errors(h_grid.size());
    detail::parallel_for(static_cast<int>(h_grid.size()), threads, [&](int i) {
        errors[i] = flow_error_tq(data, d, oracle, h_grid[i], s0, settings);
    });
    return detail::fit_errors(h_grid, std::move(errors), r_expected, settings);
}

/// Contact-order experiment for the Q x Q stepper.
inline OrderFitReport order_of_flow_experiment_qq(const DiscreteDataQQ& data,
                                                  const FlowOracle& oracle, int r_expected,
                                                  const StateTQ& s0,
                                                  const std::vector<double>& h_grid,
                                                  const SolverSettings& settings = {},
                                                  int threads = 1) {
    std::vector<double> errors(h_grid.size());
    detail::parallel_for(static_cast<int>(h_grid.size()), threads, [&](int i) {
        errors[i] = flow_error_qq(data, oracle, h_grid[i], s0, settings);
    });
    return detail::fit_errors(h_grid, std::move(errors), r_expected, settings);
}

/// Secondary diagnostic: global error over a fixed horizon T (expected slope
/// r, one less than the one-step slope). The trajectory is seeded with exact
/// samples and compared against the flow at every grid time.
inline OrderFitReport global_error_experiment_qq(const DiscreteDataQQ& data,
                                                 const FlowOracle& oracle, int r_expected,
                                                 const StateTQ& s0, double horizon,
                                                 const std::vector<double>& h_grid,
                                                 const SolverSettings& settings = {},
                                                 int threads = 1) {
    std::vector<double> errors(h_grid.size());
    detail::parallel_for(static_cast<int>(h_grid.size()), threads, [&](int i) {
        const double h = h_grid[i];
        const int N = std::max(2, static_cast<int>(std::llround(horizon / h)));
        const std::vector<StateTQ> samples = sample_trajectory(oracle, s0, h, N);
        TrajectoryDiscrete traj = run_trajectory(data, h, samples[0].q, samples[1].q, N, settings);
        if (!traj.complete())
            throw NewtonNoConvergence("global_error_experiment: step failed at k=" +
                                          std::to_string(*traj.failed_step),
                                      0.0, 0);
        double worst = 0.0;
        for (int k = 0; k <= N; ++k)
            worst = std::max(worst, detail::sup_norm(traj.positions[k] - samples[k].q));
        errors[i] = worst;
    });
    OrderFitReport rep = estimate_order(h_grid, std::move(errors), 100.0 * settings.newton_tol,
                                        1e-1, static_cast<double>(r_expected));
    return rep;
}

struct ExactnessReport {
    double max_residual = 0.0;      ///< worst DEL residual over sampled flow points
    double max_position_gap = 0.0;  ///< worst gap between discrete trajectory and flow samples
    double residual_tol = 0.0;
    double position_tol = 0.0;
    bool ok = false;
};

/// Empirical check of the exactness theorems for given Q x Q data: (a) the
/// sampled continuous trajectory must satisfy the DEL equations, and (b) the
/// discrete trajectory seeded from the first two samples must reproduce the
/// samples. Pass non-exact data to use it as a negative control.
inline ExactnessReport exactness_check(const FlowOracle& oracle, const DiscreteDataQQ& data,
                                       double h, const StateTQ& s0, int N,
                                       const SolverSettings& settings = {},
                                       double residual_tol = -1.0, double position_tol = 1e-8) {
    if (residual_tol <= 0.0)
        residual_tol =
            100.0 * std::max({settings.newton_tol, settings.quad_tol, settings.ode_tol});
    ExactnessReport rep;
    rep.residual_tol = residual_tol;
    rep.position_tol = position_tol;

    const std::vector<StateTQ> samples = sample_trajectory(oracle, s0, h, N);
    for (int k = 1; k + 1 <= N; ++k) {
        const Vec r = del_residual(data, h, samples[k - 1].q, samples[k].q, samples[k + 1].q,
                                   settings);
        rep.max_residual = std::max(rep.max_residual, detail::sup_norm(r));
    }

    TrajectoryDiscrete traj = run_trajectory(data, h, samples[0].q, samples[1].q, N, settings);
    if (!traj.complete()) {
        rep.max_position_gap = std::numeric_limits<double>::infinity();
    } else {
        for (int k = 0; k <= N; ++k)
            rep.max_position_gap =
                std::max(rep.max_position_gap, detail::sup_norm(traj.positions[k] - samples[k].q));
    }
    rep.ok = rep.max_residual <= residual_tol && rep.max_position_gap <= position_tol;
    return rep;
}

/// Convenience overload building the exact discrete data first.
inline ExactnessReport exactness_check(const FlowOracle& oracle, double h, const StateTQ& s0, int N,
                                       const SolverSettings& settings = {},
                                       double residual_tol = -1.0, double position_tol = 1e-8) {
    return exactness_check(oracle, exact_discrete_data_qq(oracle, settings), h, s0, N, settings,
                           residual_tol, position_tol);
}

struct CorrespondenceReport {
    std::vector<double> h_values;
    std::vector<double> discrepancies;  ///< per-h gap between the two step routes
    double max_discrepancy = 0.0;
    double tol = 0.0;
    bool ok = false;
};

/// Checks that stepping on TQ and mapping through the boundary pair agrees
/// with stepping the corresponding Q x Q data directly.
inline CorrespondenceReport correspondence_check(const DiscreteDataTQ& data_tq,
                                                 const DiscretizationTQ& d,
                                                 const DiscreteDataQQ& data_qq,
                                                 const std::vector<double>& h_grid,
                                                 const StateTQ& s0,
                                                 const SolverSettings& settings = {},
                                                 double tol = 1e-8) {
    CorrespondenceReport rep;
    rep.h_values = h_grid;
    rep.tol = tol;
    for (double h : h_grid) {
        const StateTQ stepped = step_tq(data_tq, d, h, s0, settings);
        const auto [q1_tq, q2_tq] = boundary_pm(d, h, stepped);
        const auto [q0, q1] = boundary_pm(d, h, s0);
        const Vec q2 = step_qq(data_qq, h, q0, q1, settings);
        const double gap = std::max(detail::sup_norm(q1_tq - q1), detail::sup_norm(q2_tq - q2));
        rep.discrepancies.push_back(gap);
        rep.max_discrepancy = std::max(rep.max_discrepancy, gap);
    }
    rep.ok = rep.max_discrepancy <= tol;
    return rep;
}

}  // namespace forcedvi
