#pragma once

#include <set>

#include "forcedvi/system.hpp"

namespace forcedvi {

/// Unit-mass particle with linear friction on Q = R:
///   L(q,v) = v^2/2, force = -alpha v.
/// The flow is known in closed form, so this system doubles as the analytic
/// ground truth for oracle and exactness tests.
inline SystemFMS make_damped_particle(double alpha) {
    if (!(alpha > 0)) throw std::invalid_argument("damped_particle: alpha must be positive");
    SystemFMS sys;
    sys.n = 1;
    sys.name = "damped_particle";
    sys.params = {{"alpha", alpha}};
    sys.lagrangian = [](const StateTQ& s) { return 0.5 * s.v.squaredNorm(); };
    sys.force = [alpha](const StateTQ& s) { return Vec(-alpha * s.v); };
    sys.lagrangian_dq = [](const StateTQ& s) { return Vec(Vec::Zero(s.q.size())); };
    sys.lagrangian_dv = [](const StateTQ& s) { return s.v; };
    sys.lagrangian_dvdv = [](const StateTQ& s) { return Mat(Mat::Identity(s.v.size(), s.v.size())); };
    sys.lagrangian_dvdq = [](const StateTQ& s) { return Mat(Mat::Zero(s.v.size(), s.v.size())); };
    sys.flow_closed_form = [alpha](double t, const StateTQ& s) {
        const double decay = std::exp(-alpha * t);
        const double reach = (1.0 - decay) / alpha;
        return StateTQ(s.q + reach * s.v, decay * s.v);
    };
    sys.tangent_flow_closed_form = [alpha](double t, const StateTQ&, const TangentTQ& ds) {
        const double decay = std::exp(-alpha * t);
        const double reach = (1.0 - decay) / alpha;
        return TangentTQ(ds.dq + reach * ds.dv, decay * ds.dv);
    };
    return sys;
}

/// Harmonic oscillator with viscous damping:
///   L = v^2/2 - omega^2 q^2/2, force = -gamma v.
inline SystemFMS make_forced_oscillator(double omega, double gamma) {
    SystemFMS sys;
    sys.n = 1;
    sys.name = "forced_oscillator";
    sys.params = {{"omega", omega}, {"gamma", gamma}};
    const double w2 = omega * omega;
    sys.lagrangian = [w2](const StateTQ& s) { return 0.5 * s.v.squaredNorm() - 0.5 * w2 * s.q.squaredNorm(); };
    sys.force = [gamma](const StateTQ& s) { return Vec(-gamma * s.v); };
    sys.lagrangian_dq = [w2](const StateTQ& s) { return Vec(-w2 * s.q); };
    sys.lagrangian_dv = [](const StateTQ& s) { return s.v; };
    sys.lagrangian_dvdv = [](const StateTQ& s) { return Mat(Mat::Identity(s.v.size(), s.v.size())); };
    sys.lagrangian_dvdq = [](const StateTQ& s) { return Mat(Mat::Zero(s.v.size(), s.v.size())); };
    return sys;
}

/// Planar pendulum with viscous damping:
///   L = v^2/2 + omega^2 cos q, force = -gamma v.
inline SystemFMS make_forced_pendulum(double omega, double gamma) {
    SystemFMS sys;
    sys.n = 1;
    sys.name = "forced_pendulum";
    sys.params = {{"omega", omega}, {"gamma", gamma}};
    const double w2 = omega * omega;
    sys.lagrangian = [w2](const StateTQ& s) { return 0.5 * s.v.squaredNorm() + w2 * std::cos(s.q[0]); };
    sys.force = [gamma](const StateTQ& s) { return Vec(-gamma * s.v); };
    sys.lagrangian_dq = [w2](const StateTQ& s) {
        Vec g(1);
        g[0] = -w2 * std::sin(s.q[0]);
        return g;
    };
    sys.lagrangian_dv = [](const StateTQ& s) { return s.v; };
    sys.lagrangian_dvdv = [](const StateTQ&) { return Mat(Mat::Identity(1, 1)); };
    sys.lagrangian_dvdq = [](const StateTQ&) { return Mat(Mat::Zero(1, 1)); };
    return sys;
}

/// Duffing oscillator with viscous damping:
///   L = v^2/2 - alpha q^2/2 - beta q^4/4, force = -gamma v.
inline SystemFMS make_damped_duffing(double alpha, double beta, double gamma) {
    SystemFMS sys;
    sys.n = 1;
    sys.name = "damped_duffing";
    sys.params = {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}};
    sys.lagrangian = [alpha, beta](const StateTQ& s) {
        const double q = s.q[0];
        return 0.5 * s.v.squaredNorm() - 0.5 * alpha * q * q - 0.25 * beta * q * q * q * q;
    };
    sys.force = [gamma](const StateTQ& s) { return Vec(-gamma * s.v); };
    sys.lagrangian_dq = [alpha, beta](const StateTQ& s) {
        Vec g(1);
        const double q = s.q[0];
        g[0] = -alpha * q - beta * q * q * q;
        return g;
    };
    sys.lagrangian_dv = [](const StateTQ& s) { return s.v; };
    sys.lagrangian_dvdv = [](const StateTQ&) { return Mat(Mat::Identity(1, 1)); };
    sys.lagrangian_dvdq = [](const StateTQ&) { return Mat(Mat::Zero(1, 1)); };
    return sys;
}

/// Free particle on R^n (straight-line flow), mostly used by tests.
inline SystemFMS make_free_particle(int n) {
    SystemFMS sys;
    sys.n = n;
    sys.name = "free_particle";
    sys.lagrangian = [](const StateTQ& s) { return 0.5 * s.v.squaredNorm(); };
    sys.force = [n](const StateTQ&) { return Vec(Vec::Zero(n)); };
    sys.lagrangian_dq = [n](const StateTQ&) { return Vec(Vec::Zero(n)); };
    sys.lagrangian_dv = [](const StateTQ& s) { return s.v; };
    sys.lagrangian_dvdv = [n](const StateTQ&) { return Mat(Mat::Identity(n, n)); };
    sys.lagrangian_dvdq = [n](const StateTQ&) { return Mat(Mat::Zero(n, n)); };
    sys.flow_closed_form = [](double t, const StateTQ& s) { return StateTQ(s.q + t * s.v, s.v); };
    sys.tangent_flow_closed_form = [](double t, const StateTQ&, const TangentTQ& ds) {
        return TangentTQ(ds.dq + t * ds.dv, ds.dv);
    };
    return sys;
}

inline const std::map<std::string, std::set<std::string>>& builtin_system_params() {
    static const std::map<std::string, std::set<std::string>> table = {
        {"damped_particle", {"alpha"}},
        {"forced_oscillator", {"omega", "gamma"}},
        {"forced_pendulum", {"omega", "gamma"}},
        {"damped_duffing", {"alpha", "beta", "gamma"}},
    };
    return table;
}

/// Builds a registered system from a validated name/params pair.
inline SystemFMS make_system(const std::string& name, const std::map<std::string, double>& params) {
    auto get = [&](const char* key) {
        auto it = params.find(key);
        if (it == params.end()) throw std::invalid_argument("make_system: missing parameter " + std::string(key));
        return it->second;
    };
    if (name == "damped_particle") return make_damped_particle(get("alpha"));
    if (name == "forced_oscillator") return make_forced_oscillator(get("omega"), get("gamma"));
    if (name == "forced_pendulum") return make_forced_pendulum(get("omega"), get("gamma"));
    if (name == "damped_duffing") return make_damped_duffing(get("alpha"), get("beta"), get("gamma"));
    throw std::invalid_argument("make_system: unknown system " + name);
}

}  // namespace forcedvi
