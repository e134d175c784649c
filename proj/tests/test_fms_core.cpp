#include <catch2/catch.hpp>

#include "forcedvi/builtin_systems.hpp"
#include "support.hpp"

using namespace forcedvi;
using testsupport::Rng;

namespace {

StateTQ s1(double q, double v) { return StateTQ({q}, {v}); }

SystemFMS fd_only_copy(SystemFMS sys) {
    sys.lagrangian_dq = nullptr;
    sys.lagrangian_dv = nullptr;
    sys.lagrangian_dvdv = nullptr;
    sys.lagrangian_dvdq = nullptr;
    return sys;
}

}  // namespace

TEST_CASE("eval_lagrangian on the built-in systems") {
    const SystemFMS particle = make_damped_particle(1.0);
    CHECK(eval_lagrangian(particle, s1(3.0, 2.0)) == Approx(2.0));
    CHECK(eval_lagrangian(particle, s1(5.0, 0.0)) == 0.0);

    const SystemFMS osc = make_forced_oscillator(1.0, 0.1);
    CHECK(eval_lagrangian(osc, s1(1.0, 1.0)) == Approx(0.0).margin(1e-15));

    StateTQ bad({1.0, 2.0}, {0.0, 0.0});
    CHECK_THROWS_AS(eval_lagrangian(particle, bad), DimensionMismatch);
}

TEST_CASE("eval_force on the damped particle") {
    CHECK(eval_force(make_damped_particle(1.0), s1(0.0, 2.0))[0] == Approx(-2.0));
    CHECK(eval_force(make_damped_particle(1.0), s1(4.0, 0.0))[0] == 0.0);
    CHECK(eval_force(make_damped_particle(0.5), s1(0.0, 4.0))[0] == Approx(-2.0));
}

TEST_CASE("fiber_derivative: analytic cases and finite-difference fallback") {
    CHECK(fiber_derivative(make_damped_particle(1.0), s1(0.0, 3.0))[0] == Approx(3.0));
    CHECK(fiber_derivative(make_damped_particle(1.0), s1(0.0, 0.0))[0] == 0.0);

    // L = |v|^2/2 + q.v in R^2, gradient in v is v + q.
    SystemFMS sys;
    sys.n = 2;
    sys.lagrangian = [](const StateTQ& s) { return 0.5 * s.v.squaredNorm() + s.q.dot(s.v); };
    sys.force = [](const StateTQ&) { return Vec(Vec::Zero(2)); };
    const StateTQ s({1.0, 2.0}, {0.0, 0.0});
    const Vec g = fiber_derivative(sys, s);
    CHECK(g[0] == Approx(1.0).margin(1e-8));
    CHECK(g[1] == Approx(2.0).margin(1e-8));
}

TEST_CASE("fiber_hessian values and symmetry") {
    CHECK(fiber_hessian(make_damped_particle(1.0), s1(0.0, 1.0))(0, 0) == Approx(1.0));

    SystemFMS deg;  // L independent of v
    deg.n = 1;
    deg.lagrangian = [](const StateTQ& s) { return s.q[0] * s.q[0]; };
    deg.force = [](const StateTQ&) { return Vec(Vec::Zero(1)); };
    CHECK(fiber_hessian(deg, s1(1.0, 1.0))(0, 0) == Approx(0.0).margin(1e-7));

    SystemFMS quad;  // L = v^T M v / 2, M = diag(2, 3)
    quad.n = 2;
    quad.lagrangian = [](const StateTQ& s) {
        return 0.5 * (2.0 * s.v[0] * s.v[0] + 3.0 * s.v[1] * s.v[1]);
    };
    quad.force = [](const StateTQ&) { return Vec(Vec::Zero(2)); };
    const Mat H = fiber_hessian(quad, StateTQ({0.0, 0.0}, {0.4, -0.3}));
    CHECK(H(0, 0) == Approx(2.0).margin(1e-6));
    CHECK(H(1, 1) == Approx(3.0).margin(1e-6));
    CHECK(H(0, 1) == Approx(0.0).margin(1e-6));
    CHECK(H(0, 1) == H(1, 0));  // exact after symmetrization
}

TEST_CASE("fiber_derivative agrees with an independent Richardson oracle") {
    const SystemFMS duffing = make_damped_duffing(1.0, 0.4, 0.2);
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        const StateTQ s = rng.state(1, 2.0);
        auto L_of_v = [&](double v) {
            return eval_lagrangian(duffing, StateTQ(s.q, Vec::Constant(1, v)));
        };
        const double oracle = testsupport::richardson_derivative(L_of_v, s.v[0]);
        CHECK(fiber_derivative(duffing, s)[0] == Approx(oracle).epsilon(1e-8).margin(1e-8));
    }
}

TEST_CASE("fiber_hessian matches directional second differences of L") {
    Rng rng(42);
    const SystemFMS duffing = fd_only_copy(make_damped_duffing(1.0, 0.4, 0.2));
    for (int trial = 0; trial < 20; ++trial) {
        const StateTQ s = rng.state(1, 2.0);
        const Mat H = fiber_hessian(duffing, s);
        const double eps = 1e-4;
        StateTQ hi = s, lo = s;
        hi.v[0] += eps;
        lo.v[0] -= eps;
        const double second = (eval_lagrangian(duffing, hi) - 2.0 * eval_lagrangian(duffing, s) +
                               eval_lagrangian(duffing, lo)) /
                              (eps * eps);
        CHECK(H(0, 0) == Approx(second).epsilon(1e-6).margin(1e-6));
    }
}

TEST_CASE("check_regularity") {
    Rng rng(7);
    std::vector<StateTQ> samples;
    for (int i = 0; i < 10; ++i) samples.push_back(rng.state(1, 2.0));

    const auto ok = check_regularity(make_damped_particle(1.0), samples);
    CHECK(ok.ok);
    CHECK(ok.min_abs_det == Approx(1.0));

    SystemFMS bilinear;  // L = q.v has identically singular fiber Hessian
    bilinear.n = 1;
    bilinear.lagrangian = [](const StateTQ& s) { return s.q[0] * s.v[0]; };
    bilinear.force = [](const StateTQ&) { return Vec(Vec::Zero(1)); };
    CHECK_FALSE(check_regularity(bilinear, samples).ok);

    SystemFMS quartic;  // L = v^4/4 degenerates exactly at v = 0
    quartic.n = 1;
    quartic.lagrangian = [](const StateTQ& s) { return 0.25 * std::pow(s.v[0], 4); };
    quartic.force = [](const StateTQ&) { return Vec(Vec::Zero(1)); };
    quartic.lagrangian_dvdv = [](const StateTQ& s) {
        Mat H(1, 1);
        H(0, 0) = 3.0 * s.v[0] * s.v[0];
        return H;
    };
    CHECK_FALSE(check_regularity(quartic, {s1(0.0, 0.0)}).ok);
    CHECK(check_regularity(quartic, {s1(0.0, 0.5)}).ok);

    CHECK_THROWS_AS(check_regularity(quartic, {}), std::invalid_argument);
}

TEST_CASE("el_acceleration") {
    CHECK(el_acceleration(make_damped_particle(1.0), s1(0.0, 2.0))[0] == Approx(-2.0));
    CHECK(el_acceleration(make_free_particle(1), s1(0.3, -1.2))[0] == Approx(0.0).margin(1e-12));
    CHECK(el_acceleration(make_forced_oscillator(1.0, 0.1), s1(1.0, 0.0))[0] == Approx(-1.0));

    SystemFMS singular;
    singular.n = 1;
    singular.lagrangian = [](const StateTQ& s) { return s.q[0] * s.v[0]; };
    singular.force = [](const StateTQ&) { return Vec(Vec::Zero(1)); };
    CHECK_THROWS_AS(el_acceleration(singular, s1(0.0, 0.0)), SingularMassMatrix);
}

TEST_CASE("el_acceleration of the damped particle satisfies a + alpha v = 0") {
    Rng rng(3);
    for (double alpha : {0.5, 1.0, 2.0}) {
        const SystemFMS sys = make_damped_particle(alpha);
        for (int i = 0; i < 20; ++i) {
            const StateTQ s = rng.state(1, 2.0);
            const Vec a = el_acceleration(sys, s);
            CHECK(std::abs(a[0] + alpha * s.v[0]) <= 1e-12);
        }
    }
}

TEST_CASE("unforced el_acceleration equals -grad V in FD mode") {
    // L = v^2/2 - V(q) with V = cos-well potential, no analytic derivatives.
    SystemFMS sys;
    sys.n = 1;
    sys.lagrangian = [](const StateTQ& s) {
        return 0.5 * s.v.squaredNorm() - (0.3 * s.q[0] * s.q[0] + std::cos(2.0 * s.q[0]));
    };
    sys.force = [](const StateTQ&) { return Vec(Vec::Zero(1)); };
    Rng rng(11);
    for (int i = 0; i < 20; ++i) {
        const StateTQ s = rng.state(1, 2.0);
        const double grad_v = 0.6 * s.q[0] - 2.0 * std::sin(2.0 * s.q[0]);
        CHECK(el_acceleration(sys, s)[0] == Approx(-grad_v).margin(1e-8));
    }
}

TEST_CASE("energy") {
    CHECK(energy(make_damped_particle(1.0), s1(0.0, 2.0)) == Approx(2.0));
    CHECK(energy(make_damped_particle(1.0), s1(3.0, 0.0)) == 0.0);
    CHECK(energy(make_forced_oscillator(1.0, 0.1), s1(1.0, 1.0)) == Approx(1.0));
}

TEST_CASE("dimension mismatches are rejected by every operation") {
    const SystemFMS sys = make_damped_particle(1.0);
    const StateTQ bad({1.0, 2.0}, {0.5, 0.5});
    CHECK_THROWS_AS(eval_force(sys, bad), DimensionMismatch);
    CHECK_THROWS_AS(fiber_derivative(sys, bad), DimensionMismatch);
    CHECK_THROWS_AS(fiber_hessian(sys, bad), DimensionMismatch);
    CHECK_THROWS_AS(el_acceleration(sys, bad), DimensionMismatch);
    CHECK_THROWS_AS(energy(sys, bad), DimensionMismatch);

    const StateTQ ragged({1.0}, {0.5, 0.5});
    CHECK_THROWS_AS(eval_lagrangian(sys, ragged), DimensionMismatch);
}

TEST_CASE("analytic derivatives agree with finite differences at random states") {
    Rng rng(19);
    const std::vector<SystemFMS> systems = {make_damped_particle(1.0),
                                            make_forced_oscillator(1.3, 0.2),
                                            make_forced_pendulum(1.1, 0.3),
                                            make_damped_duffing(1.0, 0.5, 0.1)};
    for (const SystemFMS& sys : systems) {
        const SystemFMS fdv = fd_only_copy(sys);
        for (int i = 0; i < 100; ++i) {
            const StateTQ s = rng.state(1, 2.0);
            const Vec dv_a = fiber_derivative(sys, s);
            const Vec dv_f = fiber_derivative(fdv, s);
            CHECK(detail::sup_norm(dv_a - dv_f) <= 1e-6 * (1.0 + detail::sup_norm(dv_a)));
            const Vec dq_a = lagrangian_gradient_q(sys, s);
            const Vec dq_f = lagrangian_gradient_q(fdv, s);
            CHECK(detail::sup_norm(dq_a - dq_f) <= 1e-6 * (1.0 + detail::sup_norm(dq_a)));
        }
    }
}
