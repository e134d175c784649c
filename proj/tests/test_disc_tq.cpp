#include <catch2/catch.hpp>

#include "forcedvi/builtin_systems.hpp"
#include "forcedvi/disc_tq.hpp"
#include "support.hpp"

using namespace forcedvi;
using testsupport::Rng;

namespace {

StateTQ s1(double q, double v) { return StateTQ({q}, {v}); }

// Closed forms for the damped-particle exact data, derived by integrating
// L and the force along the closed-form flow. The discrete Lagrangian
// carries v^2; a commonly quoted closed form has v unsquared, and the
// quadrature route below (an independent code path) settles the difference.
double exact_L(double alpha, double h, double v) {
    return v * v * (1.0 - std::exp(-2.0 * alpha * h)) / (4.0 * alpha);
}
Vec exact_f(double alpha, double h, double v) {
    Vec f(2);
    const double ea = 1.0 - std::exp(-alpha * h);
    const double e2a = 1.0 - std::exp(-2.0 * alpha * h);
    f[0] = -v * ea;
    f[1] = -v / alpha * (ea - 0.5 * e2a);
    return f;
}

std::vector<double> axiom_h_grid() {
    std::vector<double> hs;
    for (int k = 0; k <= 10; ++k) {
        hs.push_back(0.4 * std::pow(2.0, -k));
        hs.push_back(-0.4 * std::pow(2.0, -k));
    }
    return hs;
}

}  // namespace

TEST_CASE("boundary maps of the linear discretization") {
    const DiscretizationTQ lin = make_linear_discretization(1);
    CHECK(boundary_minus(lin, 0.5, s1(2.0, 3.0))[0] == 2.0);
    CHECK(boundary_plus(lin, 0.5, s1(2.0, 3.0))[0] == Approx(3.5));
    const auto [qm, qp] = boundary_pm(lin, 0.25, s1(1.0, 2.0));
    CHECK(qm[0] == 1.0);
    CHECK(qp[0] == Approx(1.5));
    CHECK(boundary_plus(lin, 0.0, s1(1.0, 2.0))[0] == 1.0);
    CHECK(lin.curve(0.3, 0.1, s1(1.0, 2.0))[0] == Approx(1.2));
}

TEST_CASE("boundary maps of the exact discretization") {
    const auto oracle = make_flow_oracle(make_damped_particle(1.0));
    const DiscretizationTQ ex = make_exact_discretization(oracle);
    CHECK(boundary_minus(ex, 1.0, s1(0.0, 1.0))[0] == Approx(0.0).margin(1e-14));
    CHECK(boundary_plus(ex, 1.0, s1(0.0, 1.0))[0] == Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    CHECK(boundary_plus(ex, 0.0, s1(0.7, -0.4))[0] == Approx(0.7));
    // psi^E(h, t, (q, v)) = q + v (1 - e^{-alpha t}) / alpha, any h
    CHECK(ex.curve(0.9, 0.5, s1(0.2, 1.4))[0] ==
          Approx(0.2 + 1.4 * (1.0 - std::exp(-0.5))).epsilon(1e-12));
}

TEST_CASE("free-particle exact discretization coincides with the linear one") {
    const auto oracle = make_flow_oracle(make_free_particle(1));
    const DiscretizationTQ ex = make_exact_discretization(oracle);
    const DiscretizationTQ lin = make_linear_discretization(1);
    Rng rng(31);
    for (int i = 0; i < 10; ++i) {
        const StateTQ s = rng.state(1, 2.0);
        const double h = rng.uniform(0.01, 0.8);
        const double t = rng.uniform(-0.5, 0.8);
        CHECK(ex.curve(h, t, s)[0] == Approx(lin.curve(h, t, s)[0]).margin(1e-14));
    }
}

TEST_CASE("discretization axioms hold for the built-ins and fail for a broken pair") {
    Rng rng(13);
    std::vector<StateTQ> states;
    for (int i = 0; i < 6; ++i) states.push_back(rng.state(1, 1.5));
    const std::vector<double> hs = axiom_h_grid();

    const auto lin_rep = verify_discretization_axioms(make_linear_discretization(1), hs, states);
    CHECK(lin_rep.ok);
    CHECK(lin_rep.max_alpha_gap <= 1e-14);
    CHECK(lin_rep.max_base_defect == 0.0);

    const auto oracle = make_flow_oracle(make_damped_particle(1.0));
    const auto exact_rep =
        verify_discretization_axioms(make_exact_discretization(oracle), hs, states);
    CHECK(exact_rep.ok);
    CHECK(exact_rep.max_alpha_gap <= 1e-14);
    CHECK(exact_rep.max_velocity_defect <= 1e-8);

    const auto symmetric_rep = verify_discretization_axioms(
        make_exact_discretization(oracle, alpha_symmetric()), hs, states);
    CHECK(symmetric_rep.ok);

    DiscretizationTQ broken = make_linear_discretization(1);
    broken.alpha_plus = [](double h) { return 2.0 * h; };
    const auto broken_rep = verify_discretization_axioms(broken, hs, states);
    CHECK_FALSE(broken_rep.ok);
    CHECK(broken_rep.max_alpha_gap == Approx(0.4));
}

TEST_CASE("exact discrete data matches the closed forms") {
    Rng rng(29);
    for (double alpha : {0.5, 1.0, 2.0}) {
        const auto oracle = make_flow_oracle(make_damped_particle(alpha));
        const DiscreteDataTQ data = exact_discrete_data_tq(oracle);
        for (double h : {0.05, 0.1, 0.2, 0.5, 1.0}) {
            const StateTQ s = rng.state(1, 2.0);
            CHECK(data.lagrangian(h, s) == Approx(exact_L(alpha, h, s.v[0])).margin(1e-10));
            const Vec f = data.force(h, s);
            const Vec truth = exact_f(alpha, h, s.v[0]);
            CHECK(detail::sup_norm(f - truth) <= 1e-10);
        }
        const StateTQ s = rng.state(1, 2.0);
        CHECK(data.lagrangian(0.0, s) == 0.0);
        CHECK(detail::sup_norm(data.force(0.0, s)) == 0.0);
    }
}

TEST_CASE("exact data gradient agrees with finite differences") {
    const auto oracle = make_flow_oracle(make_damped_particle(1.0));
    const DiscreteDataTQ data = exact_discrete_data_tq(oracle);
    const StateTQ s = s1(0.3, 1.2);
    const double h = 0.4;
    REQUIRE(data.lagrangian_grad);
    const Vec grad = data.lagrangian_grad(h, s);
    const double eps = 1e-6;
    for (int i = 0; i < 2; ++i) {
        Vec y = s.packed();
        y[i] += eps;
        const double hi = data.lagrangian(h, StateTQ::unpack(y));
        y[i] -= 2.0 * eps;
        const double lo = data.lagrangian(h, StateTQ::unpack(y));
        CHECK(grad[i] == Approx((hi - lo) / (2.0 * eps)).margin(1e-8));
    }
}

TEST_CASE("truncated exact family") {
    SECTION("r = 1 is the linear discretization") {
        const auto [d, data] = truncated_exact_friction(1.0, 1);
        Rng rng(41);
        for (int i = 0; i < 10; ++i) {
            const StateTQ s = rng.state(1, 2.0);
            const double t = rng.uniform(-0.5, 0.5);
            CHECK(d.curve(0.3, t, s)[0] == Approx(s.q[0] + t * s.v[0]).margin(1e-15));
        }
    }
    SECTION("large r converges to the exact forms") {
        const double alpha = 1.0;
        const auto [d, data] = truncated_exact_friction(alpha, 16);
        const auto oracle = make_flow_oracle(make_damped_particle(alpha));
        const DiscretizationTQ ex = make_exact_discretization(oracle);
        const DiscreteDataTQ exd = exact_discrete_data_tq(oracle);
        const StateTQ s = s1(0.2, 1.1);
        for (double h : {0.1, 0.3}) {
            CHECK(d.curve(h, h, s)[0] == Approx(ex.curve(h, h, s)[0]).margin(1e-12));
            CHECK(data.lagrangian(h, s) == Approx(exd.lagrangian(h, s)).margin(1e-12));
            CHECK(detail::sup_norm(data.force(h, s) - exd.force(h, s)) <= 1e-12);
        }
    }
    SECTION("order must be at least 1") {
        CHECK_THROWS_AS(truncated_exact_friction(1.0, 0), std::invalid_argument);
    }
}

TEST_CASE("quadrature data: midpoint rule reproduces the classical discrete Lagrangian") {
    const SystemFMS sys = make_forced_oscillator(1.0, 0.2);
    const DiscretizationTQ lin = make_linear_discretization(1);
    const DiscreteDataTQ data = quadrature_discrete_data(sys, lin, QuadratureRule::midpoint());
    Rng rng(55);
    for (int i = 0; i < 10; ++i) {
        const StateTQ s = rng.state(1, 1.5);
        const double h = rng.uniform(0.05, 0.5);
        const StateTQ mid(s.q + 0.5 * h * s.v, s.v);
        CHECK(data.lagrangian(h, s) == Approx(h * eval_lagrangian(sys, mid)).margin(1e-13));
    }
    const StateTQ s = rng.state(1, 1.0);
    CHECK(data.lagrangian(0.0, s) == 0.0);
    CHECK(detail::sup_norm(data.force(0.0, s)) == 0.0);
}

TEST_CASE("order-1 consistency of every built-in data family") {
    Rng rng(77);
    std::vector<StateTQ> states;
    for (int i = 0; i < 5; ++i) states.push_back(rng.state(1, 1.5));

    const SystemFMS particle = make_damped_particle(1.0);
    const auto oracle = make_flow_oracle(particle);
    const DiscretizationTQ lin = make_linear_discretization(1);

    CHECK(check_consistency_order1(particle, make_scaled_data(particle), states).ok);
    CHECK(check_consistency_order1(particle, exact_discrete_data_tq(oracle), states).ok);
    for (int r : {1, 2, 3})
        CHECK(check_consistency_order1(particle, truncated_exact_friction(1.0, r).second, states).ok);
    for (auto rule : {QuadratureRule::rectangle(), QuadratureRule::trapezoid(),
                      QuadratureRule::midpoint(), QuadratureRule::gauss(3)})
        CHECK(check_consistency_order1(particle, quadrature_discrete_data(particle, lin, rule), states).ok);

    // Negative control: L_cp = h^2 L has zero h-slope at h = 0.
    DiscreteDataTQ bad = make_scaled_data(particle);
    bad.lagrangian = [particle](double h, const StateTQ& s) {
        return h * h * eval_lagrangian(particle, s);
    };
    bad.lagrangian_grad = nullptr;
    CHECK_FALSE(check_consistency_order1(particle, bad, states).ok);
}

TEST_CASE("alpha pairs satisfy the gap identity on the dyadic grid") {
    const std::vector<double> hs = axiom_h_grid();
    for (const AlphaPair& pair : {alpha_one_sided(), alpha_symmetric()}) {
        for (double h : hs) {
            CHECK(std::abs(pair.plus(h) - pair.minus(h) - h) <= 1e-14);
            CHECK(h * pair.plus(h) >= -1e-14);
            CHECK(h * pair.minus(h) <= 1e-14);
        }
    }
}

TEST_CASE("free-particle data is even under the reversed alpha pair") {
    // Swapping (a+, a-) -> (-a-, -a+) integrates over [-h, 0] instead of
    // [0, h]; for the free particle the integrand is constant along the flow
    // so L_cp is unchanged, and L_cp(-h) = -L_cp(h).
    const SystemFMS sys = make_free_particle(1);
    const auto oracle = make_flow_oracle(sys);
    AlphaPair reversed{[](double) { return 0.0; }, [](double h) { return -h; }};

    const DiscreteDataTQ fwd = exact_discrete_data_tq(oracle, alpha_one_sided());
    const DiscreteDataTQ rev = exact_discrete_data_tq(oracle, reversed);
    const DiscretizationTQ lin = make_linear_discretization(1);
    DiscretizationTQ lin_rev = make_linear_discretization(1);
    lin_rev.alpha_plus = reversed.plus;
    lin_rev.alpha_minus = reversed.minus;
    lin_rev.provenance = DiscProvenance::custom;
    const DiscreteDataTQ qfwd = quadrature_discrete_data(sys, lin, QuadratureRule::gauss(4));
    const DiscreteDataTQ qrev = quadrature_discrete_data(sys, lin_rev, QuadratureRule::gauss(4));

    Rng rng(91);
    for (int i = 0; i < 8; ++i) {
        const StateTQ s = rng.state(1, 2.0);
        const double h = rng.uniform(0.05, 0.6);
        CHECK(fwd.lagrangian(h, s) == Approx(rev.lagrangian(h, s)).margin(1e-12));
        CHECK(fwd.lagrangian(-h, s) == Approx(-fwd.lagrangian(h, s)).margin(1e-12));
        CHECK(qfwd.lagrangian(h, s) == Approx(qrev.lagrangian(h, s)).margin(1e-12));
        CHECK(qfwd.lagrangian(-h, s) == Approx(-qfwd.lagrangian(h, s)).margin(1e-12));
    }
}

TEST_CASE("exact data with the symmetric alpha pair") {
    // Integrating L along the flow over [-h/2, h/2] gives
    //   L^E_sym(h, v) = v^2 (e^{ah} - e^{-ah}) / (4a).
    const double a = 1.0;
    const auto oracle = make_flow_oracle(make_damped_particle(a));
    const DiscreteDataTQ data = exact_discrete_data_tq(oracle, alpha_symmetric());
    Rng rng(61);
    for (double h : {0.1, 0.25, 0.5}) {
        const StateTQ s = rng.state(1, 1.5);
        const double truth =
            s.v[0] * s.v[0] * (std::exp(a * h) - std::exp(-a * h)) / (4.0 * a);
        CHECK(data.lagrangian(h, s) == Approx(truth).margin(1e-11));
    }
}

TEST_CASE("quadrature route confirms the v^2 closed form for L^E") {
    // Independent oracle for the printed-formula discrepancy: Simpson
    // integration of L along the closed-form flow, no shared code with the
    // library quadrature.
    const double alpha = 1.0, h = 0.35, v = 1.3;
    const double simpson = testsupport::simpson_integrate(
        [&](double t) {
            const double vt = v * std::exp(-alpha * t);
            return 0.5 * vt * vt;
        },
        0.0, h, 1e-14);
    CHECK(simpson == Approx(exact_L(alpha, h, v)).margin(1e-12));
    const double unsquared = v * (1.0 - std::exp(-2.0 * alpha * h)) / (4.0 * alpha);
    CHECK(std::abs(simpson - unsquared) > 1e-3);  // the printed form is not the integral

    const auto oracle = make_flow_oracle(make_damped_particle(alpha));
    const DiscreteDataTQ data = exact_discrete_data_tq(oracle);
    CHECK(data.lagrangian(h, s1(0.0, v)) == Approx(simpson).margin(1e-12));
}
