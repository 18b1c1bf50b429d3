#include "sharp_bridge/hj.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sharp_bridge;
using namespace sharp_bridge::testing;
using Catch::Approx;

namespace {

const Matrix kSkew = mat2(0, 1, -1, 0);
const Matrix kI1 = Matrix::Identity(1, 1);
const Matrix kI2 = Matrix::Identity(2, 2);

BridgeProblem skew_problem(double s = 0.0) {
    return {make_ou(kSkew), HalfSpaceDomain(vec({1, 0}), 1.0), vec({0, 0}), vec({0, 1}), s, 0.5};
}

double segment_distance(const Characteristic& ch, const OuSolution& sol) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ch.times.size(); ++i) {
        worst = std::max(worst, (ch.states[i] - sol.path(ch.times[i])).cwiseAbs().maxCoeff());
    }
    return worst;
}

}  // namespace

TEST_CASE("closed half-space value function", "[hj]") {
    const HalfSpaceDomain dom(vec({1.0}), 1.0);
    CHECK(u_halfspace_closed(dom, kI1, vec({0.0}), vec({0.0}), 0.0) == Approx(2.0).epsilon(1e-15));
    CHECK(u_halfspace_closed(dom, kI1, vec({0.5}), vec({0.0}), 0.0) == Approx(1.0).epsilon(1e-15));
    CHECK(u_halfspace_closed(dom, kI1, vec({0.0}), vec({1.0}), 0.3) == Approx(0.0).margin(1e-15));
    CHECK_THROWS_AS(u_halfspace_closed(dom, kI1, vec({0.0}), vec({1.5}), 0.0), DomainError);

    // Anisotropic a0 against 2 d_x d_y/(⟨a0v̄,v̄⟩(1−s)).
    const HalfSpaceDomain dom2(vec({0.6, 0.8}), 1.0);
    const Matrix a0 = mat2(2.0, 0.3, 0.3, 0.5);
    const Vector x = vec({0.1, -0.2}), y = vec({-0.5, 0.4});
    const double q = dom2.normal.dot(a0 * dom2.normal);
    const double expected = 2 * dom2.boundary_distance(x) * dom2.boundary_distance(y) / (q * 0.6);
    CHECK(u_halfspace_closed(dom2, a0, y, x, 0.4) == Approx(expected).epsilon(1e-13));
    CHECK(closed_value_field(dom2, a0, y)(x, 0.4) == Approx(expected).epsilon(1e-13));
}

TEST_CASE("variational value function matches the closed form", "[hj]") {
    const auto bm1 = make_brownian(1);
    const HalfSpaceDomain dom1(vec({1.0}), 1.0);
    CHECK(std::abs(u_variational(bm1, dom1, vec({0.0}), vec({0.0}), 0.0).value - 2.0) <= 1e-4);

    const auto bm2 = make_brownian(2);
    const HalfSpaceDomain dom2(vec({1, 0}), 1.0);
    const auto r = u_variational(bm2, dom2, vec({0, 1}), vec({0, 0}), 0.0);
    CHECK(r.converged);
    CHECK(std::abs(r.value - 2.0) <= 1e-4);
    CHECK((r.touch_point - vec({1, 0.5})).norm() <= 1e-6);
    CHECK(std::abs(r.touch_time - 0.5) <= 1e-6);

    const auto on = u_variational(bm2, dom2, vec({0, 1}), vec({1, 0.3}), 0.2);
    CHECK(on.value == 0.0);
}

TEST_CASE("variational value on a grid and its monotonicity", "[hj][property]") {
    const auto bm = make_brownian(2);
    const HalfSpaceDomain dom(vec({0.6, 0.8}), 1.0);
    for (double xs : {-0.5, 0.0, 0.4})
        for (double ys : {-0.6, 0.1, 0.5}) {
            const Vector x = vec({xs, 0.2}), y = vec({0.3, ys});
            const double closed = u_halfspace_closed(dom, kI2, y, x, 0.25);
            CHECK(std::abs(u_variational(bm, dom, y, x, 0.25).value - closed) <= 1e-4);
        }
    double prev = 1e300;
    for (double f : {0.0, 0.2, 0.4, 0.6, 0.8}) {
        const double u = u_variational(bm, dom, vec({0, 0}), f * dom.normal, 0.0).value;
        CHECK(u < prev);
        prev = u;
    }
}

TEST_CASE("variational value for a curved metric is below the frozen-metric bound", "[hj]") {
    // Any boundary point gives an upper bound; the optimizer must do at least as well.
    const auto m = curved_model();
    const HalfSpaceDomain dom(vec({1, 0}), 1.0);
    const Vector x = vec({0, 0}), y = vec({0, 0.5});
    const auto r = u_variational(m, dom, y, x, 0.0);
    CHECK(r.converged);
    CHECK(std::abs(dom.boundary_distance(r.touch_point)) <= 1e-12);
    GeodesicOptions g;
    for (double p2 : {0.0, 0.25, 0.5}) {
        const Vector p = vec({1, p2});
        const double l = geodesic_bvp(m, x, p, g).length + geodesic_bvp(m, p, y, g).length;
        const double l0 = geodesic_bvp(m, x, y, g).length;
        CHECK(r.value <= 0.5 * (l * l - l0 * l0) + 1e-9);
    }
}

TEST_CASE("characteristics", "[hj]") {
    const auto bm = make_brownian(1);
    const HalfSpaceDomain dom1(vec({1.0}), 1.0);
    const auto u1 = closed_value_field(dom1, kI1, vec({0.0}));
    const auto e1 = make_expansion(bm, vec({0.0}));
    const auto ch = characteristic_solve(bm, dom1, e1, u1, vec({0.0}), 0.0);
    CHECK(std::abs(ch.t_star - 0.5) <= 1e-9);
    CHECK(std::abs(ch.exit_point(0) - 1.0) <= 1e-8);
    CHECK(ch.non_tangential_margin > 1e-6);

    const auto p = skew_problem();
    const auto e2 = make_expansion(p.model, p.y);
    const auto u2 = closed_value_field(p.domain, kI2, p.y);
    const auto ch2 = characteristic_solve(p.model, p.domain, e2, u2, p.x, 0.0);
    CHECK(std::abs(ch2.t_star - 0.5) <= 1e-6);
    CHECK((ch2.exit_point - vec({1, 0.5})).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(p.domain.normal.dot(ch2.exit_point) - 1.0) <= 1e-8);

    const auto on = characteristic_solve(bm, dom1, e1, u1, vec({1.0}), 0.3);
    CHECK(on.t_star == 0.3);
    CHECK(on.exit_point(0) == 1.0);
}

TEST_CASE("ODE characteristics follow the closed-form segments", "[hj][property]") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.8, 0.6);
    const HalfSpaceDomain dom(vec({0.6, 0.8}), 1.0);
    for (const Matrix& m : {Matrix(Matrix::Zero(2, 2)), kSkew, mat2(0.4, 0.2, -0.3, 0.1)}) {
        const auto model = make_ou(m);
        for (int i = 0; i < 3; ++i) {
            const Vector x = vec({u(rng), u(rng)}), y = vec({u(rng), u(rng)});
            const double s = 0.1 * i;
            const auto ch = characteristic_solve(model, dom, make_expansion(model, y), closed_value_field(dom, kI2, y),
                                                 x, s);
            const auto sol = ou_halfspace_solution(m, dom, x, y, s);
            CHECK(segment_distance(ch, sol) <= 1e-6);
            CHECK(std::abs(ch.t_star - sol.tau) <= 1e-8);
        }
    }
}

TEST_CASE("unconditioned characteristic never exits before the horizon", "[hj]") {
    const auto bm = make_brownian(1);
    const HalfSpaceDomain dom(vec({1.0}), 1.0);
    CHECK_THROWS_AS(characteristic_solve(bm, dom, free_expansion(bm), free_value_field(dom, kI1), vec({0.0}), 0.0),
                    RsrError);
}

TEST_CASE("w along characteristics", "[hj]") {
    const auto bm = make_brownian(2);
    const HalfSpaceDomain dom(vec({1, 0}), 1.0);
    const auto u = closed_value_field(dom, kI2, vec({0, 1}));
    const auto e = make_expansion(bm, vec({0, 1}));
    CHECK(w_integral(bm, e, u, characteristic_solve(bm, dom, e, u, vec({0, 0}), 0.0)) == 0.0);

    const Matrix sym = mat2(0.5, 0.2, 0.2, -1.0);
    const auto ou = make_ou(sym);
    const auto es = make_expansion(ou, vec({0, 1}));
    CHECK(std::abs(w_integral(ou, es, u, characteristic_solve(ou, dom, es, u, vec({0, 0}), 0.0))) <= 1e-8);

    const auto p = skew_problem();
    for (auto form : {FirstOrderForm::kOriginCentered, FirstOrderForm::kBridgeCentered}) {
        const auto ek = make_expansion(p.model, p.y, form);
        const double w = w_integral(p.model, ek, u, characteristic_solve(p.model, dom, ek, u, p.x, 0.0));
        CHECK(std::abs(w - ou_halfspace_solution(kSkew, dom, p.x, p.y, 0.0, form).w) <= 1e-6);
    }
}

TEST_CASE("w quadrature matches the closed form on a battery", "[hj][property]") {
    const HalfSpaceDomain dom(vec({0.6, 0.8}), 1.0);
    const std::vector<std::tuple<Matrix, Vector, Vector>> cases{
        {kSkew, vec({0, 0}), vec({0.2, 0.3})},
        {mat2(0.3, 1.1, -0.4, 0.2), vec({-0.5, 0.1}), vec({0.4, -0.6})},
        {mat2(-0.2, 0.0, 0.7, 0.1), vec({0.3, 0.3}), vec({-0.8, 0.2})},
        {mat2(1.0, -0.5, 0.5, 1.0), vec({0.0, -1.0}), vec({0.5, 0.0})},
        {mat2(0.0, 2.0, 0.0, 0.0), vec({-1.0, 0.5}), vec({0.1, 0.1})},
    };
    for (const auto& [m, x, y] : cases) {
        const auto model = make_ou(m);
        const auto u = closed_value_field(dom, kI2, y);
        for (auto form : {FirstOrderForm::kOriginCentered, FirstOrderForm::kBridgeCentered}) {
            const auto e = make_expansion(model, y, form);
            const double w = w_integral(model, e, u, characteristic_solve(model, dom, e, u, x, 0.0));
            CHECK(std::abs(w - ou_halfspace_solution(m, dom, x, y, 0.0, form).w) <= 1e-6);
        }
    }
}

TEST_CASE("PDE residuals", "[hj]") {
    const auto bm = make_brownian(1);
    const HalfSpaceDomain dom(vec({1.0}), 1.0);
    const auto u = closed_value_field(dom, kI1, vec({0.0}));
    const auto e = make_expansion(bm, vec({0.0}));
    const std::vector<std::pair<Vector, double>> probes{{vec({0.0}), 0.0}, {vec({-0.5}), 0.3}, {vec({0.5}), 0.6}};
    CHECK(pde_residuals(bm, u.value, {}, e, probes).hj_residual <= 1e-6);

    DriftExpansion zero;
    zero.limit = [](const Vector&, double) -> Vector { return Vector::Zero(1); };
    zero.first_order = zero.limit;
    const auto r0 = pde_residuals(bm, [](const Vector&, double) { return 0.0; }, {}, zero, probes);
    CHECK(r0.hj_residual == 0.0);

    const SpaceTimeScalar bad = [&](const Vector& z, double s) { return u(z, s) + 0.1 * z(0); };
    CHECK(pde_residuals(bm, bad, {}, e, probes).hj_residual > 0.01);
}

TEST_CASE("transport residual of the computed w", "[hj]") {
    const auto p = skew_problem();
    const auto u = closed_value_field(p.domain, kI2, p.y);
    const auto e = make_expansion(p.model, p.y);
    const auto w = w_field(p.model, p.domain, e, u);
    const std::vector<std::pair<Vector, double>> probes{{vec({0, 0}), 0.1}, {vec({0.3, 0.4}), 0.3}};
    const auto r = pde_residuals(p.model, u.value, w, e, probes);
    CHECK(r.hj_residual <= 1e-6);
    CHECK(r.transport_residual <= 1e-4);
}

TEST_CASE("sharp estimate, closed route", "[hj]") {
    BridgeProblem bm{make_brownian(1), HalfSpaceDomain(vec({1.0}), 1.0), vec({0.0}), vec({0.0}), 0.0, 0.5};
    SharpOptions opts;
    opts.t_values = {0.5};
    const auto est = sharp_estimate(bm, opts);
    CHECK(est.ell == Approx(2.0).epsilon(1e-14));
    CHECK(est.c == 1.0);
    CHECK(est.predictions[0].q_hat == Approx(std::exp(-4.0)).epsilon(1e-12));
    CHECK(est.diagnostics.rsr_ok);
    CHECK(est.diagnostics.delta_used == Approx(0.05));

    const auto skew = sharp_estimate(skew_problem(), opts);
    CHECK(skew.ell == Approx(2.0));
    CHECK(std::abs(skew.c - 4 / std::exp(1.0)) <= 1e-6);
    CHECK(skew.diagnostics.hj_residual <= 1e-6);
    CHECK(skew.diagnostics.transport_residual <= 1e-4);
    CHECK(skew.predictions[0].q_hat == Approx(4 / std::exp(1.0) * std::exp(-4.0)).epsilon(1e-6));

    bm.x = vec({1.0});
    const auto on = sharp_estimate(bm, opts);
    CHECK(on.ell == 0.0);
    CHECK(on.predictions[0].q_hat == on.c);
}

TEST_CASE("w does not depend on s for the OU family", "[hj][property]") {
    SharpOptions opts;
    opts.compute_residuals = false;
    const double w0 = sharp_estimate(skew_problem(0.0), opts).w;
    const double w3 = sharp_estimate(skew_problem(0.3), opts).w;
    CHECK(std::abs(w0 - w3) <= 1e-8);
}

TEST_CASE("sharp estimate errors", "[hj]") {
    BridgeProblem bm{make_brownian(1), HalfSpaceDomain(vec({1.0}), 1.0), vec({0.0}), vec({0.0}), 0.0, 0.5};
    SharpOptions free;
    free.conditioned = false;
    CHECK_THROWS_AS(sharp_estimate(bm, free), RsrError);

    BridgeProblem curved{curved_model(), HalfSpaceDomain(vec({1, 0}), 1.0), vec({0, 0}), vec({0, 0.5}), 0.0, 0.5};
    CHECK_THROWS_AS(sharp_estimate(curved, SharpOptions{}), ConfigError);

    BridgeProblem late = bm;
    late.s = 0.5;
    late.x = vec({-3.0});
    // t* = 0.9; the exit-to-y leg leaves the ¼-ball around y at 1 − 0.025.
    const auto est = sharp_estimate(late, SharpOptions{});
    CHECK(est.characteristic.t_star == Approx(0.9).epsilon(1e-9));
    CHECK(est.diagnostics.delta_used == Approx(0.025).epsilon(1e-9));
    CHECK(est.diagnostics.rsr_ok);
}

TEST_CASE("sharp estimate, variational route on a Brownian example", "[hj]") {
    BridgeProblem p{make_brownian(2), HalfSpaceDomain(vec({1, 0}), 1.0), vec({0, 0}), vec({0, 1}), 0.0, 0.5};
    SharpOptions opts;
    opts.route = Route::kVariational;
    const auto est = sharp_estimate(p, opts);
    CHECK(std::abs(est.ell - 2.0) <= 1e-4);
    CHECK(std::abs(est.w) <= 1e-6);
    CHECK(std::abs(est.characteristic.t_star - 0.5) <= 1e-6);
    CHECK(est.diagnostics.rsr_ok);
    CHECK(est.diagnostics.hj_residual <= 1e-4);
}
