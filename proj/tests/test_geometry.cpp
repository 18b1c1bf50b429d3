#include "sharp_bridge/geometry.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sharp_bridge;
using namespace sharp_bridge::testing;
using Catch::Approx;

namespace {

std::vector<Vector> polyline(const Vector& x, const Vector& y, int n) {
    std::vector<Vector> out;
    for (int i = 0; i <= n; ++i) out.push_back(x + (static_cast<double>(i) / n) * (y - x));
    return out;
}

double exp_sigma_distance(double x, double y) { return std::abs(std::exp(-x) - std::exp(-y)); }

}  // namespace

TEST_CASE("path length of straight segments", "[geometry]") {
    for (int n : {1, 7, 100}) {
        CHECK(path_length(make_brownian(2), polyline(vec({0, 0}), vec({3, 4}), n)) == Approx(5.0).epsilon(1e-12));
    }
    CHECK(path_length(constant_sigma_model(2, 2.0), polyline(vec({0, 0}), vec({1, 0}), 10)) ==
          Approx(0.5).epsilon(1e-12));
    const double l = path_length(exp_sigma_model(), polyline(vec({0.0}), vec({1.0}), 1000));
    CHECK(std::abs(l - (1.0 - std::exp(-1.0))) <= 1e-5);
}

TEST_CASE("path length needs two nodes and a nonsingular metric", "[geometry]") {
    std::vector<Vector> one{vec({0.0})};
    CHECK_THROWS_AS(path_length(make_brownian(1), one), ConfigError);
    const auto singular = make_custom_model(
        1, [](const Vector&) -> Vector { return Vector::Zero(1); },
        [](const Vector& z) -> Matrix { return Matrix::Constant(1, 1, z(0)); });
    CHECK_THROWS_AS(path_length(singular, polyline(vec({0.0}), vec({1.0}), 4)), NumericError);
}

TEST_CASE("geodesics of a constant metric are straight", "[geometry]") {
    const auto g = geodesic_bvp(make_brownian(2), vec({0, 0}), vec({1, 1}));
    CHECK(g.converged);
    CHECK(std::abs(g.length - std::sqrt(2.0)) <= 1e-12);
    CHECK((g.initial_velocity - vec({1, 1})).norm() <= 1e-10);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const double f = static_cast<double>(i) / (g.nodes.size() - 1);
        CHECK((g.nodes[i] - vec({f, f})).norm() <= 1e-12);
    }

    const auto h = geodesic_bvp(constant_sigma_model(2, 2.0), vec({0.5, -1}), vec({2, 1}));
    CHECK(std::abs(h.length - 0.5 * 2.5) <= 1e-12);
}

TEST_CASE("one-dimensional variable metric distance", "[geometry]") {
    const auto m = exp_sigma_model();
    const auto g = geodesic_bvp(m, vec({0.0}), vec({1.0}));
    CHECK(g.converged);
    CHECK(std::abs(g.length - (1.0 - std::exp(-1.0))) <= 1e-4);
    // ξ = σ(x)·(F(y) − F(x)) with F(z) = ∫dz/σ.
    CHECK(std::abs(g.initial_velocity(0) - (1.0 - std::exp(-1.0))) <= 1e-4);
    const auto back = geodesic_bvp(m, vec({1.0}), vec({-0.5}));
    CHECK(std::abs(back.length - exp_sigma_distance(1.0, -0.5)) <= 1e-4);
}

TEST_CASE("degenerate endpoints give the zero path", "[geometry]") {
    const auto g = geodesic_bvp(curved_model(), vec({0.2, 0.3}), vec({0.2, 0.3}));
    CHECK(g.length == 0.0);
    CHECK(g.energy == 0.0);
    CHECK(g.initial_velocity.norm() == 0.0);
}

TEST_CASE("geodesic endpoints are exact and energy matches half length squared", "[geometry][property]") {
    const auto m = curved_model();
    const std::vector<std::pair<Vector, Vector>> pairs{
        {vec({0, 0}), vec({1, 1})}, {vec({-0.5, 0.8}), vec({0.7, -0.4})}, {vec({1.2, 0.1}), vec({-0.3, 0.9})}};
    for (const auto& [x, y] : pairs) {
        const auto g = geodesic_bvp(m, x, y);
        REQUIRE(g.converged);
        CHECK(g.nodes.front() == x);
        CHECK(g.nodes.back() == y);
        CHECK(g.energy >= 0.5 * g.length * g.length - 1e-14);
        CHECK(g.energy - 0.5 * g.length * g.length <= 1e-6);
    }
}

TEST_CASE("distance is symmetric", "[geometry][property]") {
    const auto m = curved_model();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 5; ++i) {
        const Vector x = vec({u(rng), u(rng)}), y = vec({u(rng), u(rng)});
        const double dxy = geodesic_bvp(m, x, y).length;
        const double dyx = geodesic_bvp(m, y, x).length;
        CHECK(std::abs(dxy - dyx) <= 1e-6);
    }
}

TEST_CASE("Gauss lemma: gradient of half squared distance", "[geometry][property]") {
    const auto m = curved_model();
    const Vector y = vec({0.6, -0.5});
    for (const auto& z : {vec({0.0, 0.0}), vec({-0.4, 0.7}), vec({1.0, 0.4})}) {
        const auto g = geodesic_bvp(m, z, y);
        const Vector expected = -metric(m, z) * g.initial_velocity;
        Vector fd(2);
        const double h = 1e-4;
        for (int i = 0; i < 2; ++i) {
            const double lp = geodesic_bvp(m, z + h * unit(2, i), y).length;
            const double lm = geodesic_bvp(m, z - h * unit(2, i), y).length;
            fd(i) = (0.5 * lp * lp - 0.5 * lm * lm) / (2.0 * h);
        }
        CHECK((fd - expected).cwiseAbs().maxCoeff() <= 2e-4);
    }
}

TEST_CASE("exponential map", "[geometry]") {
    CHECK((exp_map(make_brownian(2), vec({0, 0}), vec({1, 2})).endpoint - vec({1, 2})).norm() <= 1e-12);
    CHECK((exp_map(constant_sigma_model(2, 2.0), vec({0, 0}), vec({2, 0})).endpoint - vec({2, 0})).norm() <= 1e-12);

    const auto m = exp_sigma_model();
    const auto g = geodesic_bvp(m, vec({0.0}), vec({1.0}));
    CHECK(std::abs(exp_map(m, vec({0.0}), g.initial_velocity).endpoint(0) - 1.0) <= 1e-6);
    // Closed form: F(exp_x ξ) = F(x) + ξ/σ(x) with F(z) = 1 − e^{−z}.
    CHECK(exp_map(m, vec({0.0}), vec({0.5})).endpoint(0) == Approx(-std::log(0.5)).epsilon(1e-8));
}

TEST_CASE("BVP and IVP round trip on the curved model", "[geometry][property]") {
    const auto m = curved_model();
    const std::vector<std::pair<Vector, Vector>> pairs{
        {vec({0, 0}), vec({1, 1})}, {vec({-0.5, 0.8}), vec({0.7, -0.4})}, {vec({0.3, 0.1}), vec({-0.3, 0.9})}};
    for (const auto& [x, y] : pairs) {
        const auto g = geodesic_bvp(m, x, y);
        CHECK((exp_map(m, x, g.initial_velocity).endpoint - y).norm() <= 1e-5);
    }
}

TEST_CASE("van Vleck factor", "[geometry]") {
    CHECK(std::abs(van_vleck_H(make_brownian(2), vec({0, 0}), vec({1, -2})) - 1.0) <= 1e-8);
    CHECK(std::abs(van_vleck_H(constant_sigma_model(3, 0.7), vec({0, 0, 0}), vec({1, 0.5, -1})) - 1.0) <= 1e-8);

    const auto m = exp_sigma_model();
    const double fine = van_vleck_H(m, vec({0.0}), vec({1.0}));
    VanVleckOptions coarse;
    coarse.fd_base = 1e-4;
    CHECK(std::abs(fine - van_vleck_H(m, vec({0.0}), vec({1.0}), coarse)) <= 1e-4);
    // d exp_x/dξ = σ(y)/σ(x) in one dimension.
    CHECK(std::abs(fine - std::exp(-0.5)) <= 1e-4);
}

TEST_CASE("van Vleck factor flags near-conjugate points", "[geometry]") {
    VanVleckOptions opts;
    opts.determinant_floor = 10.0;
    CHECK_THROWS_AS(van_vleck(make_brownian(1), vec({0.0}), vec({1.0}), opts), NumericError);
}

TEST_CASE("work integral A", "[geometry]") {
    const auto zero = curved_model();
    CHECK(work_integral_A(zero, geodesic_bvp(zero, vec({0, 0}), vec({1, 1}))) == 0.0);

    const auto linear = make_ou(Matrix::Identity(2, 2));
    CHECK(std::abs(work_integral_A(linear, geodesic_bvp(linear, vec({0, 0}), vec({1, 1}))) - 1.0) <= 1e-8);

    const Vector beta = vec({0.3, -1.2});
    const auto constant = make_custom_model(
        2, [beta](const Vector&) -> Vector { return beta; },
        [](const Vector&) -> Matrix { return Matrix::Identity(2, 2); });
    const Vector x = vec({-1, 0.5}), y = vec({2, 1});
    CHECK(std::abs(work_integral_A(constant, geodesic_bvp(constant, x, y)) - beta.dot(y - x)) <= 1e-10);
}

TEST_CASE("gradient drift identity is discretization independent", "[geometry][property]") {
    const Matrix q = mat2(0.8, 0.2, 0.2, -0.5);
    const Vector c = vec({0.1, -0.3});
    const auto m = gradient_drift_model(curved_sigma, q, c);
    const Vector x = vec({-0.3, 0.2}), y = vec({0.5, 0.6});
    const double exact = m.potential(y) - m.potential(x);
    for (int n : {100, 400}) {
        GeodesicOptions opts;
        opts.nodes = n;
        CHECK(std::abs(work_integral_A(m, geodesic_bvp(m, x, y, opts)) - exact) <= 1e-6);
    }
}
