#include "sharp_bridge/mc.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sharp_bridge;
using namespace sharp_bridge::testing;
using Catch::Approx;

namespace {

BridgeProblem bm_problem(double t = 0.5) {
    return {make_brownian(1), HalfSpaceDomain(vec({1.0}), 1.0), vec({0.0}), vec({0.0}), 0.0, t};
}

McConfig quick(std::uint64_t paths) {
    McConfig c;
    c.paths = paths;
    c.seed = 2024;
    return c;
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors", "[mc][rng]") {
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("Gaussian streams are standard normal and reproducible", "[mc][rng]") {
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    std::vector<double> buf(4);
    for (int i = 0; i < n / 4; ++i) {
        GaussianStream(7, static_cast<std::uint64_t>(i)).fill(3, buf.data(), 4);
        for (double x : buf) {
            sum += x;
            sq += x * x;
        }
    }
    CHECK(std::abs(sum / n) <= 4.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) <= 0.02);
    std::vector<double> a(3), b(3);
    GaussianStream(7, 99).fill(5, a.data(), 3);
    GaussianStream(7, 99).fill(5, b.data(), 3);
    CHECK(a == b);
    GaussianStream(8, 99).fill(5, b.data(), 3);
    CHECK(a != b);
}

TEST_CASE("time grid", "[mc]") {
    const auto g = time_grid(0.0, 0.05, 64);
    CHECK(g.size() == 62);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 0.95);
    CHECK_THROWS_AS(time_grid(0.6, 0.5, 64), ConfigError);
}

TEST_CASE("exact Brownian bridge marginal", "[mc]") {
    BridgeProblem p{make_brownian(1), HalfSpaceDomain(vec({1.0}), 100.0), vec({0.0}), vec({0.0}), 0.0, 1.0};
    McConfig c = quick(1);
    c.steps = 4;
    c.delta = 0.0;
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto path = sample_bridge_path(p, c, static_cast<std::uint64_t>(i));
        REQUIRE(path.times[2] == 0.5);
        const double z = path.states[2](0);
        sum += z;
        sq += z * z;
    }
    const double var = 0.25;
    CHECK(std::abs(sum / n) <= 4 * std::sqrt(var / n));
    CHECK(std::abs(sq / n - var) <= 0.05 * var);
    // The bridge ends at y.
    const auto path = sample_bridge_path(p, c, 3);
    CHECK(std::abs(path.states.back()(0)) <= 1e-6);
}

TEST_CASE("OU skew bridge concentrates near the straight segment", "[mc]") {
    const Matrix m = mat2(0, 1, -1, 0);
    const double t = 0.01;
    BridgeProblem p{make_ou(m), HalfSpaceDomain(vec({1, 0}), 100.0), vec({0, 0}), vec({0, 1}), 0.0, t};
    McConfig c = quick(1);
    std::vector<double> devs;
    for (int i = 0; i < 200; ++i) {
        const auto path = sample_bridge_path(p, c, static_cast<std::uint64_t>(i));
        double worst = 0.0;
        for (std::size_t j = 0; j < path.times.size(); ++j) {
            worst = std::max(worst, (path.states[j] - path.times[j] * p.y).norm());
        }
        devs.push_back(worst);
    }
    std::sort(devs.begin(), devs.end());
    CHECK(devs[static_cast<std::size_t>(0.99 * devs.size())] <= 10 * std::sqrt(t));
}

TEST_CASE("Brownian bridge exit probability with crossing correction", "[mc]") {
    const auto est = exit_probability(bm_problem(), quick(1000000));
    const double exact = std::exp(-4.0);
    CHECK(std::abs(est.p_hat - exact) <= 3 * est.half_width);
    CHECK(est.ci_method == "normal");
    CHECK(est.reachable);
}

TEST_CASE("unreachable boundary gives zero", "[mc]") {
    auto p = bm_problem();
    p.domain = HalfSpaceDomain(vec({1.0}), 100.0);
    const auto est = exit_probability(p, quick(10000));
    CHECK(est.p_hat == 0.0);
    CHECK(est.ci_method == "wilson");
    CHECK(est.half_width > 0.0);
    CHECK_FALSE(est.reachable);
}

TEST_CASE("unconditioned Brownian motion exit", "[mc]") {
    auto p = bm_problem(0.25);
    McConfig c = quick(1000000);
    c.mode = McMode::kFree;
    c.delta = 0.0;
    const auto est = exit_probability(p, c);
    const double exact = std::erfc(2.0 / std::sqrt(2.0));
    CHECK(std::abs(est.p_hat - exact) <= 3 * est.half_width);
}

TEST_CASE("crossing correction removes the discretization bias", "[mc][property]") {
    McConfig c = quick(1000000);
    c.steps = 32;
    const auto corrected = exit_probability(bm_problem(), c);
    c.crossing_correction = false;
    const auto raw = exit_probability(bm_problem(), c);
    const double exact = std::exp(-4.0);
    CHECK(corrected.p_hat > raw.p_hat);
    CHECK(std::abs(corrected.p_hat - exact) <= 3 * corrected.half_width);
    CHECK(exact - raw.p_hat > 3 * raw.half_width);
}

TEST_CASE("truncation insensitivity", "[mc][property]") {
    McConfig c = quick(400000);
    const auto a = exit_probability(bm_problem(), c);
    c.delta = 0.1;
    const auto b = exit_probability(bm_problem(), c);
    CHECK(std::abs(a.p_hat - b.p_hat) <= 3 * std::hypot(a.half_width, b.half_width));
}

TEST_CASE("results do not depend on the worker count", "[mc][property]") {
    McConfig c = quick(20000);
    const auto one = exit_probability(bm_problem(), c);
    c.workers = 3;
    const auto three = exit_probability(bm_problem(), c);
    CHECK(one.p_hat == three.p_hat);
    CHECK(one.std_error == three.std_error);
}

TEST_CASE("Euler route for linear models agrees with the exact scheme", "[mc]") {
    McConfig c = quick(200000);
    c.steps = 256;
    c.scheme = McScheme::kEuler;
    const auto euler = exit_probability(bm_problem(), c);
    CHECK(std::abs(euler.p_hat - std::exp(-4.0)) <= 0.1 * std::exp(-4.0) + 3 * euler.half_width);
}

TEST_CASE("Euler route for a nonlinear model runs and truncates sanely", "[mc]") {
    const auto model = make_scalar_sigma(Expression::parse("1 + 0.2*z*z"));
    BridgeProblem p{model, HalfSpaceDomain(vec({1.0}), 1.0), vec({0.0}), vec({0.0}), 0.0, 0.5};
    McConfig c = quick(48);
    c.steps = 8;
    const auto est = exit_probability(p, c);
    CHECK(est.p_hat > 0.0);
    CHECK(est.p_hat < 0.3);
    c.scheme = McScheme::kExact;
    CHECK_THROWS_AS(exit_probability(p, c), ConfigError);
}

TEST_CASE("extrapolation from an exact feed", "[mc]") {
    std::vector<McEstimate> feed;
    for (double t : {0.5, 0.4, 0.3}) {
        McEstimate e;
        e.t = t;
        e.p_hat = std::exp(-2.0 / t);
        e.half_width = 1e-3 * e.p_hat;
        feed.push_back(e);
    }
    const auto x = extrapolate(feed, 2.0);
    CHECK(x.ell_hat == Approx(2.0).epsilon(1e-12));
    CHECK(x.c_fit == Approx(1.0).epsilon(1e-12));
    for (const auto& r : x.rows) CHECK(r.c_hat == Approx(1.0).epsilon(1e-12));

    feed.pop_back();
    CHECK_THROWS_AS(extrapolate(feed, 2.0), ConfigError);
    McEstimate zero;
    zero.t = 0.2;
    feed.push_back(zero);
    CHECK_THROWS_AS(extrapolate(feed, 2.0), ConfigError);
    McEstimate good;
    good.t = 0.35;
    good.p_hat = std::exp(-2.0 / 0.35);
    feed.push_back(good);
    const auto y = extrapolate(feed, 2.0);
    CHECK(y.rows.size() == 3);
    CHECK(y.warnings.size() == 1);
}

TEST_CASE("extrapolation over a simulated Brownian grid", "[mc]") {
    std::vector<McEstimate> runs;
    const auto x = extrapolate(bm_problem(), {0.5, 0.4, 0.3}, quick(200000), 2.0, &runs);
    REQUIRE(runs.size() == 3);
    for (const auto& r : x.rows) CHECK(std::abs(r.c_hat - 1.0) <= 3 * r.c_half_width);
    CHECK(std::abs(x.ell_hat - 2.0) <= 3 * x.ell_half_width + 1e-9);
    CHECK_THROWS_AS(extrapolate(bm_problem(), {0.3, 0.4, 0.5}, quick(10), 2.0), ConfigError);
}
