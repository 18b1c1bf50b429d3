#pragma once

// Embedded Dormand-Prince 5(4) integrator with step recording, mesh replay
// and root-finding for a scalar event function.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace sharp_bridge {

using OdeRhs = std::function<Vector(double, const Vector&)>;
using EventFunction = std::function<double(double, const Vector&)>;

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-10;
    double initial_step = 0.0;  // 0: pick from the interval length
    int max_steps = 200000;
    /// Width of the bracketing interval at which event bisection stops.
    double event_tolerance = 1e-10;
};

struct OdeSolution {
    std::vector<double> times;
    std::vector<Vector> states;
    bool event_hit = false;

    const Vector& final_state() const { return states.back(); }
    double final_time() const { return times.back(); }
};

namespace detail {

// Dormand-Prince tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                        b6 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace detail

/// One Dormand-Prince step of size h; the fifth-order solution is returned
/// and the embedded error estimate is written to `err` when requested.
inline Vector dopri_step(const OdeRhs& f, double t, const Vector& y, double h, Vector* err = nullptr) {
    using namespace detail;
    const Vector k1 = f(t, y);
    const Vector k2 = f(t + c2 * h, y + h * (a21 * k1));
    const Vector k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    const Vector k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Vector k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Vector k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vector y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    if (err) {
        const Vector k7 = f(t + h, y5);
        *err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    }
    return y5;
}

/// Integrates y' = f(t, y) from t0 to t1 (t1 > t0) with adaptive steps. When
/// `event` is given and changes sign from positive to non-positive, the
/// crossing time is refined by bisection and integration stops there.
inline OdeSolution integrate(const OdeRhs& f, double t0, const Vector& y0, double t1,
                             const OdeOptions& opts = {}, const EventFunction& event = {}) {
    if (!(t1 >= t0)) throw NumericError("integrate: end time precedes start time");
    OdeSolution sol;
    sol.times.push_back(t0);
    sol.states.push_back(y0);
    if (event && event(t0, y0) <= 0.0) {
        sol.event_hit = true;
        return sol;
    }
    if (t1 == t0) return sol;

    double t = t0;
    Vector y = y0;
    double h = opts.initial_step > 0.0 ? opts.initial_step : (t1 - t0) / 64.0;
    double g_prev = event ? event(t0, y0) : 1.0;
    Vector err;
    for (int n = 0; n < opts.max_steps; ++n) {
        const bool last = t + h >= t1;
        if (last) h = t1 - t;
        const Vector trial = dopri_step(f, t, y, h, &err);
        double norm = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double sc = opts.atol + opts.rtol * std::max(std::abs(y(i)), std::abs(trial(i)));
            norm += (err(i) / sc) * (err(i) / sc);
        }
        norm = std::sqrt(norm / static_cast<double>(y.size()));
        if (!std::isfinite(norm)) {
            h *= 0.25;
            if (h < 1e-14 * std::max(1.0, std::abs(t))) throw NumericError("integrate: non-finite state");
            continue;
        }
        if (norm <= 1.0) {
            if (event) {
                const double g = event(t + h, trial);
                if (g <= 0.0) {
                    // Bracket [lo, hi] on the step fraction.
                    double lo = 0.0, hi = h, g_lo = g_prev, g_hi = g;
                    while (hi - lo > opts.event_tolerance) {
                        const double mid = 0.5 * (lo + hi);
                        const double gm = event(t + mid, dopri_step(f, t, y, mid));
                        if (gm > 0.0) { lo = mid; g_lo = gm; } else { hi = mid; g_hi = gm; }
                    }
                    double root = hi;
                    if (g_lo > 0.0 && g_hi < 0.0) root = lo + (hi - lo) * g_lo / (g_lo - g_hi);
                    sol.times.push_back(t + root);
                    sol.states.push_back(root > 0.0 ? dopri_step(f, t, y, root) : y);
                    sol.event_hit = true;
                    return sol;
                }
                g_prev = g;
            }
            t = last ? t1 : t + h;
            y = trial;
            sol.times.push_back(t);
            sol.states.push_back(y);
            if (last) return sol;
        }
        const double factor = norm > 0.0 ? 0.9 * std::pow(norm, -0.2) : 5.0;
        h *= std::clamp(factor, 0.2, 5.0);
        if (h < 1e-14 * std::max(1.0, std::abs(t))) throw NumericError("integrate: step size underflow");
    }
    throw NumericError("integrate: step budget exhausted");
}

/// Replays the step sequence of `mesh` with fixed steps, so that nearby
/// initial conditions are propagated by one smooth discrete map.
inline Vector integrate_on_mesh(const OdeRhs& f, const std::vector<double>& mesh, const Vector& y0) {
    Vector y = y0;
    for (std::size_t i = 0; i + 1 < mesh.size(); ++i) y = dopri_step(f, mesh[i], y, mesh[i + 1] - mesh[i]);
    return y;
}

}  // namespace sharp_bridge
