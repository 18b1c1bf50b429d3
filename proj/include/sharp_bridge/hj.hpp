#pragma once

// Value function u, characteristics, the prefactor exponent w and the
// assembled estimate q̂_t = c·e^{−ℓ/t} for exit of a bridge from a half-space.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expansion.hpp"
#include "sharp_bridge/geometry.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ode.hpp"
#include "sharp_bridge/ou.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace sharp_bridge {

using SpaceTimeScalar = std::function<double(const Vector&, double)>;
using SpaceTimeVector = std::function<Vector(const Vector&, double)>;
using SpaceTimeMatrix = std::function<Matrix(const Vector&, double)>;

/// u(z, s) with optional analytic derivatives; missing ones are taken by
/// finite differences.
struct ValueField {
    SpaceTimeScalar value;
    SpaceTimeVector gradient;
    SpaceTimeMatrix hessian;
    double fd_base = 1e-4;

    double operator()(const Vector& z, double s) const { return value(z, s); }

    Vector grad(const Vector& z, double s) const {
        if (gradient) return gradient(z, s);
        return richardson_gradient([&](const Vector& p) { return value(p, s); }, z, fd_step(fd_base, z));
    }

    /// FD Hessians are computed at steps h and 2h; a disagreement above 1e-3
    /// means u is not resolved as a smooth function here.
    Matrix hess(const Vector& z, double s) const {
        if (hessian) return hessian(z, s);
        const ScalarField f = [&](const Vector& p) { return value(p, s); };
        const double h = fd_step(10.0 * fd_base, z);
        const Matrix fine = central_hessian(f, z, h);
        const Matrix coarse = central_hessian(f, z, 2.0 * h);
        if ((fine - coarse).cwiseAbs().maxCoeff() > 1e-3) {
            throw NumericError("finite-difference Hessian of u is unstable (Richardson disagreement)");
        }
        return (4.0 * fine - coarse) / 3.0;
    }
};

/// (d(x, ȳ)² − d(x, y)²)/(2(1−s)) for the constant metric a0⁻¹, with ȳ the
/// a0-reflection of y across ∂D. Equals 2(k−⟨x,v̄⟩)(k−⟨y,v̄⟩)/(⟨a0v̄,v̄⟩(1−s)).
inline double u_halfspace_closed(const HalfSpaceDomain& domain, const Matrix& a0, const Vector& y,
                                 const Vector& x, double s) {
    const double dx = domain.boundary_distance(x);
    const double dy = domain.boundary_distance(y);
    if (dx < 0.0) throw DomainError("start outside domain");
    if (dy < 0.0) throw DomainError("conditioning point outside domain");
    const Vector& vb = domain.normal;
    const double q = vb.dot(a0 * vb);
    const Vector y_bar = y + (2.0 * dy / q) * (a0 * vb);
    const auto ldlt = a0.ldlt();
    const Vector e_bar = x - y_bar, e = x - y;
    return (e_bar.dot(ldlt.solve(e_bar)) - e.dot(ldlt.solve(e))) / (2.0 * (1.0 - s));
}

/// The closed half-space value function of the bridge, with derivatives.
inline ValueField closed_value_field(const HalfSpaceDomain& domain, const Matrix& a0, const Vector& y) {
    const Vector vb = domain.normal;
    const double k = domain.level;
    const double q = vb.dot(a0 * vb);
    const double dy = domain.boundary_distance(y);
    const auto d = vb.size();
    ValueField u;
    u.value = [=](const Vector& z, double s) { return 2.0 * (k - vb.dot(z)) * dy / (q * (1.0 - s)); };
    u.gradient = [=](const Vector&, double s) -> Vector { return (-2.0 * dy / (q * (1.0 - s))) * vb; };
    u.hessian = [=](const Vector&, double) -> Matrix { return Matrix::Zero(d, d); };
    return u;
}

/// Value function for the unconditioned process: (k−⟨z,v̄⟩)²/(2⟨a0v̄,v̄⟩(1−s)).
inline ValueField free_value_field(const HalfSpaceDomain& domain, const Matrix& a0) {
    const Vector vb = domain.normal;
    const double k = domain.level;
    const double q = vb.dot(a0 * vb);
    ValueField u;
    u.value = [=](const Vector& z, double s) {
        const double dz = k - vb.dot(z);
        return dz * dz / (2.0 * q * (1.0 - s));
    };
    u.gradient = [=](const Vector& z, double s) -> Vector { return (-(k - vb.dot(z)) / (q * (1.0 - s))) * vb; };
    u.hessian = [=](const Vector&, double s) -> Matrix { return vb * vb.transpose() / (q * (1.0 - s)); };
    return u;
}

/// Expansion of the unconditioned process: b̃ = 0 and b̃₁ = b.
inline DriftExpansion free_expansion(const DiffusionModel& model) {
    DriftExpansion e;
    const int d = model.dim;
    e.y = Vector::Zero(d);
    e.limit = [d](const Vector&, double) -> Vector { return Vector::Zero(d); };
    e.first_order = [&model](const Vector& z, double) -> Vector { return model.drift_at(z); };
    e.provenance = "free";
    return e;
}

// ---------------------------------------------------------------------------
// Variational route

struct VariationalOptions {
    GeodesicOptions geodesic;
    int max_iterations = 50;
    double tolerance = 1e-10;
};

struct VariationalResult {
    double value = 0.0;
    Vector touch_point;
    double touch_time = 0.0;
    /// Minimizer γ on [s, 1]: x → touch point → y at constant Riemannian speed.
    std::vector<double> times;
    std::vector<Vector> nodes;
    /// Index in `nodes` of the touch point.
    std::size_t touch_index = 0;
    bool converged = false;
};

namespace detail {

/// Orthonormal basis of v̄⊥ as columns.
inline Matrix tangent_basis(const Vector& normal) {
    const auto d = normal.size();
    const Matrix column = normal;
    Eigen::HouseholderQR<Matrix> qr(column);
    const Matrix q = qr.householderQ() * Matrix::Identity(d, d);
    return q.rightCols(d - 1);
}

}  // namespace detail

/// u(x, s) = min over p ∈ ∂D of [(d(x,p) + d(p,y))² − d(x,y)²]/(2(1−s)): the
/// energy of the cheapest path through ∂D ending at y at time 1, minus that
/// of the unconstrained geodesic. Each leg is a discrete geodesic with the
/// configured node count; p is found by Newton iterations on ∂D.
inline VariationalResult u_variational(const DiffusionModel& model, const HalfSpaceDomain& domain, const Vector& y,
                                       const Vector& x, double s, const VariationalOptions& opts = {}) {
    const int d = model.dim;
    const double dx = domain.boundary_distance(x);
    if (dx < 0.0) throw DomainError("start outside domain");
    if (!domain.contains(y)) throw DomainError("conditioning point outside domain");
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("start time s must lie in [0, 1)");
    GeodesicOptions gopts = opts.geodesic;
    gopts.refine_velocity = false;

    const Vector& vb = domain.normal;
    const Vector origin = domain.level * vb;
    const Matrix basis = d > 1 ? detail::tangent_basis(vb) : Matrix(d, 0);
    auto point = [&](const Vector& c) -> Vector { return origin + basis * c; };
    auto total_length = [&](const Vector& c) {
        const Vector p = point(c);
        return geodesic_bvp(model, x, p, gopts).length + geodesic_bvp(model, p, y, gopts).length;
    };

    VariationalResult res;
    Vector c = Vector::Zero(d - 1);
    if (dx == 0.0) {
        c = basis.transpose() * (x - origin);
        res.converged = true;
    } else if (d > 1) {
        // Start from the straight-line reflection in the metric frozen at x.
        const Matrix a0 = diffusion_matrix(model, x);
        const double dy = domain.boundary_distance(y);
        const Vector y_bar = y + (2.0 * dy / vb.dot(a0 * vb)) * (a0 * vb);
        const Vector p0 = x + (dx / (dx + dy)) * (y_bar - x);
        c = basis.transpose() * (p0 - origin);
        double f = total_length(c);
        for (int it = 0; it < opts.max_iterations; ++it) {
            const ScalarField fc = [&](const Vector& cc) { return total_length(cc); };
            const Vector g = central_gradient(fc, c, fd_step(1e-5, c));
            const Matrix h = symmetrized(central_hessian(fc, c, fd_step(1e-3, c)));
            Vector step;
            Eigen::LLT<Matrix> llt(h);
            if (llt.info() == Eigen::Success) step = -llt.solve(g);
            else step = -g;
            double alpha = 1.0, f_trial = f;
            Vector trial = c;
            for (; alpha > 1e-8; alpha *= 0.5) {
                trial = c + alpha * step;
                f_trial = total_length(trial);
                if (f_trial <= f) break;
            }
            if (alpha <= 1e-8) {
                res.converged = g.norm() <= 1e-6;
                break;
            }
            c = trial;
            f = f_trial;
            if ((alpha * step).norm() <= opts.tolerance * (1.0 + c.norm())) {
                res.converged = true;
                break;
            }
        }
    } else {
        res.converged = true;
    }

    res.touch_point = point(c);
    if (dx == 0.0) res.touch_point = x;
    const auto leg1 = geodesic_bvp(model, x, res.touch_point, gopts);
    const auto leg2 = geodesic_bvp(model, res.touch_point, y, gopts);
    const double l0 = geodesic_bvp(model, x, y, gopts).length;
    const double l1 = leg1.length, l2 = leg2.length;
    res.value = ((l1 + l2) * (l1 + l2) - l0 * l0) / (2.0 * (1.0 - s));
    if (dx == 0.0) res.value = 0.0;
    res.touch_time = s + (1.0 - s) * (l1 + l2 > 0.0 ? l1 / (l1 + l2) : 0.0);

    const auto n1 = leg1.nodes.size() - 1, n2 = leg2.nodes.size() - 1;
    for (std::size_t i = 0; i <= n1; ++i) {
        res.times.push_back(s + (res.touch_time - s) * static_cast<double>(i) / static_cast<double>(n1));
        res.nodes.push_back(leg1.nodes[i]);
    }
    res.touch_index = n1;
    for (std::size_t i = 1; i <= n2; ++i) {
        res.times.push_back(res.touch_time + (1.0 - res.touch_time) * static_cast<double>(i) / static_cast<double>(n2));
        res.nodes.push_back(leg2.nodes[i]);
    }
    return res;
}

/// Largest δ such that the path stays within ¼·dist(y, ∂D) of y (sup norm)
/// on [1−δ, 1]. The path must end at y at time 1.
inline double localization_delta(const std::vector<double>& times, const std::vector<Vector>& nodes,
                                 const HalfSpaceDomain& domain, const Vector& y) {
    const double radius = 0.25 * domain.boundary_distance(y);
    for (std::size_t i = nodes.size(); i-- > 0;) {
        const double dev = (nodes[i] - y).cwiseAbs().maxCoeff();
        if (dev > radius) {
            // Linear interpolation between node i (outside) and i+1 (inside).
            const double dev_in = (nodes[i + 1] - y).cwiseAbs().maxCoeff();
            const double frac = (radius - dev_in) / (dev - dev_in);
            const double v = times[i + 1] - frac * (times[i + 1] - times[i]);
            return 1.0 - v;
        }
    }
    return 1.0 - times.front();
}

// ---------------------------------------------------------------------------
// Characteristics and the prefactor

struct Characteristic {
    std::vector<double> times;
    std::vector<Vector> states;
    double t_star = 0.0;
    Vector exit_point;
    /// ⟨β(η, t*), v̄⟩; positive for a transversal exit.
    double non_tangential_margin = 0.0;
};

struct CharacteristicOptions {
    /// Integration stops at 1 − delta.
    double delta = 1e-6;
    OdeOptions ode{1e-12, 1e-12, 0.0, 200000, 1e-10};
};

/// β(z, r) = b̃(z, r) − a(z)∇u(z, r).
inline Vector characteristic_velocity(const DiffusionModel& model, const DriftExpansion& expansion,
                                      const ValueField& u, const Vector& z, double r) {
    return expansion.b_tilde(z, r) - diffusion_matrix(model, z) * u.grad(z, r);
}

/// Integrates γ̇ = β(γ, r) from (x, s) until γ reaches ∂D.
inline Characteristic characteristic_solve(const DiffusionModel& model, const HalfSpaceDomain& domain,
                                           const DriftExpansion& expansion, const ValueField& u, const Vector& x,
                                           double s, const CharacteristicOptions& opts = {}) {
    if (domain.boundary_distance(x) < 0.0) throw DomainError("start outside domain");
    const double horizon = 1.0 - opts.delta;
    if (!(s < horizon)) throw RsrError("characteristic starts after the truncated horizon 1 - delta");
    const OdeRhs rhs = [&](double r, const Vector& z) -> Vector {
        return characteristic_velocity(model, expansion, u, z, r);
    };
    const EventFunction event = [&](double, const Vector& z) { return domain.boundary_distance(z); };
    auto sol = integrate(rhs, s, x, horizon, opts.ode, event);
    if (!sol.event_hit) {
        throw RsrError("characteristic does not reach the boundary before 1 - delta = " + std::to_string(horizon) +
                       "; constant-prefactor regime not established");
    }
    Characteristic ch;
    ch.t_star = sol.final_time();
    ch.exit_point = sol.final_state();
    ch.non_tangential_margin = characteristic_velocity(model, expansion, u, ch.exit_point, ch.t_star).dot(domain.normal);
    ch.times = std::move(sol.times);
    ch.states = std::move(sol.states);
    return ch;
}

/// Integrand of w along a characteristic: ½tr(a Hess u) + ⟨b̃₁, ∇u⟩.
inline double w_integrand(const DiffusionModel& model, const DriftExpansion& expansion, const ValueField& u,
                          const Vector& z, double r) {
    const Matrix a = diffusion_matrix(model, z);
    return 0.5 * (a * u.hess(z, r)).trace() + expansion.b_tilde_1(z, r).dot(u.grad(z, r));
}

/// w(x, s) = ∫_s^{t*} (½tr(a Hess u) + ⟨b̃₁, ∇u⟩)(γ(r), r) dr, integrated
/// together with the characteristic.
inline double w_integral(const DiffusionModel& model, const DriftExpansion& expansion, const ValueField& u,
                         const Characteristic& ch, const OdeOptions& ode = {1e-12, 1e-12, 0.0, 200000, 1e-10}) {
    const double s = ch.times.front();
    if (ch.t_star <= s) return 0.0;
    const int d = model.dim;
    const OdeRhs rhs = [&](double r, const Vector& state) -> Vector {
        const Vector z = state.head(d);
        Vector out(d + 1);
        out.head(d) = characteristic_velocity(model, expansion, u, z, r);
        out(d) = w_integrand(model, expansion, u, z, r);
        return out;
    };
    Vector state(d + 1);
    state << ch.states.front(), 0.0;
    return integrate(rhs, s, state, ch.t_star, ode).final_state()(d);
}

/// w as a function of the starting point, by re-solving the characteristic.
inline SpaceTimeScalar w_field(const DiffusionModel& model, const HalfSpaceDomain& domain,
                               const DriftExpansion& expansion, const ValueField& u,
                               const CharacteristicOptions& opts = {}) {
    return [&model, domain, expansion, u, opts](const Vector& z, double s) {
        const auto ch = characteristic_solve(model, domain, expansion, u, z, s, opts);
        return w_integral(model, expansion, u, ch, opts.ode);
    };
}

struct PdeResiduals {
    double hj_residual = 0.0;
    double transport_residual = 0.0;
};

/// Largest |∂u/∂s + ⟨b̃,∇u⟩ − ½⟨a∇u,∇u⟩| and, when `w` is given, largest
/// |∂w/∂s + ⟨β,∇w⟩ + ½tr(a Hess u) + ⟨b̃₁,∇u⟩| over the probes, with every
/// derivative of u and w taken by central differences of step h.
inline PdeResiduals pde_residuals(const DiffusionModel& model, const SpaceTimeScalar& u, const SpaceTimeScalar& w,
                                  const DriftExpansion& expansion, const std::vector<std::pair<Vector, double>>& probes,
                                  double h = 1e-4) {
    PdeResiduals out;
    for (const auto& [z, s] : probes) {
        const ScalarField us = [&, s = s](const Vector& p) { return u(p, s); };
        const double du_ds = (u(z, s + h) - u(z, s - h)) / (2.0 * h);
        const Vector gu = central_gradient(us, z, h);
        const Matrix a = diffusion_matrix(model, z);
        const Vector bt = expansion.b_tilde(z, s);
        out.hj_residual = std::max(out.hj_residual, std::abs(du_ds + bt.dot(gu) - 0.5 * gu.dot(a * gu)));
        if (w) {
            const ScalarField ws = [&, s = s](const Vector& p) { return w(p, s); };
            const double dw_ds = (w(z, s + h) - w(z, s - h)) / (2.0 * h);
            const Vector gw = central_gradient(ws, z, h);
            const Matrix hu = central_hessian(us, z, std::sqrt(h) * 0.1);
            const Vector beta = bt - a * gu;
            const double r = dw_ds + beta.dot(gw) + 0.5 * (a * hu).trace() + expansion.b_tilde_1(z, s).dot(gu);
            out.transport_residual = std::max(out.transport_residual, std::abs(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Assembly

enum class Route { kClosed, kVariational };

inline const char* to_string(Route r) { return r == Route::kClosed ? "closed" : "variational"; }

struct SharpOptions {
    Route route = Route::kClosed;
    FirstOrderForm form = FirstOrderForm::kOriginCentered;
    /// Upper bound on the localization δ.
    double delta_floor = 0.05;
    bool require_rsr = true;
    /// false: the unconditioned process (no bridge), for diagnostics.
    bool conditioned = true;
    bool compute_residuals = true;
    std::vector<double> t_values;
    ExpansionOptions expansion;
    VariationalOptions variational;
};

struct SharpDiagnostics {
    double hj_residual = std::numeric_limits<double>::quiet_NaN();
    double transport_residual = std::numeric_limits<double>::quiet_NaN();
    bool rsr_ok = false;
    double delta_used = 0.0;
    double delta_localization = 0.0;
    double non_tangential_margin = 0.0;
    std::string message;
};

struct Prediction {
    double t = 0.0;
    double q_hat = 0.0;
};

struct SharpEstimate {
    double ell = 0.0;
    double w = 0.0;
    double c = 1.0;
    Characteristic characteristic;
    SharpDiagnostics diagnostics;
    std::vector<Prediction> predictions;
    Route route = Route::kClosed;

    double q_hat(double t) const { return c * std::exp(-ell / t); }
};

namespace detail {

inline constexpr std::array<double, 8> kGaussNodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                                   -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                                   0.7966664774136267,  0.9602898564975363};
inline constexpr std::array<double, 8> kGaussWeights{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                     0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                     0.2223810344533745, 0.1012285362903763};

/// Piecewise-linear interpolation of a sampled path.
inline Vector path_at(const std::vector<double>& times, const std::vector<Vector>& nodes, double r) {
    if (r <= times.front()) return nodes.front();
    if (r >= times.back()) return nodes.back();
    const auto it = std::upper_bound(times.begin(), times.end(), r);
    const auto i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double f = (r - times[i]) / (times[i + 1] - times[i]);
    return nodes[i] + f * (nodes[i + 1] - nodes[i]);
}

inline void check_rsr(SharpEstimate& est, const SharpOptions& opts) {
    auto& dg = est.diagnostics;
    const double t_star = est.characteristic.t_star;
    const bool on_boundary = t_star == est.characteristic.times.front() && est.ell == 0.0;
    dg.rsr_ok = t_star < 1.0 - dg.delta_used && (on_boundary || dg.non_tangential_margin > 1e-6);
    if (!dg.rsr_ok) {
        dg.message = "constant-prefactor regime not established: t* = " + std::to_string(t_star) +
                     ", 1 - delta = " + std::to_string(1.0 - dg.delta_used) +
                     ", non-tangential margin = " + std::to_string(dg.non_tangential_margin);
        if (opts.require_rsr) throw RsrError(dg.message);
    }
}

}  // namespace detail

/// Assembles ℓ = u(x, s), the characteristic, w and c = e^{−w}, and checks
/// the strong-regularity diagnostics. The model referenced by `problem` must
/// outlive any use of the returned fields.
inline SharpEstimate sharp_estimate(const BridgeProblem& problem, const SharpOptions& opts = {}) {
    problem.validate();
    const auto& model = problem.model;
    const auto& dom = problem.domain;
    const Vector& x = problem.x;
    const Vector& y = problem.y;
    const double s = problem.s;

    SharpEstimate est;
    est.route = opts.route;
    const DriftExpansion expansion =
        opts.conditioned ? make_expansion(model, y, opts.form, opts.expansion) : free_expansion(model);

    if (opts.route == Route::kClosed) {
        if (!model.constant_dispersion) {
            throw ConfigError("route \"closed\" needs a constant diffusion matrix (OU or Brownian model)");
        }
        const Matrix a0 = diffusion_matrix(model, x);
        const ValueField u = opts.conditioned ? closed_value_field(dom, a0, y) : free_value_field(dom, a0);
        est.ell = u(x, s);
        CharacteristicOptions copts;
        est.characteristic = characteristic_solve(model, dom, expansion, u, x, s, copts);
        est.w = w_integral(model, expansion, u, est.characteristic, copts.ode);

        auto& dg = est.diagnostics;
        dg.non_tangential_margin = est.characteristic.non_tangential_margin;
        if (opts.conditioned) {
            // Closed-form path after the exit: the a0-geodesic η → y on [t*, 1].
            auto times = est.characteristic.times;
            auto nodes = est.characteristic.states;
            const Vector eta = est.characteristic.exit_point;
            const double t_star = est.characteristic.t_star;
            for (int i = 1; i <= 200; ++i) {
                const double f = i / 200.0;
                times.push_back(t_star + f * (1.0 - t_star));
                nodes.push_back(eta + f * (y - eta));
            }
            dg.delta_localization = localization_delta(times, nodes, dom, y);
            dg.delta_used = std::min(dg.delta_localization, opts.delta_floor);
        } else {
            dg.delta_localization = opts.delta_floor;
            dg.delta_used = opts.delta_floor;
        }
        if (opts.compute_residuals && est.characteristic.t_star > s) {
            const auto wf = w_field(model, dom, expansion, u, copts);
            std::vector<std::pair<Vector, double>> probes;
            for (double f : {0.25, 0.5, 0.75}) {
                const double r = s + f * (est.characteristic.t_star - s);
                probes.emplace_back(detail::path_at(est.characteristic.times, est.characteristic.states, r), r);
            }
            const auto res = pde_residuals(model, u.value, wf, expansion, probes);
            dg.hj_residual = res.hj_residual;
            dg.transport_residual = res.transport_residual;
        }
    } else {
        const auto vr = u_variational(model, dom, y, x, s, opts.variational);
        est.ell = vr.value;
        auto& ch = est.characteristic;
        ch.times.assign(vr.times.begin(), vr.times.begin() + static_cast<std::ptrdiff_t>(vr.touch_index) + 1);
        ch.states.assign(vr.nodes.begin(), vr.nodes.begin() + static_cast<std::ptrdiff_t>(vr.touch_index) + 1);
        ch.t_star = vr.touch_time;
        ch.exit_point = vr.touch_point;
        const std::size_t n = ch.states.size();
        if (n >= 2 && ch.t_star > s) {
            const Vector vel = (ch.states[n - 1] - ch.states[n - 2]) / (ch.times[n - 1] - ch.times[n - 2]);
            ch.non_tangential_margin = vel.dot(dom.normal);
        }
        ValueField u;
        VariationalOptions vopts = opts.variational;
        u.value = [&model, dom, y, vopts](const Vector& z, double r) {
            return u_variational(model, dom, y, z, r, vopts).value;
        };
        u.fd_base = 1e-4;
        est.w = 0.0;
        if (ch.t_star > s) {
            const double half = 0.5 * (ch.t_star - s), mid = 0.5 * (ch.t_star + s);
            for (std::size_t i = 0; i < detail::kGaussNodes.size(); ++i) {
                const double r = mid + half * detail::kGaussNodes[i];
                const Vector z = detail::path_at(ch.times, ch.states, r);
                est.w += half * detail::kGaussWeights[i] * w_integrand(model, expansion, u, z, r);
            }
        }
        auto& dg = est.diagnostics;
        dg.non_tangential_margin = ch.non_tangential_margin;
        dg.delta_localization = localization_delta(vr.times, vr.nodes, dom, y);
        dg.delta_used = std::min(dg.delta_localization, opts.delta_floor);
        if (opts.compute_residuals && ch.t_star > s) {
            const double r = 0.5 * (s + ch.t_star);
            const auto res = pde_residuals(model, u.value, {}, expansion,
                                           {{detail::path_at(ch.times, ch.states, r), r}});
            dg.hj_residual = res.hj_residual;
        }
    }

    est.c = std::exp(-est.w);
    detail::check_rsr(est, opts);
    for (double t : opts.t_values) {
        if (!(t > 0.0)) throw ConfigError("prediction times must be positive");
        est.predictions.push_back({t, est.q_hat(t)});
    }
    return est;
}

}  // namespace sharp_bridge
