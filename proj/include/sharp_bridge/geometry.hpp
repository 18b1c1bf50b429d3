#pragma once

// Riemannian geometry of the metric g = a⁻¹: discrete geodesic boundary
// value problems, the exponential map, the van Vleck factor
// H(x, y) = (det exp_x'(ξ))^{-1/2} and the drift work integral
// A(x, y) = ∫⟨a⁻¹b(γ), γ̇⟩ along the minimizing geodesic.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/linalg.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ode.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace sharp_bridge {

struct GeodesicOptions {
    int nodes = 200;  // number of segments N
    double gradient_tolerance = 1e-8;
    int max_iterations = 5000;
    /// Polish ξ by Newton shooting on exp_x(ξ) = y.
    bool refine_velocity = true;
};

struct GeodesicResult {
    /// N + 1 points γ(i/N); the endpoints are the inputs, bit for bit.
    std::vector<Vector> nodes;
    double length = 0.0;
    double energy = 0.0;
    /// Initial velocity of the unit-time constant-speed geodesic; its
    /// Riemannian norm equals `length`.
    Vector initial_velocity;
    bool converged = false;
    double gradient_norm = 0.0;
    int iterations = 0;
};

namespace detail {

inline double metric_norm(const Matrix& g, const Vector& v) { return std::sqrt(std::max(0.0, v.dot(g * v))); }

// Trapezoidal length of each polyline segment, plus the per-node metrics.
struct SegmentLengths {
    std::vector<Matrix> g;
    std::vector<double> left, right;  // |Δ_i| measured with g_i and g_{i+1}

    double segment(std::size_t i) const { return 0.5 * (left[i] + right[i]); }
};

inline SegmentLengths segment_lengths(const DiffusionModel& model, std::span<const Vector> nodes) {
    SegmentLengths s;
    s.g.reserve(nodes.size());
    for (const auto& p : nodes) s.g.push_back(metric(model, p));
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const Vector delta = nodes[i + 1] - nodes[i];
        s.left.push_back(metric_norm(s.g[i], delta));
        s.right.push_back(metric_norm(s.g[i + 1], delta));
    }
    return s;
}

// E = (N/2) Σ ℓ_i², the energy of the piecewise constant-speed curve whose
// i-th piece has trapezoidal length ℓ_i. E ≥ L²/2 with equality iff all ℓ_i agree.
class DiscreteEnergy {
public:
    DiscreteEnergy(const DiffusionModel& model, int segments) : model_(model), n_(segments) {}

    double value(std::span<const Vector> nodes) const {
        const auto s = segment_lengths(model_, nodes);
        double e = 0.0;
        for (std::size_t i = 0; i < s.left.size(); ++i) e += s.segment(i) * s.segment(i);
        return 0.5 * n_ * e;
    }

    // Gradient with respect to the interior nodes, stacked node by node.
    Vector gradient(std::span<const Vector> nodes) const {
        const int d = model_.dim;
        const auto s = segment_lengths(model_, nodes);
        Vector grad = Vector::Zero(static_cast<Eigen::Index>(n_ - 1) * d);
        for (int j = 1; j < n_; ++j) {
            const auto dg = metric_derivatives(model_, nodes[static_cast<std::size_t>(j)]);
            Vector gj = Vector::Zero(d);
            const auto uj = static_cast<std::size_t>(j);
            // Segment j-1 ends at node j.
            {
                const Vector delta = nodes[uj] - nodes[uj - 1];
                const double ell = s.segment(uj - 1);
                const double na = s.left[uj - 1], nb = s.right[uj - 1];
                Vector dl = Vector::Zero(d);
                if (na > 0.0) dl += s.g[uj - 1] * delta / na;
                if (nb > 0.0) {
                    dl += s.g[uj] * delta / nb;
                    for (int l = 0; l < d; ++l) dl(l) += delta.dot(dg[static_cast<std::size_t>(l)] * delta) / (2.0 * nb);
                }
                gj += ell * 0.5 * dl;
            }
            // Segment j starts at node j.
            {
                const Vector delta = nodes[uj + 1] - nodes[uj];
                const double ell = s.segment(uj);
                const double na = s.left[uj], nb = s.right[uj];
                Vector dl = Vector::Zero(d);
                if (na > 0.0) {
                    dl -= s.g[uj] * delta / na;
                    for (int l = 0; l < d; ++l) dl(l) += delta.dot(dg[static_cast<std::size_t>(l)] * delta) / (2.0 * na);
                }
                if (nb > 0.0) dl -= s.g[uj + 1] * delta / nb;
                gj += ell * 0.5 * dl;
            }
            grad.segment(static_cast<Eigen::Index>(j - 1) * d, d) = n_ * gj;
        }
        return grad;
    }

private:
    const DiffusionModel& model_;
    int n_;
};

// Block tridiagonal system: sub[j] couples row j to node j-1, sup[j] to j+1.
inline Vector solve_block_tridiagonal(std::vector<Matrix> diag, const std::vector<Matrix>& sub,
                                      const std::vector<Matrix>& sup, const Vector& rhs, int d) {
    const std::size_t m = diag.size();
    std::vector<Vector> r(m);
    for (std::size_t j = 0; j < m; ++j) r[j] = rhs.segment(static_cast<Eigen::Index>(j) * d, d);
    std::vector<Eigen::PartialPivLU<Matrix>> lu(m);
    for (std::size_t j = 0; j < m; ++j) {
        if (j > 0) {
            const Matrix factor = lu[j - 1].solve(Matrix::Identity(d, d));
            diag[j] -= sub[j] * factor * sup[j - 1];
            r[j] -= sub[j] * factor * r[j - 1];
        }
        lu[j].compute(diag[j]);
        if (std::abs(lu[j].determinant()) < 1e-300) throw NumericError("singular geodesic Hessian");
    }
    Vector x(rhs.size());
    Vector next;
    for (std::size_t jj = m; jj-- > 0;) {
        Vector v = r[jj];
        if (jj + 1 < m) v -= sup[jj] * next;
        next = lu[jj].solve(v);
        x.segment(static_cast<Eigen::Index>(jj) * d, d) = next;
    }
    return x;
}

}  // namespace detail

/// Trapezoidal discretization of ∫√⟨a⁻¹ζ̇, ζ̇⟩ dt over the polyline.
inline double path_length(const DiffusionModel& model, std::span<const Vector> nodes) {
    if (nodes.size() < 2) throw ConfigError("path_length: need at least two nodes");
    const auto s = detail::segment_lengths(model, nodes);
    double total = 0.0;
    for (std::size_t i = 0; i < s.left.size(); ++i) total += s.segment(i);
    return total;
}

namespace detail {
inline Vector refine_shooting(const DiffusionModel& model, const Vector& x, const Vector& y, Vector xi);
}

/// Minimizes the discrete energy over the interior nodes, starting from the
/// straight segment, with damped Newton steps on a finite-difference
/// block-tridiagonal Hessian.
inline GeodesicResult geodesic_bvp(const DiffusionModel& model, const Vector& x, const Vector& y,
                                   const GeodesicOptions& opts = {}) {
    const int d = model.dim;
    const int n = opts.nodes;
    if (n < 1) throw ConfigError("geodesic_bvp: need at least one segment");
    if (x.size() != d || y.size() != d) throw ConfigError("geodesic_bvp: dimension mismatch");

    GeodesicResult res;
    res.nodes.resize(static_cast<std::size_t>(n) + 1);
    for (int i = 0; i <= n; ++i) {
        const double frac = static_cast<double>(i) / n;
        res.nodes[static_cast<std::size_t>(i)] = x + frac * (y - x);
    }
    res.nodes.front() = x;
    res.nodes.back() = y;
    if (x == y) {
        (void)metric(model, x);
        res.initial_velocity = Vector::Zero(d);
        res.converged = true;
        return res;
    }

    detail::DiscreteEnergy energy(model, n);
    auto energy_or_inf = [&](std::span<const Vector> nodes) {
        try {
            return energy.value(nodes);
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    double e = energy.value(res.nodes);
    Vector grad = energy.gradient(res.nodes);
    int it = 0;
    for (; it < opts.max_iterations; ++it) {
        if (grad.norm() <= opts.gradient_tolerance) break;

        // Hessian columns by central differences of the gradient; nodes
        // three apart never share a gradient row, so they are perturbed together.
        std::vector<Matrix> diag(static_cast<std::size_t>(n - 1), Matrix::Zero(d, d));
        std::vector<Matrix> sub = diag, sup = diag;
        double scale = 0.0;
        for (const auto& p : res.nodes) scale = std::max(scale, p.cwiseAbs().maxCoeff());
        const double h = 1e-6 * (1.0 + scale);
        for (int color = 0; color < 3; ++color) {
            for (int q = 0; q < d; ++q) {
                auto plus = res.nodes, minus = res.nodes;
                for (int j = 1 + color; j < n; j += 3) {
                    plus[static_cast<std::size_t>(j)](q) += h;
                    minus[static_cast<std::size_t>(j)](q) -= h;
                }
                const Vector dg = (energy.gradient(plus) - energy.gradient(minus)) / (2.0 * h);
                for (int row = 1; row < n; ++row) {
                    const Vector col = dg.segment(static_cast<Eigen::Index>(row - 1) * d, d);
                    const auto r = static_cast<std::size_t>(row - 1);
                    for (int k = row - 1; k <= row + 1; ++k) {
                        if (k < 1 || k >= n || (k - 1) % 3 != color) continue;
                        if (k == row) diag[r].col(q) = col;
                        else if (k == row - 1) sub[r].col(q) = col;
                        else sup[r].col(q) = col;
                    }
                }
            }
        }

        Vector step;
        bool newton = true;
        try {
            step = detail::solve_block_tridiagonal(diag, sub, sup, -grad, d);
            if (!step.allFinite() || step.dot(grad) >= 0.0) newton = false;
        } catch (const NumericError&) {
            newton = false;
        }
        if (!newton) step = -grad / (2.0 * n);

        const double slope = step.dot(grad);
        double alpha = 1.0;
        auto trial = res.nodes;
        double e_trial = 0.0;
        for (;;) {
            for (int j = 1; j < n; ++j) {
                trial[static_cast<std::size_t>(j)] =
                    res.nodes[static_cast<std::size_t>(j)] + alpha * step.segment(static_cast<Eigen::Index>(j - 1) * d, d);
            }
            e_trial = energy_or_inf(trial);
            if (e_trial <= e + 1e-4 * alpha * slope) break;
            // Rounding-level energy changes: accept a full Newton step.
            if (newton && alpha == 1.0 && std::isfinite(e_trial) && e_trial - e <= 1e-14 * std::abs(e)) break;
            alpha *= 0.5;
            if (alpha < 1e-12) break;
        }
        if (alpha < 1e-12) break;  // stagnated; reported through `converged`
        res.nodes = std::move(trial);
        e = e_trial;
        grad = energy.gradient(res.nodes);
    }

    res.iterations = it;
    res.gradient_norm = grad.norm();
    res.converged = res.gradient_norm <= opts.gradient_tolerance;
    res.energy = e;
    res.length = path_length(model, res.nodes);

    Vector xi = n >= 2 ? Vector((-3.0 * res.nodes[0] + 4.0 * res.nodes[1] - res.nodes[2]) * (n / 2.0))
                       : Vector((res.nodes[1] - res.nodes[0]) * n);
    const double speed = detail::metric_norm(metric(model, x), xi);
    if (speed > 0.0) xi *= res.length / speed;
    res.initial_velocity = opts.refine_velocity ? detail::refine_shooting(model, x, y, xi) : xi;
    return res;
}

/// Geodesic equation γ̈ = −Γ(γ)[γ̇, γ̇] for the metric a⁻¹, as a first-order
/// system on (position, velocity).
inline Vector geodesic_acceleration(const DiffusionModel& model, const Vector& z, const Vector& u) {
    const int d = model.dim;
    if (model.constant_dispersion) return Vector::Zero(d);
    const auto dg = metric_derivatives(model, z);
    Matrix dir = Matrix::Zero(d, d);  // Σ_i u_i ∂_i g
    Vector c(d);
    for (int l = 0; l < d; ++l) {
        dir += u(l) * dg[static_cast<std::size_t>(l)];
        c(l) = -0.5 * u.dot(dg[static_cast<std::size_t>(l)] * u);
    }
    c += dir * u;
    return -diffusion_matrix(model, z) * c;
}

inline OdeRhs geodesic_rhs(const DiffusionModel& model) {
    return [&model](double, const Vector& state) -> Vector {
        const int d = model.dim;
        Vector out(2 * d);
        out.head(d) = state.tail(d);
        out.tail(d) = geodesic_acceleration(model, state.head(d), state.tail(d));
        return out;
    };
}

struct ExpMapResult {
    Vector endpoint;
    /// States are (position, velocity) stacked.
    OdeSolution trajectory;
};

/// exp_x(ξ): the unit-time geodesic flow from x with initial velocity ξ.
inline ExpMapResult exp_map(const DiffusionModel& model, const Vector& x, const Vector& xi,
                            const OdeOptions& opts = {}) {
    const int d = model.dim;
    if (x.size() != d || xi.size() != d) throw ConfigError("exp_map: dimension mismatch");
    Vector state(2 * d);
    state << x, xi;
    ExpMapResult res;
    res.trajectory = integrate(geodesic_rhs(model), 0.0, state, 1.0, opts);
    res.endpoint = res.trajectory.final_state().head(d);
    return res;
}

namespace detail {

/// A few Newton steps on ξ ↦ exp_x(ξ) − y from the discrete estimate. Steps
/// that do not reduce the miss distance are rejected.
inline Vector refine_shooting(const DiffusionModel& model, const Vector& x, const Vector& y, Vector xi) {
    const int d = model.dim;
    try {
        double miss = (exp_map(model, x, xi).endpoint - y).norm();
        for (int it = 0; it < 4 && miss > 1e-12; ++it) {
            const double h = fd_step(1e-6, xi);
            Matrix jac(d, d);
            for (int j = 0; j < d; ++j) {
                jac.col(j) = (exp_map(model, x, xi + h * unit(d, j)).endpoint -
                              exp_map(model, x, xi - h * unit(d, j)).endpoint) / (2.0 * h);
            }
            const Vector trial = xi - jac.partialPivLu().solve(exp_map(model, x, xi).endpoint - y);
            if (!trial.allFinite()) break;
            const double trial_miss = (exp_map(model, x, trial).endpoint - y).norm();
            if (!(trial_miss < miss)) break;
            xi = trial;
            miss = trial_miss;
        }
    } catch (const Error&) {
    }
    return xi;
}

}  // namespace detail

struct VanVleckOptions {
    double fd_base = 1e-5;
    double determinant_floor = 1e-8;
    GeodesicOptions geodesic;
    OdeOptions ode;
};

struct VanVleckResult {
    double value = 1.0;
    double determinant = 1.0;
    Vector initial_velocity;
};

/// H(x, y) = (det ∂exp_x(ξ)/∂ξ)^{-1/2}. The Jacobian is taken by central
/// differences, with every perturbed flow replayed on the step mesh of the
/// base flow.
inline VanVleckResult van_vleck_from_geodesic(const DiffusionModel& model, const Vector& x,
                                              const GeodesicResult& geo, const VanVleckOptions& opts = {}) {
    const int d = model.dim;
    const Vector xi = geo.initial_velocity;
    const auto base = exp_map(model, x, xi, opts.ode);
    const auto rhs = geodesic_rhs(model);
    const double h = fd_step(opts.fd_base, xi);
    Matrix jac(d, d);
    Vector state(2 * d);
    for (int j = 0; j < d; ++j) {
        state << x, xi + h * unit(d, j);
        const Vector plus = integrate_on_mesh(rhs, base.trajectory.times, state).head(d);
        state << x, xi - h * unit(d, j);
        const Vector minus = integrate_on_mesh(rhs, base.trajectory.times, state).head(d);
        jac.col(j) = (plus - minus) / (2.0 * h);
    }
    VanVleckResult res;
    res.determinant = jac.determinant();
    res.initial_velocity = xi;
    if (!(res.determinant > opts.determinant_floor)) {
        throw NumericError("van Vleck factor: near-conjugate points, det exp' = " + std::to_string(res.determinant));
    }
    res.value = 1.0 / std::sqrt(res.determinant);
    return res;
}

inline VanVleckResult van_vleck(const DiffusionModel& model, const Vector& x, const Vector& y,
                                const VanVleckOptions& opts = {}) {
    return van_vleck_from_geodesic(model, x, geodesic_bvp(model, x, y, opts.geodesic), opts);
}

inline double van_vleck_H(const DiffusionModel& model, const Vector& x, const Vector& y,
                          const VanVleckOptions& opts = {}) {
    return van_vleck(model, x, y, opts).value;
}

/// Trapezoidal quadrature of ∫⟨a⁻¹b(γ), γ̇⟩ dt along the geodesic nodes.
inline double work_integral_A(const DiffusionModel& model, const GeodesicResult& geodesic) {
    const auto& nodes = geodesic.nodes;
    double total = 0.0;
    Vector prev = metric(model, nodes.front()) * model.drift_at(nodes.front());
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const Vector next = metric(model, nodes[i + 1]) * model.drift_at(nodes[i + 1]);
        total += 0.5 * (prev + next).dot(nodes[i + 1] - nodes[i]);
        prev = next;
    }
    return total;
}

}  // namespace sharp_bridge
