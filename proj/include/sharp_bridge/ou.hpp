#pragma once

// Closed forms for the Ornstein-Uhlenbeck model dX = MX dt + dB: Gram
// matrices, the exact Gaussian score, and the half-space solution
// (ℓ, τ, η, w, c).

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/linalg.hpp"
#include "sharp_bridge/model.hpp"

#include <cmath>

namespace sharp_bridge {

/// Which first-order drift the OU closed forms use.
///
/// kOriginCentered is b̃₁(z) = ½(M−M*)z, with the matching w in which a
/// log term appears. kBridgeCentered is b̃₁(z) = ½(M−M*)(z−y), the first-order
/// term of the exact Gaussian score; it agrees with the geometric route
/// b + ∇A and gives w = d_x d_y/(d_x+d_y)·⟨v̄,(M−M*)(y−x)⟩.
enum class FirstOrderForm { kOriginCentered, kBridgeCentered };

inline const char* to_string(FirstOrderForm f) {
    return f == FirstOrderForm::kOriginCentered ? "origin-centered" : "bridge-centered";
}

/// S_t = ∫₀ᵗ e^{Mu} e^{M*u} du from the block exponential of [[M, I], [0, −M*]]t.
inline Matrix gram_matrix(const Matrix& m, double t) {
    if (!(t >= 0.0)) throw ConfigError("gram_matrix: t must be non-negative");
    const auto d = m.rows();
    Matrix block = Matrix::Zero(2 * d, 2 * d);
    block.topLeftCorner(d, d) = m * t;
    block.topRightCorner(d, d) = Matrix::Identity(d, d) * t;
    block.bottomRightCorner(d, d) = -m.transpose() * t;
    const Matrix e = matrix_exponential(block);
    // top-right block is ∫₀ᵗ e^{M(t−u)} e^{−M*u} du; right-multiplying by e^{M*t} gives S_t.
    return symmetrized(e.topRightCorner(d, d) * e.topLeftCorner(d, d).transpose());
}

/// tI + (M+M*)t²/2.
inline Matrix gram_matrix_series(const Matrix& m, double t) {
    const auto d = m.rows();
    return t * Matrix::Identity(d, d) + 0.5 * t * t * (m + m.transpose());
}

/// ∇_z log p(τ, z, y) = e^{M*τ} S_τ⁻¹ (y − e^{Mτ} z).
inline Vector ou_log_density_grad(const Matrix& m, double tau, const Vector& z, const Vector& y) {
    if (!(tau > 0.0)) throw NumericError("ou_log_density_grad: singular Gram matrix at non-positive time");
    const Matrix e = matrix_exponential(m * tau);
    const Matrix s = gram_matrix(m, tau);
    const Vector r = y - e * z;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw NumericError("ou_log_density_grad: Gram matrix not positive definite");
    return e.transpose() * llt.solve(r);
}

/// b̃₁ for the OU model.
inline Vector ou_first_order_drift(const Matrix& m, const Vector& y, const Vector& z,
                                   FirstOrderForm form = FirstOrderForm::kOriginCentered) {
    const Matrix skew = m - m.transpose();
    return form == FirstOrderForm::kOriginCentered ? Vector(0.5 * skew * z) : Vector(0.5 * skew * (z - y));
}

struct OuSolution {
    double ell = 0.0;
    double tau = 0.0;
    Vector eta;
    double w = 0.0;
    double c = 1.0;
    Vector x;
    double s = 0.0;
    /// x lies on ∂D: immediate exit, ℓ = 0, τ = s, η = x.
    bool start_on_boundary = false;

    /// The characteristic x + ((r−s)/(τ−s))(η−x) for r ∈ [s, τ].
    Vector path(double r) const {
        if (tau <= s) return x;
        return x + ((r - s) / (tau - s)) * (eta - x);
    }
};

/// ℓ, τ, η, w and c for the OU bridge leaving the half-space {⟨v̄,z⟩ < k}.
inline OuSolution ou_halfspace_solution(const Matrix& m, const HalfSpaceDomain& domain, const Vector& x,
                                        const Vector& y, double s,
                                        FirstOrderForm form = FirstOrderForm::kOriginCentered) {
    const Vector& vb = domain.normal;
    const double k = domain.level;
    const double dx = domain.boundary_distance(x);
    const double dy = domain.boundary_distance(y);
    if (dx < 0.0) throw DomainError("start outside domain");
    if (!(dy > 0.0)) throw DomainError("conditioning point outside domain");
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("start time s must lie in [0, 1)");

    OuSolution sol;
    sol.x = x;
    sol.s = s;
    sol.ell = 2.0 * dx * dy / (1.0 - s);
    const double den = 2.0 * k - (x + y).dot(vb);
    const double ratio = dx / den;
    sol.tau = s + (1.0 - s) * ratio;
    sol.eta = x + ratio * (y - x + 2.0 * dy * vb);
    sol.start_on_boundary = dx == 0.0;
    if (sol.start_on_boundary) {
        sol.tau = s;
        sol.eta = x;
    }

    const Matrix skew = m - m.transpose();
    const double along = vb.dot(skew * (y - x));
    if (form == FirstOrderForm::kOriginCentered) {
        sol.w = dy * (ratio * along + std::log(dy / den) * vb.dot(skew * y));
    } else {
        sol.w = dy * ratio * along;
    }
    if (sol.start_on_boundary) sol.w = 0.0;
    sol.c = std::exp(-sol.w);
    return sol;
}

}  // namespace sharp_bridge
