#pragma once

// Diffusion models dX = b(X) dt + σ(X) dB, half-space exit domains, and the
// bridge problem that ties them to a start point, a conditioning point and
// a conditioning horizon.

#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expression.hpp"
#include "sharp_bridge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sharp_bridge {

struct DiffusionModel {
    std::string kind = "custom";
    int dim = 1;
    VectorField drift;
    MatrixField dispersion;
    /// Optional U with ∇U = a⁻¹b.
    ScalarField potential;
    /// Set for the Ornstein-Uhlenbeck family b(z) = Mz, σ = I.
    std::optional<Matrix> linear_drift;
    /// σ does not depend on z; metric derivatives vanish identically.
    bool constant_dispersion = false;

    Vector drift_at(const Vector& z) const {
        Vector b = drift(z);
        if (b.size() != dim || !b.allFinite()) throw NumericError("drift evaluation is not finite");
        return b;
    }

    Matrix dispersion_at(const Vector& z) const {
        Matrix s = dispersion(z);
        if (s.rows() != dim || s.cols() != dim || !s.allFinite()) {
            throw NumericError("dispersion evaluation is not finite");
        }
        return s;
    }

    bool has_potential() const { return static_cast<bool>(potential); }
    bool is_linear() const { return linear_drift.has_value(); }
};

/// a(z) = σ(z)σ(z)*.
inline Matrix diffusion_matrix(const DiffusionModel& model, const Vector& z) {
    if (!z.allFinite()) throw NumericError("diffusion_matrix: non-finite point");
    const Matrix s = model.dispersion_at(z);
    return symmetrized(s * s.transpose());
}

/// Riemannian metric g(z) = a(z)⁻¹.
inline Matrix metric(const DiffusionModel& model, const Vector& z) {
    return spd_inverse(diffusion_matrix(model, z), "diffusion matrix");
}

/// ∂g/∂z_l for every l, by a fourth-order five-point stencil.
inline std::vector<Matrix> metric_derivatives(const DiffusionModel& model, const Vector& z) {
    const int d = model.dim;
    std::vector<Matrix> out(static_cast<std::size_t>(d), Matrix::Zero(d, d));
    if (model.constant_dispersion) return out;
    const double h = fd_step(1e-3, z);
    Vector zp = z;
    for (int l = 0; l < d; ++l) {
        zp(l) = z(l) + h;       const Matrix p1 = metric(model, zp);
        zp(l) = z(l) + 2.0 * h; const Matrix p2 = metric(model, zp);
        zp(l) = z(l) - h;       const Matrix m1 = metric(model, zp);
        zp(l) = z(l) - 2.0 * h; const Matrix m2 = metric(model, zp);
        zp(l) = z(l);
        out[static_cast<std::size_t>(l)] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    }
    return out;
}

struct EllipticityReport {
    double min_eigenvalue = std::numeric_limits<double>::infinity();
    std::size_t worst_probe = 0;
    bool ok = false;
};

/// Smallest eigenvalue of a(z) over the probes; fails at or below 1e-10.
inline EllipticityReport ellipticity_check(const DiffusionModel& model, const std::vector<Vector>& probes,
                                           double threshold = 1e-10) {
    if (probes.empty()) throw ConfigError("ellipticity_check: empty probe set");
    EllipticityReport rep;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(diffusion_matrix(model, probes[i]), Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        if (lo < rep.min_eigenvalue) {
            rep.min_eigenvalue = lo;
            rep.worst_probe = i;
        }
    }
    rep.ok = rep.min_eigenvalue > threshold;
    return rep;
}

/// Grid over the box hull of {x, y} inflated by 50% (3 points per axis,
/// corners and center only above four dimensions).
inline std::vector<Vector> default_probes(const Vector& x, const Vector& y) {
    const auto d = x.size();
    const Vector lo = x.cwiseMin(y), hi = x.cwiseMax(y);
    const Vector mid = 0.5 * (lo + hi);
    const Vector half = (0.5 * (hi - lo) * 1.5).cwiseMax(0.25);
    std::vector<Vector> probes;
    if (d <= 4) {
        const int total = static_cast<int>(std::pow(3, d));
        for (int code = 0; code < total; ++code) {
            Vector p = mid;
            int c = code;
            for (Eigen::Index i = 0; i < d; ++i, c /= 3) p(i) += (c % 3 - 1) * half(i);
            probes.push_back(p);
        }
    } else {
        probes.push_back(mid);
        for (long code = 0; code < (1L << d); ++code) {
            Vector p = mid;
            for (Eigen::Index i = 0; i < d; ++i) p(i) += ((code >> i) & 1 ? 1.0 : -1.0) * half(i);
            probes.push_back(p);
        }
    }
    return probes;
}

/// D = {z : ⟨v̄, z⟩ < k}.
struct HalfSpaceDomain {
    Vector normal;
    double level = 0.0;

    HalfSpaceDomain() = default;
    HalfSpaceDomain(Vector n, double k) : normal(std::move(n)), level(k) {
        if (normal.size() == 0 || !normal.allFinite() || std::abs(normal.norm() - 1.0) > 1e-12) {
            throw ConfigError("half-space normal must be a unit vector");
        }
        if (!std::isfinite(level)) throw ConfigError("half-space level must be finite");
    }

    int dim() const { return static_cast<int>(normal.size()); }
    /// k − ⟨v̄, z⟩; positive inside.
    double boundary_distance(const Vector& z) const { return level - normal.dot(z); }
    bool contains(const Vector& z) const { return boundary_distance(z) > 0.0; }
};

struct BridgeProblem {
    DiffusionModel model;
    HalfSpaceDomain domain;
    Vector x;
    Vector y;
    double s = 0.0;
    double t = 1.0;

    /// Checks dimensions and the strict-interior / time-window invariants.
    /// A start point exactly on ∂D is tolerated (it exits immediately).
    void validate() const {
        if (x.size() != model.dim || y.size() != model.dim || domain.dim() != model.dim) {
            throw ConfigError("bridge problem: dimension mismatch");
        }
        if (domain.boundary_distance(x) < 0.0) throw DomainError("start outside domain");
        if (!domain.contains(y)) throw DomainError("conditioning point outside domain");
        if (!(s >= 0.0 && s < 1.0)) throw ConfigError("start time s must lie in [0, 1)");
        if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("conditioning horizon t must be positive");
    }
};

// ---------------------------------------------------------------------------
// Built-in models

inline DiffusionModel make_custom_model(int dim, VectorField drift, MatrixField dispersion,
                                        ScalarField potential = {}) {
    DiffusionModel m;
    m.kind = "custom";
    m.dim = dim;
    m.drift = std::move(drift);
    m.dispersion = std::move(dispersion);
    m.potential = std::move(potential);
    return m;
}

inline DiffusionModel make_ou(const Matrix& drift_matrix) {
    if (drift_matrix.rows() != drift_matrix.cols() || drift_matrix.rows() == 0) {
        throw ConfigError("OU drift matrix must be square and non-empty");
    }
    const int d = static_cast<int>(drift_matrix.rows());
    DiffusionModel m;
    m.kind = "ou";
    m.dim = d;
    m.drift = [drift_matrix](const Vector& z) -> Vector { return drift_matrix * z; };
    m.dispersion = [d](const Vector&) -> Matrix { return Matrix::Identity(d, d); };
    if ((drift_matrix - drift_matrix.transpose()).cwiseAbs().maxCoeff() == 0.0) {
        m.potential = [drift_matrix](const Vector& z) { return 0.5 * z.dot(drift_matrix * z); };
    }
    m.linear_drift = drift_matrix;
    m.constant_dispersion = true;
    return m;
}

inline DiffusionModel make_brownian(int dim) {
    DiffusionModel m = make_ou(Matrix::Zero(dim, dim));
    m.kind = "brownian";
    return m;
}

/// One-dimensional model with σ, and optionally b and U, given as expressions in z.
inline DiffusionModel make_scalar_sigma(const Expression& sigma, const Expression& drift = {},
                                        const Expression& potential = {}) {
    if (sigma.empty()) throw ConfigError("scalar-sigma model requires a sigma expression");
    DiffusionModel m;
    m.kind = "scalar-sigma";
    m.dim = 1;
    m.dispersion = [sigma](const Vector& z) -> Matrix { return Matrix::Constant(1, 1, sigma(z(0))); };
    if (drift.empty()) {
        m.drift = [](const Vector&) -> Vector { return Vector::Zero(1); };
        m.potential = [](const Vector&) { return 0.0; };
    } else {
        m.drift = [drift](const Vector& z) -> Vector { return Vector::Constant(1, drift(z(0))); };
    }
    if (!potential.empty()) m.potential = [potential](const Vector& z) { return potential(z(0)); };
    return m;
}

/// Same dispersion, b ≡ 0.
inline DiffusionModel with_zero_drift(const DiffusionModel& model) {
    DiffusionModel m = model;
    const int d = model.dim;
    m.drift = [d](const Vector&) -> Vector { return Vector::Zero(d); };
    m.potential = [](const Vector&) { return 0.0; };
    if (m.linear_drift) m.linear_drift = Matrix::Zero(d, d);
    return m;
}

}  // namespace sharp_bridge
