#pragma once

// Small-t expansion t(b + b̂^{y,t})(z, tv) = b̃(z,v) + t·b̃₁(z,v) + o(t) of the
// time-changed bridge drift, by geometry or by OU closed forms.

#include "sharp_bridge/geometry.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ou.hpp"

#include <functional>
#include <string>

namespace sharp_bridge {

using TimeField = std::function<Vector(const Vector&, double)>;

struct DriftExpansion {
    Vector y;
    /// b̃(z, v).
    TimeField limit;
    /// b̃₁(z, v).
    TimeField first_order;
    bool gradient_case = false;
    /// "geometry", "ou-closed-form" or "brownian".
    std::string provenance;

    Vector b_tilde(const Vector& z, double v) const { return limit(z, v); }
    Vector b_tilde_1(const Vector& z, double v) const { return first_order(z, v); }
};

struct ExpansionOptions {
    GeodesicOptions geodesic;
    VanVleckOptions van_vleck;
    /// Relative step for the Richardson gradients of log H and A.
    double fd_base = 1e-4;
    /// Skip the gradient shortcut and assemble b + a(∇log H + ∇A) even in gradient cases.
    bool force_general = false;
    double gradient_tolerance = 1e-6;
};

struct GradientCheck {
    bool certified = false;
    double max_asymmetry = 0.0;
};

/// Largest |J − J*| over the probes, J the FD Jacobian of z ↦ a⁻¹(z)b(z).
inline GradientCheck gradient_field_check(const DiffusionModel& model, const std::vector<Vector>& probes,
                                          double tolerance = 1e-6) {
    GradientCheck out;
    const VectorField field = [&model](const Vector& z) -> Vector { return metric(model, z) * model.drift_at(z); };
    for (const auto& z : probes) {
        const Matrix j = central_jacobian(field, z, fd_step(1e-5, z));
        out.max_asymmetry = std::max(out.max_asymmetry, (j - j.transpose()).cwiseAbs().maxCoeff());
    }
    out.certified = out.max_asymmetry <= tolerance;
    return out;
}

/// b̃(z, v) = ξ(z, y)/(1 − v), ξ the initial velocity of the unit-time geodesic z → y.
inline Vector limit_drift(const DiffusionModel& model, const Vector& y, const Vector& z, double v,
                          const GeodesicOptions& opts = {}) {
    if (!(v < 1.0)) throw ConfigError("limit_drift: v must be < 1");
    return geodesic_bvp(model, z, y, opts).initial_velocity / (1.0 - v);
}

namespace detail {

struct LogHAndA {
    double log_h = 0.0;
    double a = 0.0;
};

inline LogHAndA log_h_and_a(const DiffusionModel& model, const Vector& z, const Vector& y,
                            const ExpansionOptions& opts, bool with_a) {
    const auto geo = geodesic_bvp(model, z, y, opts.geodesic);
    LogHAndA out;
    out.log_h = model.constant_dispersion ? 0.0 : std::log(van_vleck_from_geodesic(model, z, geo, opts.van_vleck).value);
    if (with_a) out.a = work_integral_A(model, geo);
    return out;
}

}  // namespace detail

/// b̃₁(z) = b(z) + a(z)(∇log H(z,y) + ∇A(z,y)); a(z)∇log H(z,y) when a⁻¹b is a
/// certified gradient, since b and a∇A then cancel.
inline Vector first_order_drift(const DiffusionModel& model, const Vector& y, const Vector& z,
                                const ExpansionOptions& opts = {}) {
    bool gradient = false;
    if (!opts.force_general) {
        gradient = model.has_potential() ||
                   gradient_field_check(model, default_probes(z, y), opts.gradient_tolerance).certified;
    }
    const int d = model.dim;
    const double h = fd_step(opts.fd_base, z);
    // One geodesic solve per stencil point serves both log H and A.
    auto combined = [&](const Vector& p) {
        const auto r = detail::log_h_and_a(model, p, y, opts, !gradient);
        return r.log_h + r.a;
    };
    Vector grad = Vector::Zero(d);
    if (!(gradient && model.constant_dispersion)) grad = richardson_gradient(combined, z, h);
    const Matrix a = diffusion_matrix(model, z);
    if (gradient) return a * grad;
    return model.drift_at(z) + a * grad;
}

/// Closed-form fields for dX = MX dt + dB.
inline DriftExpansion ou_expansion(const Matrix& m, const Vector& y,
                                   FirstOrderForm form = FirstOrderForm::kOriginCentered) {
    DriftExpansion e;
    e.y = y;
    e.limit = [y](const Vector& z, double v) -> Vector { return (y - z) / (1.0 - v); };
    e.first_order = [m, y, form](const Vector& z, double) -> Vector { return ou_first_order_drift(m, y, z, form); };
    e.gradient_case = (m - m.transpose()).cwiseAbs().maxCoeff() == 0.0;
    e.provenance = m.cwiseAbs().maxCoeff() == 0.0 ? "brownian" : "ou-closed-form";
    return e;
}

/// Fields built from geodesics, the van Vleck factor and the work integral.
inline DriftExpansion geometry_expansion(const DiffusionModel& model, const Vector& y,
                                         const ExpansionOptions& opts = {}) {
    DriftExpansion e;
    e.y = y;
    e.limit = [&model, y, opts](const Vector& z, double v) -> Vector {
        return limit_drift(model, y, z, v, opts.geodesic);
    };
    e.first_order = [&model, y, opts](const Vector& z, double) -> Vector {
        return first_order_drift(model, y, z, opts);
    };
    e.gradient_case = model.has_potential() || gradient_field_check(model, default_probes(y, y)).certified;
    e.provenance = "geometry";
    return e;
}

/// OU closed forms for linear models, geometry otherwise. The geometry
/// fields reference `model`, which must outlive the expansion.
inline DriftExpansion make_expansion(const DiffusionModel& model, const Vector& y,
                                     FirstOrderForm form = FirstOrderForm::kOriginCentered,
                                     const ExpansionOptions& opts = {}) {
    if (model.is_linear()) return ou_expansion(*model.linear_drift, y, form);
    return geometry_expansion(model, y, opts);
}

}  // namespace sharp_bridge
