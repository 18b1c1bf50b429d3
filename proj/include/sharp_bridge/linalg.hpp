#pragma once

#include "sharp_bridge/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>

namespace sharp_bridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ScalarField = std::function<double(const Vector&)>;
using VectorField = std::function<Vector(const Vector&)>;
using MatrixField = std::function<Matrix(const Vector&)>;

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Relative finite-difference step `base * (1 + |z|)`.
inline double fd_step(double base, const Vector& z) { return base * (1.0 + z.norm()); }

inline Vector unit(int dim, int i) {
    Vector e = Vector::Zero(dim);
    e(i) = 1.0;
    return e;
}

/// Central-difference gradient of a scalar field.
inline Vector central_gradient(const ScalarField& f, const Vector& z, double h) {
    const auto n = z.size();
    Vector g(n);
    Vector zp = z;
    for (Eigen::Index i = 0; i < n; ++i) {
        zp(i) = z(i) + h;
        const double fp = f(zp);
        zp(i) = z(i) - h;
        const double fm = f(zp);
        zp(i) = z(i);
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Central-difference Jacobian; column j holds the derivative along e_j.
inline Matrix central_jacobian(const VectorField& f, const Vector& z, double h) {
    const auto n = z.size();
    Matrix jac;
    Vector zp = z;
    for (Eigen::Index j = 0; j < n; ++j) {
        zp(j) = z(j) + h;
        Vector fp = f(zp);
        zp(j) = z(j) - h;
        Vector fm = f(zp);
        zp(j) = z(j);
        if (j == 0) jac.resize(fp.size(), n);
        jac.col(j) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

/// Richardson-extrapolated central gradient: (4 D(h) - D(2h)) / 3.
inline Vector richardson_gradient(const ScalarField& f, const Vector& z, double h) {
    return (4.0 * central_gradient(f, z, h) - central_gradient(f, z, 2.0 * h)) / 3.0;
}

/// Central-difference Hessian (symmetrized).
inline Matrix central_hessian(const ScalarField& f, const Vector& z, double h) {
    const auto n = z.size();
    Matrix hess(n, n);
    const double f0 = f(z);
    Vector zp = z;
    for (Eigen::Index i = 0; i < n; ++i) {
        zp(i) = z(i) + h;
        const double fp = f(zp);
        zp(i) = z(i) - h;
        const double fm = f(zp);
        zp(i) = z(i);
        hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
        for (Eigen::Index j = 0; j < i; ++j) {
            zp(i) = z(i) + h; zp(j) = z(j) + h;
            const double fpp = f(zp);
            zp(j) = z(j) - h;
            const double fpm = f(zp);
            zp(i) = z(i) - h;
            const double fmm = f(zp);
            zp(j) = z(j) + h;
            const double fmp = f(zp);
            zp(i) = z(i); zp(j) = z(j);
            hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        }
    }
    return hess;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Inverse of a symmetric positive definite matrix; throws NumericError
/// naming `what` when the Cholesky factorization fails.
inline Matrix spd_inverse(const Matrix& a, const char* what = "matrix") {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericError(std::string(what) + " is not positive definite");
    }
    return symmetrized(llt.solve(Matrix::Identity(a.rows(), a.cols())));
}

/// Symmetric square root factor L with L L* = c, clamping tiny negative
/// eigenvalues produced by cancellation to zero.
inline Matrix psd_factor(const Matrix& c) {
    Eigen::LLT<Matrix> llt(c);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(c));
    Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant (Higham 2005), accurate to roughly unit roundoff.
inline Matrix matrix_exponential(const Matrix& a) {
    static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                   1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                   670442572800.0,      33522128640.0,       1323241920.0,
                                   40840800.0,          960960.0,            16380.0,
                                   182.0,               1.0};
    constexpr double theta13 = 5.371920351148152;
    const auto n = a.rows();
    if (!a.allFinite()) throw NumericError("matrix_exponential: non-finite input");
    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm1 > theta13) squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    const Matrix as = a / std::ldexp(1.0, squarings);
    const Matrix id = Matrix::Identity(n, n);
    const Matrix a2 = as * as;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    const Matrix u = as * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                           b[3] * a2 + b[1] * id);
    const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 +
                     b[2] * a2 + b[0] * id;
    Matrix r = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i) r = r * r;
    return r;
}

}  // namespace sharp_bridge
