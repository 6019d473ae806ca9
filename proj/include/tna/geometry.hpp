#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tna/errors.hpp"

namespace tna {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kDegPerRad = 180.0 / std::numbers::pi;

template <typename Scalar>
constexpr Scalar to_degrees(Scalar rad) {
    return rad * Scalar(kDegPerRad);
}

template <typename Scalar>
constexpr Scalar to_radians(Scalar deg) {
    return deg / Scalar(kDegPerRad);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
    return x.allFinite();
}

/// Angle between two vectors in degrees, in [0, 180].
/// The cosine is clamped to [-1, 1] before arccos.
template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar angle_between(const Eigen::MatrixBase<DerivedU>& u,
                                        const Eigen::MatrixBase<DerivedV>& v) {
    using Scalar = typename DerivedU::Scalar;
    if (u.size() != v.size()) {
        throw DomainError("angle_between: dimension mismatch (" + std::to_string(u.size()) +
                          " vs " + std::to_string(v.size()) + ")");
    }
    const Scalar nu = u.norm();
    const Scalar nv = v.norm();
    if (!(nu > Scalar(0))) throw DomainError("angle_between: first vector (u) has zero norm");
    if (!(nv > Scalar(0))) throw DomainError("angle_between: second vector (v) has zero norm");
    const Scalar c = std::clamp(u.dot(v) / (nu * nv), Scalar(-1), Scalar(1));
    return to_degrees(std::acos(c));
}

/// Elementary rotation in the (k1, k2) coordinate plane by theta_t radians.
struct GivensFactor {
    int k1 = 0;
    int k2 = 1;
    double theta_t = 0.0;
};

void validate_factor(const GivensFactor& g, Eigen::Index dim);

/// Rotates coordinates (k1, k2) of x in place:
/// x[k1] <- c x[k1] - s x[k2],  x[k2] <- s x[k1] + c x[k2].
template <typename Derived>
void apply_givens_inplace(Eigen::MatrixBase<Derived>& x, const GivensFactor& g) {
    validate_factor(g, x.size());
    const double c = std::cos(g.theta_t);
    const double s = std::sin(g.theta_t);
    const auto a = x(g.k1);
    const auto b = x(g.k2);
    x(g.k1) = c * a - s * b;
    x(g.k2) = s * a + c * b;
}

template <typename Derived>
Vector apply_givens(const Eigen::MatrixBase<Derived>& x, const GivensFactor& g) {
    Vector out = x;
    apply_givens_inplace(out, g);
    return out;
}

/// R <- R * G, touching only columns k1 and k2 of R.
void right_multiply_givens(Matrix& r, const GivensFactor& g);

/// M <- G^T * M, touching only rows k1 and k2 of M.
void left_multiply_givens_transpose(Matrix& m, const GivensFactor& g);

/// One entry of an mRC trace: factors composed so far and the mRC reached.
struct TracePoint {
    long n_r = 0;
    double mrc_deg = 0.0;
};

/// An n x n rotation composed from Givens factors.
///
/// The matrix is authoritative; factors are kept for auditing and are empty
/// for transforms that were not produced by composition.
struct TiltedTransform {
    Matrix matrix;
    double achieved_mrc_deg = 0.0;  ///< Filled by tilting; 0 for bare compositions.
    long n_r = 0;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::vector<GivensFactor> factors;
    std::vector<TracePoint> trace;

    Eigen::Index dim() const { return matrix.rows(); }
};

/// Ordered product R = G_1 G_2 ... G_k. An empty list gives the identity.
TiltedTransform compose_transform(std::span<const GivensFactor> factors, Eigen::Index n);

/// Explicit dense n x n matrix of a single factor.
Matrix givens_matrix(const GivensFactor& g, Eigen::Index n);

/// Angle in radians between nonzero a and b given their norms, as
/// 2 atan2(|a/|a| - b/|b||, |a/|a| + b/|b||). Exact zero for parallel inputs.
template <typename DerivedA, typename DerivedB>
double unit_angle_rad(const Eigen::MatrixBase<DerivedA>& a, double na,
                      const Eigen::MatrixBase<DerivedB>& b, double nb) {
    const Vector x = a / na;
    const Vector y = b / nb;
    return 2.0 * std::atan2((x - y).norm(), (x + y).norm());
}

/// Mean angle (degrees) between each column w_i of W and R w_i.
template <typename DerivedW, typename DerivedR>
double mrc(const Eigen::MatrixBase<DerivedW>& w, const Eigen::MatrixBase<DerivedR>& r) {
    if (w.cols() < 1) throw DomainError("mrc: weight matrix has no class vectors");
    if (r.rows() != w.rows() || r.cols() != w.rows()) {
        throw DomainError("mrc: transform must be " + std::to_string(w.rows()) + "x" +
                          std::to_string(w.rows()));
    }
    const Matrix rotated = r * w;
    double total = 0.0;
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
        const double nw = w.col(i).norm();
        const double nr = rotated.col(i).norm();
        if (!(nw > 0.0)) throw DomainError("mrc: class vector " + std::to_string(i) + " is zero");
        if (!(nr > 0.0)) {
            throw DomainError("mrc: rotated class vector " + std::to_string(i) + " is zero");
        }
        total += unit_angle_rad(w.col(i), nw, rotated.col(i), nr);
    }
    return to_degrees(total / static_cast<double>(w.cols()));
}

template <typename DerivedW>
double mrc(const Eigen::MatrixBase<DerivedW>& w, const TiltedTransform& t) {
    return mrc(w, t.matrix);
}

/// Max over columns of | ||R x_i|| - ||x_i|| | / ||x_i||.
double max_relative_norm_change(const Matrix& r, const Matrix& x);

/// Max |(R^T R - I)_ij|.
double orthogonality_error(const Matrix& r);

}  // namespace tna
