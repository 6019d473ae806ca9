#include "tna/geometry.hpp"

namespace tna {

void validate_factor(const GivensFactor& g, Eigen::Index dim) {
    if (g.k1 < 0 || g.k2 < 0 || g.k1 >= dim || g.k2 >= dim) {
        throw DomainError("givens factor (" + std::to_string(g.k1) + ", " + std::to_string(g.k2) +
                          ") out of range for dimension " + std::to_string(dim));
    }
    if (g.k1 == g.k2) throw DomainError("givens factor indices must differ");
    if (!std::isfinite(g.theta_t)) throw DomainError("givens factor angle must be finite");
}

void right_multiply_givens(Matrix& r, const GivensFactor& g) {
    validate_factor(g, r.cols());
    const double c = std::cos(g.theta_t);
    const double s = std::sin(g.theta_t);
    for (Eigen::Index row = 0; row < r.rows(); ++row) {
        const double a = r(row, g.k1);
        const double b = r(row, g.k2);
        r(row, g.k1) = c * a + s * b;
        r(row, g.k2) = -s * a + c * b;
    }
}

void left_multiply_givens_transpose(Matrix& m, const GivensFactor& g) {
    validate_factor(g, m.rows());
    const double c = std::cos(g.theta_t);
    const double s = std::sin(g.theta_t);
    for (Eigen::Index col = 0; col < m.cols(); ++col) {
        const double a = m(g.k1, col);
        const double b = m(g.k2, col);
        m(g.k1, col) = c * a + s * b;
        m(g.k2, col) = -s * a + c * b;
    }
}

TiltedTransform compose_transform(std::span<const GivensFactor> factors, Eigen::Index n) {
    if (n < 1) throw DomainError("compose_transform: dimension must be positive");
    TiltedTransform t;
    t.matrix = Matrix::Identity(n, n);
    t.factors.assign(factors.begin(), factors.end());
    for (const auto& g : factors) right_multiply_givens(t.matrix, g);
    t.n_r = static_cast<long>(factors.size());
    return t;
}

Matrix givens_matrix(const GivensFactor& g, Eigen::Index n) {
    validate_factor(g, n);
    Matrix m = Matrix::Identity(n, n);
    const double c = std::cos(g.theta_t);
    const double s = std::sin(g.theta_t);
    m(g.k1, g.k1) = c;
    m(g.k1, g.k2) = -s;
    m(g.k2, g.k1) = s;
    m(g.k2, g.k2) = c;
    return m;
}

double max_relative_norm_change(const Matrix& r, const Matrix& x) {
    const Matrix rx = r * x;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        const double before = x.col(i).norm();
        if (before == 0.0) continue;
        worst = std::max(worst, std::abs(rx.col(i).norm() - before) / before);
    }
    return worst;
}

double orthogonality_error(const Matrix& r) {
    const Matrix gram = r.transpose() * r;
    return (gram - Matrix::Identity(r.cols(), r.cols())).cwiseAbs().maxCoeff();
}

}  // namespace tna
