#pragma once

#include <cstdint>
#include <vector>

#include "tna/geometry.hpp"
#include "tna/rng.hpp"

namespace tna {

/// Classifier head h(z) = W^T z + b. Columns of `weights` (n x C) are the class vectors.
struct LastLayer {
    Matrix weights;
    Vector bias;

    Eigen::Index dim() const { return weights.rows(); }
    Eigen::Index classes() const { return weights.cols(); }

    /// Throws DomainError unless C >= 2, bias has length C, every class
    /// vector is nonzero and all entries are finite.
    void validate() const;
};

/// Hyperparameters of Tilt and Average. Defaults are the published settings.
struct TiltPlan {
    double target_mrc_deg = 0.0;  ///< theta*, in [0, 90]
    double theta_s = 0.9;         ///< maximum elementary angle, radians
    double alpha = 5.0;
    double beta = 1.0;
    int n_t = 50;   ///< factors composed between mRC checks
    int n_e = 10;   ///< ensemble size
    std::uint64_t seed = 0;
    long max_factors = 0;  ///< 0 selects 200 * n_t

    long factor_cap() const { return max_factors > 0 ? max_factors : 200L * n_t; }
    void validate() const;
};

/// Draws one elementary rotation: tau ~ Beta(alpha, beta), theta_t = tau * theta_s,
/// then an ordered pair k1 != k2 uniform over [0, n).
GivensFactor sample_factor(Eigen::Index n, const TiltPlan& plan, SeededRng& rng);

/// Composes factors in batches of n_t until mRC(W, R) exceeds the target.
/// A zero target returns the identity without drawing anything.
/// Throws SaturationError when the factor cap is reached first.
TiltedTransform tilt_to_target(const LastLayer& layer, const TiltPlan& plan, SeededRng& rng);

/// Composes exactly `total_factors` factors (rounded up to whole batches),
/// recording mRC after every batch. Used for the mRC-vs-n_r curves.
TiltedTransform mrc_trace(const LastLayer& layer, const TiltPlan& plan, SeededRng& rng,
                          long total_factors);

struct MemberProvenance {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    double achieved_mrc_deg = 0.0;
    long n_r = 0;
};

/// Averaged tilted weights W' = mean(R_k) W; the bias is carried over unchanged.
struct AveragedWeight {
    Matrix weights;
    Vector bias;
    Matrix transform;  ///< mean of the member rotations
    double target_mrc_deg = 0.0;
    std::vector<MemberProvenance> members;

    LastLayer layer() const { return {weights, bias}; }
};

/// Member k uses stream (plan.seed, k + 1).
std::vector<TiltedTransform> tilt_members(const LastLayer& layer, const TiltPlan& plan,
                                          int workers = 1);

AveragedWeight tilt_and_average(const LastLayer& layer, const TiltPlan& plan, int workers = 1);

/// s_i = <w_i, z> + b_i.
Vector logits(const Matrix& weights, const Vector& bias, const Vector& z);

/// Row-wise logits for a feature matrix (m x n) -> (m x C).
Matrix logits_batch(const Matrix& weights, const Vector& bias, const Matrix& features);

/// Numerically stable softmax (max subtracted).
template <typename Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& s) {
    const double top = s.maxCoeff();
    Vector e = (s.array() - top).exp().matrix();
    return e / e.sum();
}

struct Confidence {
    int pred = 0;
    double p_hat = 0.0;
};

/// Argmax (lowest index on ties) and maximum softmax probability.
Confidence confidence(const Vector& s);

}  // namespace tna
