#include "tna/tilt.hpp"

#include <string>

#include "tna/parallel.hpp"

namespace tna {

void LastLayer::validate() const {
    if (weights.cols() < 2) throw DomainError("last layer needs at least 2 classes");
    if (weights.rows() < 1) throw DomainError("last layer has zero feature dimension");
    if (bias.size() != weights.cols()) {
        throw DomainError("bias length " + std::to_string(bias.size()) + " does not match " +
                          std::to_string(weights.cols()) + " classes");
    }
    if (!weights.allFinite() || !bias.allFinite()) {
        throw DomainError("last layer contains non-finite values");
    }
    for (Eigen::Index i = 0; i < weights.cols(); ++i) {
        if (weights.col(i).squaredNorm() == 0.0) {
            throw DomainError("class vector " + std::to_string(i) + " is zero");
        }
    }
}

void TiltPlan::validate() const {
    if (!(target_mrc_deg >= 0.0 && target_mrc_deg <= 90.0)) {
        throw DomainError("target mRC must lie in [0, 90] degrees");
    }
    if (!(theta_s > 0.0)) throw DomainError("theta_s must be positive");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("beta shape parameters must be positive");
    if (n_t < 1) throw DomainError("n_t must be >= 1");
    if (n_e < 1) throw DomainError("n_e must be >= 1");
    if (max_factors < 0) throw DomainError("max_factors must be >= 0");
}

GivensFactor sample_factor(Eigen::Index n, const TiltPlan& plan, SeededRng& rng) {
    if (n < 2) throw DomainError("rotations need dimension >= 2");
    GivensFactor g;
    g.theta_t = sample_beta(plan.alpha, plan.beta, rng) * plan.theta_s;
    const auto un = static_cast<std::uint64_t>(n);
    g.k1 = static_cast<int>(rng.uniform_index(un));
    auto k2 = rng.uniform_index(un - 1);
    if (k2 >= static_cast<std::uint64_t>(g.k1)) ++k2;
    g.k2 = static_cast<int>(k2);
    return g;
}

namespace {

// Tracks V = R^T W alongside R so mRC costs O(nC) per check instead of O(n^2 C).
class TiltState {
public:
    TiltState(const LastLayer& layer, std::uint64_t seed, std::uint64_t stream)
        : w_(layer.weights), v_(layer.weights), norms_(layer.weights.colwise().norm()) {
        t_.matrix = Matrix::Identity(w_.rows(), w_.rows());
        t_.seed = seed;
        t_.stream_id = stream;
    }

    void add(const GivensFactor& g) {
        right_multiply_givens(t_.matrix, g);
        left_multiply_givens_transpose(v_, g);
        t_.factors.push_back(g);
        ++t_.n_r;
    }

    // angle(w_i, R w_i) = angle(R^T w_i, w_i) for orthogonal R.
    double current_mrc() const {
        double total = 0.0;
        for (Eigen::Index i = 0; i < w_.cols(); ++i) {
            total += unit_angle_rad(w_.col(i), norms_(i), v_.col(i), v_.col(i).norm());
        }
        return to_degrees(total / static_cast<double>(w_.cols()));
    }

    void record(double value) { t_.trace.push_back({t_.n_r, value}); }

    TiltedTransform finish() {
        t_.achieved_mrc_deg = t_.n_r == 0 ? 0.0 : mrc(w_, t_.matrix);
        return std::move(t_);
    }

    long n_r() const { return t_.n_r; }

private:
    const Matrix& w_;
    Matrix v_;
    Eigen::RowVectorXd norms_;
    TiltedTransform t_;
};

}  // namespace

TiltedTransform tilt_to_target(const LastLayer& layer, const TiltPlan& plan, SeededRng& rng) {
    layer.validate();
    plan.validate();
    TiltState state(layer, rng.seed(), rng.stream_id());
    if (plan.target_mrc_deg == 0.0) return state.finish();

    const long cap = plan.factor_cap();
    double current = 0.0;
    state.record(current);
    while (current <= plan.target_mrc_deg) {
        if (state.n_r() + plan.n_t > cap) {
            throw SaturationError("mRC target " + std::to_string(plan.target_mrc_deg) +
                                      " deg not exceeded within " + std::to_string(cap) +
                                      " factors; plateau at " + std::to_string(current) + " deg",
                                  current, state.n_r());
        }
        for (int k = 0; k < plan.n_t; ++k) state.add(sample_factor(layer.dim(), plan, rng));
        current = state.current_mrc();
        state.record(current);
    }
    return state.finish();
}

TiltedTransform mrc_trace(const LastLayer& layer, const TiltPlan& plan, SeededRng& rng,
                          long total_factors) {
    layer.validate();
    plan.validate();
    TiltState state(layer, rng.seed(), rng.stream_id());
    state.record(0.0);
    while (state.n_r() < total_factors) {
        for (int k = 0; k < plan.n_t; ++k) state.add(sample_factor(layer.dim(), plan, rng));
        state.record(state.current_mrc());
    }
    return state.finish();
}

std::vector<TiltedTransform> tilt_members(const LastLayer& layer, const TiltPlan& plan,
                                          int workers) {
    plan.validate();
    std::vector<TiltedTransform> members(static_cast<std::size_t>(plan.n_e));
    parallel_for(members.size(), workers, [&](std::size_t k) {
        SeededRng rng(plan.seed, k + 1);
        try {
            members[k] = tilt_to_target(layer, plan, rng);
        } catch (const SaturationError& e) {
            throw SaturationError("ensemble member " + std::to_string(k) + ": " + e.what(),
                                  e.plateau_mrc_deg(), e.factors());
        }
    });
    return members;
}

AveragedWeight tilt_and_average(const LastLayer& layer, const TiltPlan& plan, int workers) {
    layer.validate();
    plan.validate();
    AveragedWeight out;
    out.bias = layer.bias;
    out.target_mrc_deg = plan.target_mrc_deg;

    if (plan.target_mrc_deg == 0.0) {
        out.weights = layer.weights;
        out.transform = Matrix::Identity(layer.dim(), layer.dim());
        for (int k = 0; k < plan.n_e; ++k) {
            out.members.push_back({plan.seed, static_cast<std::uint64_t>(k + 1), 0.0, 0});
        }
        return out;
    }

    const auto members = tilt_members(layer, plan, workers);
    out.transform = Matrix::Zero(layer.dim(), layer.dim());
    for (const auto& m : members) {
        out.transform += m.matrix;
        out.members.push_back({m.seed, m.stream_id, m.achieved_mrc_deg, m.n_r});
    }
    out.transform /= static_cast<double>(plan.n_e);
    out.weights = out.transform * layer.weights;
    return out;
}

Vector logits(const Matrix& weights, const Vector& bias, const Vector& z) {
    if (z.size() != weights.rows()) {
        throw DomainError("logits: feature length " + std::to_string(z.size()) +
                          " does not match weight rows " + std::to_string(weights.rows()));
    }
    if (bias.size() != weights.cols()) throw DomainError("logits: bias length mismatch");
    return weights.transpose() * z + bias;
}

Matrix logits_batch(const Matrix& weights, const Vector& bias, const Matrix& features) {
    if (features.cols() != weights.rows()) {
        throw DomainError("logits: feature width " + std::to_string(features.cols()) +
                          " does not match weight rows " + std::to_string(weights.rows()));
    }
    if (bias.size() != weights.cols()) throw DomainError("logits: bias length mismatch");
    Matrix s = features * weights;
    s.rowwise() += bias.transpose();
    return s;
}

Confidence confidence(const Vector& s) {
    if (s.size() < 1) throw DomainError("confidence: empty logit vector");
    Eigen::Index pred = 0;
    const double top = s.maxCoeff(&pred);  // first maximum
    const double denom = (s.array() - top).exp().sum();
    return {static_cast<int>(pred), 1.0 / denom};
}

}  // namespace tna
