#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <numeric>

#include "tna/bundle.hpp"
#include "tna/tilt.hpp"
#include "tna/verify.hpp"

using namespace tna;

namespace {

LastLayer gaussian_layer(int n, int c, std::uint64_t seed) {
    SeededRng rng(seed, 77);
    LastLayer l;
    l.weights.resize(n, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < n; ++i) l.weights(i, j) = rng.normal();
    l.bias = Vector::Zero(c);
    return l;
}

}  // namespace

TEST_CASE("sampled factors respect the declared ranges") {
    TiltPlan plan;
    SeededRng rng(1);
    for (int k = 0; k < 5000; ++k) {
        const auto g = sample_factor(7, plan, rng);
        REQUIRE(g.k1 != g.k2);
        REQUIRE(g.k1 >= 0);
        REQUIRE(g.k2 < 7);
        REQUIRE(g.theta_t >= 0.0);
        REQUIRE(g.theta_t <= plan.theta_s);
    }
    CHECK_THROWS_AS(sample_factor(1, plan, rng), DomainError);
}

TEST_CASE("plan defaults are the published settings") {
    TiltPlan p;
    CHECK(p.theta_s == 0.9);
    CHECK(p.alpha == 5.0);
    CHECK(p.beta == 1.0);
    CHECK(p.n_t == 50);
    CHECK(p.n_e == 10);
    CHECK(p.factor_cap() == 10000);
}

TEST_CASE("plan validation") {
    TiltPlan p;
    p.target_mrc_deg = 91;
    CHECK_THROWS_AS(p.validate(), DomainError);
    p = {};
    p.n_e = 0;
    CHECK_THROWS_AS(p.validate(), DomainError);
    p = {};
    p.theta_s = 0;
    CHECK_THROWS_AS(p.validate(), DomainError);
}

TEST_CASE("layer validation") {
    LastLayer l = gaussian_layer(4, 3, 1);
    l.weights.col(1).setZero();
    CHECK_THROWS_WITH_AS(l.validate(), doctest::Contains("1"), DomainError);
    l = gaussian_layer(4, 1, 1);
    CHECK_THROWS_AS(l.validate(), DomainError);
    l = gaussian_layer(4, 3, 1);
    l.bias = Vector::Zero(2);
    CHECK_THROWS_AS(l.validate(), DomainError);
}

TEST_CASE("zero target is the identity") {
    const auto layer = gaussian_layer(16, 4, 2);
    TiltPlan plan;
    SeededRng rng(0, 1);
    const auto t = tilt_to_target(layer, plan, rng);
    CHECK(t.matrix == Matrix::Identity(16, 16));
    CHECK(t.achieved_mrc_deg == 0.0);
    CHECK(t.n_r == 0);
}

TEST_CASE("tilting to 30 degrees stops on the first batch past the target") {
    const auto layer = gaussian_layer(640, 100, 3);
    TiltPlan plan;
    plan.target_mrc_deg = 30.0;
    SeededRng rng(17, 1);
    const auto t = tilt_to_target(layer, plan, rng);
    REQUIRE(t.trace.size() >= 2);
    const double before = t.trace[t.trace.size() - 2].mrc_deg;
    const double last = t.trace.back().mrc_deg;
    CHECK(before <= 30.0);
    CHECK(t.achieved_mrc_deg > 30.0);
    CHECK(t.achieved_mrc_deg == doctest::Approx(last).epsilon(1e-9));
    CHECK(t.achieved_mrc_deg - 30.0 <= last - before + 1e-9);
    CHECK(t.n_r % plan.n_t == 0);
    CHECK(t.n_r == t.trace.back().n_r);
    CHECK(static_cast<long>(t.factors.size()) == t.n_r);
    CHECK(std::abs(mrc(layer.weights, compose_transform(t.factors, 640)) - t.achieved_mrc_deg) < 1e-9);

    SeededRng again(17, 1);
    const auto t2 = tilt_to_target(layer, plan, again);
    CHECK(t2.matrix == t.matrix);
    CHECK(t2.achieved_mrc_deg == t.achieved_mrc_deg);
}

TEST_CASE("saturation below the target raises with the plateau") {
    const auto layer = gaussian_layer(64, 10, 4);
    TiltPlan plan;
    plan.target_mrc_deg = 89.9;
    plan.max_factors = 10000;
    SeededRng probe(5, 1);
    const auto trace = mrc_trace(layer, plan, probe, 10000);
    bool crossed = false;
    for (const auto& p : trace.trace) crossed |= p.mrc_deg > 89.9;

    SeededRng rng(5, 1);
    if (crossed) {
        CHECK(tilt_to_target(layer, plan, rng).achieved_mrc_deg > 89.9);
    } else {
        CHECK_THROWS_AS(tilt_to_target(layer, plan, rng), SaturationError);
    }

    plan.max_factors = 100;
    SeededRng small(5, 1);
    try {
        tilt_to_target(layer, plan, small);
        FAIL("expected saturation");
    } catch (const SaturationError& e) {
        CHECK(e.factors() == 100);
        CHECK(e.plateau_mrc_deg() > 0.0);
        CHECK(e.plateau_mrc_deg() <= 89.9);
    }
}

TEST_CASE("ensemble saturation names the member") {
    const auto layer = gaussian_layer(64, 10, 4);
    TiltPlan plan;
    plan.target_mrc_deg = 89.9;
    plan.max_factors = 50;
    plan.n_e = 3;
    CHECK_THROWS_WITH_AS(tilt_and_average(layer, plan), doctest::Contains("ensemble member 0"), SaturationError);
}

TEST_CASE("tilt_and_average with zero target returns the layer") {
    const auto layer = gaussian_layer(32, 5, 6);
    TiltPlan plan;
    const auto w = tilt_and_average(layer, plan);
    CHECK(w.weights == layer.weights);
    CHECK(w.bias == layer.bias);
    CHECK(w.members.size() == 10);
}

TEST_CASE("a single member is a pure rotation") {
    const auto layer = gaussian_layer(64, 8, 7);
    TiltPlan plan;
    plan.target_mrc_deg = 40;
    plan.n_e = 1;
    const auto w = tilt_and_average(layer, plan);
    for (int i = 0; i < 8; ++i) {
        CHECK(std::abs(w.weights.col(i).norm() - layer.weights.col(i).norm()) /
                  layer.weights.col(i).norm() <= 1e-6);
    }
}

TEST_CASE("averaging matrices equals averaging tilted weights") {
    const auto layer = gaussian_layer(48, 6, 8);
    TiltPlan plan;
    plan.target_mrc_deg = 30;
    plan.seed = 12;
    const auto w = tilt_and_average(layer, plan);
    const auto members = tilt_members(layer, plan);
    Matrix avg = Matrix::Zero(48, 6);
    for (const auto& m : members) avg += m.matrix * layer.weights;
    avg /= 10.0;
    CHECK((w.weights - avg).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(w.bias == layer.bias);
    REQUIRE(w.members.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) {
        CHECK(w.members[k].stream_id == k + 1);
        CHECK(w.members[k].seed == 12);
        CHECK(w.members[k].achieved_mrc_deg > 30.0);
        SeededRng rng(12, k + 1);
        CHECK(tilt_to_target(layer, plan, rng).matrix == members[k].matrix);
    }
}

TEST_CASE("identical plans give bit-identical weights, regardless of workers") {
    const auto layer = gaussian_layer(40, 5, 9);
    TiltPlan plan;
    plan.target_mrc_deg = 25;
    plan.seed = 3;
    const auto a = tilt_and_average(layer, plan, 1);
    const auto b = tilt_and_average(layer, plan, 4);
    CHECK(a.weights == b.weights);
    CHECK(a.transform == b.transform);
    plan.seed = 4;
    CHECK(tilt_and_average(layer, plan, 1).weights != a.weights);
}

TEST_CASE("logits examples") {
    Vector z(2);
    z << 3, -1;
    const Vector s = logits(Matrix::Identity(2, 2), Vector::Zero(2), z);
    CHECK(s(0) == 3.0);
    CHECK(s(1) == -1.0);

    Vector b(2);
    b << 1, 2;
    Vector z3(3);
    z3 << 4, 5, 6;
    const Vector t = logits(Matrix::Zero(3, 2), b, z3);
    CHECK(t(0) == 1.0);
    CHECK(t(1) == 2.0);

    CHECK_THROWS_AS(logits(Matrix::Zero(3, 2), b, z), DomainError);
    CHECK_THROWS_AS(logits(Matrix::Zero(2, 2), Vector::Zero(3), z), DomainError);
}

TEST_CASE("logits equal the norm-angle form") {
    const auto layer = gaussian_layer(8, 3, 10);
    SeededRng rng(10, 1);
    Vector b(3);
    b << 0.5, -1.0, 2.0;
    Vector z(8);
    for (int i = 0; i < 8; ++i) z(i) = rng.normal();
    const Vector s = logits(layer.weights, b, z);
    for (int i = 0; i < 3; ++i) {
        const double angle = angle_between(layer.weights.col(i), z) * std::numbers::pi / 180.0;
        CHECK(std::abs(s(i) - (layer.weights.col(i).norm() * z.norm() * std::cos(angle) + b(i))) <= 1e-9);
    }
    Matrix feats(2, 8);
    feats.row(0) = z.transpose();
    feats.row(1) = -z.transpose();
    const Matrix batch = logits_batch(layer.weights, b, feats);
    CHECK((batch.row(0).transpose() - s).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("confidence examples") {
    Vector a(2);
    a << 0, 0;
    CHECK(confidence(a).pred == 0);
    CHECK(confidence(a).p_hat == 0.5);

    Vector b(2);
    b << 1000, 0;
    CHECK(confidence(b).pred == 0);
    CHECK(std::abs(confidence(b).p_hat - 1.0) <= 1e-12);

    Vector c(3);
    c << 2, 1, 0;
    const double e = std::exp(1.0);
    CHECK(confidence(c).p_hat == doctest::Approx(e * e / (e * e + e + 1)).epsilon(1e-14));
    CHECK(confidence(c).p_hat == doctest::Approx(0.66524).epsilon(1e-5));

    Vector d(3);
    d << 1, 4, 4;
    CHECK(confidence(d).pred == 1);
}

TEST_CASE("softmax is stable and normalised") {
    Vector s(3);
    s << 1000, 999, -1000;
    const Vector p = softmax(s);
    CHECK(p.allFinite());
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

// Class vectors sit at angle psi_i from z and are each rotated by exactly
// theta towards a private axis orthogonal to both z and every other vector.
TEST_CASE("confidence relaxation on the idealised construction") {
    SeededRng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int c = 2 + static_cast<int>(rng.uniform_index(5));
        const int n = 2 * c + 2;
        const double z_norm = 0.5 + 5.0 * rng.uniform();
        Vector z = Vector::Zero(n);
        z(0) = z_norm;
        std::vector<double> psis, norms;
        Matrix w(n, c), wt(n, c);
        const double theta = 1.0 + 88.0 * rng.uniform();
        for (int i = 0; i < c; ++i) {
            const double psi = 89.0 * rng.uniform();
            const double norm = 0.5 + 2.0 * rng.uniform();
            psis.push_back(psi);
            norms.push_back(norm);
            const double pr = psi * std::numbers::pi / 180.0;
            Vector v = Vector::Zero(n);
            v(0) = std::cos(pr);
            v(1 + i) = std::sin(pr);
            w.col(i) = norm * v;
            const double tr = theta * std::numbers::pi / 180.0;
            Vector axis = Vector::Zero(n);
            axis(1 + c + i) = 1.0;
            wt.col(i) = std::cos(tr) * w.col(i) + std::sin(tr) * norm * axis;
            REQUIRE(angle_between(w.col(i), wt.col(i)) == doctest::Approx(theta).epsilon(1e-9));
        }
        const double before = confidence(logits(w, Vector::Zero(c), z)).p_hat;
        const double after = confidence(logits(wt, Vector::Zero(c), z)).p_hat;
        const auto closed = prop1_check(psis, theta, norms, z_norm);
        CHECK(before == doctest::Approx(closed.p_hat).epsilon(1e-12));
        CHECK(after == doctest::Approx(closed.p_hat_prime).epsilon(1e-12));
        CHECK(after < before);
    }
}

TEST_CASE("zero target never changes a prediction") {
    SynthSpec s;
    s.n = 64;
    s.classes = 6;
    s.m = 600;
    const auto b = synth_generate(s);
    TiltPlan plan;
    const auto w = tilt_and_average(b.layer, plan);
    const Matrix before = logits_batch(b.layer.weights, b.layer.bias, b.features);
    const Matrix after = logits_batch(w.weights, w.bias, b.features);
    for (Eigen::Index i = 0; i < before.rows(); ++i) {
        CHECK(confidence(before.row(i).transpose()).pred == confidence(after.row(i).transpose()).pred);
    }
}

TEST_CASE("mean mRC trace rises with the number of factors") {
    const auto layer = gaussian_layer(640, 10, 12);
    TiltPlan plan;
    std::vector<double> mean;
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
        SeededRng rng(100 + s, 0);
        const auto t = mrc_trace(layer, plan, rng, 3000);
        if (mean.empty()) mean.assign(t.trace.size(), 0.0);
        for (std::size_t k = 0; k < t.trace.size(); ++k) mean[k] += t.trace[k].mrc_deg / seeds;
    }
    std::vector<double> n_r(mean.size());
    std::iota(n_r.begin(), n_r.end(), 0.0);
    CHECK(spearman(n_r, mean) >= 0.99);
}

TEST_CASE("tilting pushes predicted-class angles towards 90 degrees") {
    SynthSpec s;
    s.n = 128;
    s.classes = 10;
    s.m = 2000;
    const auto b = synth_generate(s);
    TiltPlan plan;
    const auto mean_angle = [&](const Matrix& w) {
        const Matrix sc = logits_batch(w, b.layer.bias, b.features);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < sc.rows(); ++i) {
            Eigen::Index pred = 0;
            sc.row(i).maxCoeff(&pred);
            sum += angle_between(w.col(pred), b.features.row(i).transpose());
        }
        return sum / static_cast<double>(sc.rows());
    };
    plan.target_mrc_deg = 30;
    const double a30 = mean_angle(tilt_and_average(b.layer, plan).weights);
    plan.target_mrc_deg = 45;
    const double a45 = mean_angle(tilt_and_average(b.layer, plan).weights);
    const double a0 = mean_angle(b.layer.weights);
    CHECK(a0 < a30);
    CHECK(a30 < a45);
}
