#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tna/bundle.hpp"
#include "tna/geometry.hpp"
#include "tna/rng.hpp"
#include "tna/search.hpp"
#include "tna/tilt.hpp"

namespace tna {

struct ConeSample {
    Vector u;
    double angle_deg = 0.0;
    Vector v;
};

/// u cos(a) + r sin(a), r uniform on the unit sphere orthogonal to u.
ConeSample sample_on_cone(const Vector& u, double angle_deg, SeededRng& rng);

/// Mode of the class-wise angle shift: arccos(cos psi cos theta) - psi, degrees.
double closed_form_mode(double psi_deg, double theta_deg);

struct MonteCarloModeReport {
    int n = 0;
    double psi_deg = 0.0;
    double theta_deg = 0.0;
    long samples = 0;
    double bin_width_deg = 0.25;
    std::map<long, long> histogram;  ///< bin index k covers k w +- w / 2
    double empirical_mode_deg = 0.0;
    double closed_form_mode_deg = 0.0;
    double gap_deg = 0.0;
    double mean_delta_deg = 0.0;  ///< reported, not asserted
};

struct ModeCheckOptions {
    std::uint64_t seed = 0;
    int workers = 1;
    long batch = 2000;
};

/// Draws tilted class vectors uniformly on the theta-cone around u and
/// histograms delta = angle(tilted, v) - psi, where angle(u, v) = psi.
/// Requires 0 < theta < psi < 90.
MonteCarloModeReport thm1_mode_check(int n, double psi_deg, double theta_deg, long samples,
                                     double bin_width_deg, const ModeCheckOptions& options = {});

struct RelaxationCase {
    double p_hat = 0.0;        ///< max softmax(|w_i| |z| cos psi_i)
    double p_hat_prime = 0.0;  ///< max softmax(|w_i| |z| cos psi_i cos theta)
    bool relaxed = false;      ///< p_hat_prime < p_hat
};

/// Evaluates both confidences with zero biases. Requires every psi < 90 and
/// theta in [0, 90).
RelaxationCase prop1_check(const std::vector<double>& psis_deg, double theta_deg,
                           const std::vector<double>& class_norms, double feature_norm);

struct AngleSummary {
    double mean_deg = 0.0;
    double stddev_deg = 0.0;
};

/// Angle between pairs of independent uniform unit vectors in R^n.
AngleSummary orthogonality_concentration(int n, long samples, std::uint64_t seed = 0);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---- figure data ---------------------------------------------------------

struct Fig2Row {
    double theta_s = 0.0;
    std::uint64_t seed = 0;
    long n_r = 0;
    double mrc_deg = 0.0;
};

/// mRC after every batch of plan.n_t factors up to total_factors, for each
/// theta_s and seed (stream 0 of each seed).
std::vector<Fig2Row> fig2_traces(const LastLayer& layer, const TiltPlan& plan,
                                 const std::vector<double>& theta_s, int seeds,
                                 long total_factors, int workers = 1);

struct Fig3Row {
    double mrc_deg = 0.0;  ///< negative marks the original-weight row
    int n_e = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

/// Test accuracy of TNA weights per (mRC, n_e, seed); first row is the original.
std::vector<Fig3Row> fig3_accuracy(const FeatureBundle& bundle, const TiltPlan& plan,
                                   const std::vector<double>& mrcs, const std::vector<int>& n_es,
                                   int seeds, int workers = 1);

struct Fig4Row {
    std::string method;  ///< "<map>" or "<map>+tna"
    std::size_t size = 0;
    double test_ece = 0.0;
    double test_accuracy = 0.0;
};

std::vector<Fig4Row> fig4_efficiency(const FeatureBundle& bundle, const SearchSpec& spec,
                                     const std::vector<std::size_t>& sizes);

struct AngleRow {
    std::string variant;  ///< original, tilt30, tilt45, false-class
    double bin_center_deg = 0.0;
    long count = 0;
};

struct AngleStudy {
    std::vector<AngleRow> histogram;
    std::map<std::string, double> mean_deg;
};

/// Angle between the predicted class vector and z on the test split for the
/// original weights and TNA weights at 30 and 45 degrees, plus the angle to
/// a random wrong class of the original weights.
AngleStudy angle_study(const FeatureBundle& bundle, const TiltPlan& plan, double bin_width_deg = 1.0,
                       int workers = 1);

enum class FigureKind { Fig2, Fig3, Fig4, Angles };

FigureKind figure_from_string(const std::string& name);

struct FigureOptions {
    int seeds = 10;
    long total_factors = 10000;
    std::vector<double> theta_s{0.5, 1.0, 1.5};
    std::vector<double> mrcs{10.0, 20.0, 30.0};
    std::vector<int> n_es{1, 2, 5, 10, 20};
    std::vector<std::size_t> sizes{100, 1000};  ///< the full calibration size is appended
    SearchSpec spec;
    double bin_width_deg = 1.0;
    int workers = 1;
};

/// Writes the headered CSV for one figure.
void emit_figure_curves(const FeatureBundle& bundle, const TiltPlan& plan, FigureKind which,
                        const std::filesystem::path& out_path, const FigureOptions& options = {});

void to_json(nlohmann::json& j, const MonteCarloModeReport& r);

}  // namespace tna
