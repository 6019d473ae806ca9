#pragma once

#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "tna/bundle.hpp"
#include "tna/calibration.hpp"
#include "tna/metrics.hpp"
#include "tna/tilt.hpp"

namespace tna {

enum class SearchMode { Sparse, Complete };

std::string to_string(SearchMode mode);
SearchMode search_mode_from_string(const std::string& name);

/// 0, 5, ..., 90 degrees.
std::vector<double> default_angle_grid();

struct SearchSpec {
    std::vector<double> angle_grid = default_angle_grid();
    std::vector<MapKind> maps{MapKind::Identity};
    SearchMode mode = SearchMode::Sparse;
    TiltPlan plan;  ///< target is overwritten per grid point
    int repeats = 5;
    Objective objective = Objective::ECE;
    int bins = kDefaultBins;
    int workers = 1;

    /// Grid nonempty, ascending, inside [0, 90] and containing 0; maps nonempty.
    void validate() const;
};

struct CurvePoint {
    double theta_deg = 0.0;
    MapKind map = MapKind::Identity;
    double objective = std::numeric_limits<double>::infinity();
    double accuracy = 0.0;
    double ece = 0.0;
    double adaece = 0.0;
    bool saturated = false;  ///< the tilt never exceeded the target
};

struct SearchResult {
    SearchMode mode = SearchMode::Sparse;
    Objective objective = Objective::ECE;
    std::string stage1_objective;  ///< sparse only: map used to pick the angle
    double best_theta_deg = 0.0;
    MapKind best_map_kind = MapKind::Identity;
    CalibrationMap best_map;
    double best_objective = std::numeric_limits<double>::infinity();
    EvalReport calibration_report;
    std::vector<CurvePoint> curve;        ///< every candidate the final choice was made from
    std::vector<CurvePoint> angle_curve;  ///< sparse stage 1, one Identity point per angle
    AveragedWeight weights;
    std::uint64_t seed = 0;
};

/// Stage 1 picks the angle by the objective of the raw (Identity) tilted
/// weights on the calibration split; stage 2 fits each requested map at that
/// angle and keeps the best. Reads only the calibration split.
SearchResult search_sparse(const FeatureBundle& bundle, const SearchSpec& spec);

/// Fits every map at every angle; ties go to the smaller angle, then map order.
SearchResult search_complete(const FeatureBundle& bundle, const SearchSpec& spec);

/// Dispatches on spec.mode.
SearchResult run_search(const FeatureBundle& bundle, const SearchSpec& spec);

/// Same searches on an explicit calibration set.
SearchResult search_on(const LastLayer& layer, const SplitData& calibration, const SearchSpec& spec);

/// Applies the chosen weights and map to a split of the bundle.
EvalReport evaluate_result(const SearchResult& result, const FeatureBundle& bundle,
                           const std::string& split, int bins = kDefaultBins);

struct RepeatSummary {
    std::vector<SearchResult> runs;
    std::vector<EvalReport> test;  ///< one per run
    EvalReport baseline_test;      ///< original weights, no map
};

/// Repeats the search with plan.seed + r for r in [0, repeats) and evaluates
/// each result on the test split after the search finishes.
RepeatSummary search_repeats(const FeatureBundle& bundle, const SearchSpec& spec);

struct EfficiencyPoint {
    std::size_t size = 0;
    std::vector<std::size_t> subsample;  ///< bundle row indices, ascending
    SearchResult result;
    EvalReport test;
};

/// For each size, draws a seeded subsample of the calibration split (the full
/// split when size equals it), runs the sparse search and scores on test.
std::vector<EfficiencyPoint> data_efficiency_sweep(const FeatureBundle& bundle,
                                                   const SearchSpec& spec,
                                                   const std::vector<std::size_t>& sizes);

/// Checks the calibration and test splits exist and are disjoint.
void check_search_splits(const FeatureBundle& bundle);

void to_json(nlohmann::json& j, const SearchResult& result);

/// theta_deg,map,objective,accuracy,ece,adaece
std::string curve_csv(const std::vector<CurvePoint>& curve);

/// mean and sample standard deviation
struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

/// "12.34_{0.56}" in the style of result tables.
std::string format_mean_std(const MeanStd& v, int precision = 2);

}  // namespace tna
