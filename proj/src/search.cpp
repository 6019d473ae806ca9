#include "tna/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "tna/parallel.hpp"
#include "tna/rng.hpp"

namespace tna {

std::string to_string(SearchMode mode) { return mode == SearchMode::Sparse ? "sparse" : "complete"; }

SearchMode search_mode_from_string(const std::string& name) {
    if (name == "sparse") return SearchMode::Sparse;
    if (name == "complete" || name == "comp") return SearchMode::Complete;
    throw DomainError("unknown search mode '" + name + "' (sparse | complete)");
}

std::vector<double> default_angle_grid() {
    std::vector<double> grid;
    for (int d = 0; d <= 90; d += 5) grid.push_back(d);
    return grid;
}

void SearchSpec::validate() const {
    if (angle_grid.empty()) throw DomainError("search: angle grid is empty");
    if (!std::is_sorted(angle_grid.begin(), angle_grid.end()) ||
        std::adjacent_find(angle_grid.begin(), angle_grid.end()) != angle_grid.end()) {
        throw DomainError("search: angle grid must be strictly ascending");
    }
    if (angle_grid.front() != 0.0) throw DomainError("search: angle grid must contain 0");
    if (angle_grid.back() > 90.0) throw DomainError("search: angles must lie in [0, 90]");
    if (maps.empty()) throw DomainError("search: no calibration maps requested");
    if (repeats < 1) throw DomainError("search: repeats must be >= 1");
    if (bins < 1) throw DomainError("search: bins must be >= 1");
    plan.validate();
}

void check_search_splits(const FeatureBundle& bundle) {
    if (!bundle.has_split("calibration")) throw DomainError("bundle has no calibration split");
    if (!bundle.has_split("test")) throw DomainError("bundle has no test split");
    const auto& cal = bundle.splits.at("calibration");
    const auto& test = bundle.splits.at("test");
    std::vector<std::size_t> common;
    std::set_intersection(cal.begin(), cal.end(), test.begin(), test.end(),
                          std::back_inserter(common));
    if (!common.empty()) {
        throw DomainError("calibration and test splits overlap (" + std::to_string(common.size()) +
                          " shared rows)");
    }
}

namespace {

struct GridPoint {
    double theta = 0.0;
    AveragedWeight weights;
    Matrix logits;
    bool saturated = false;
};

std::vector<MapKind> ordered_maps(const std::vector<MapKind>& maps) {
    std::set<MapKind> unique(maps.begin(), maps.end());
    return {unique.begin(), unique.end()};
}

std::vector<GridPoint> tilt_grid(const LastLayer& layer, const SplitData& cal,
                                 const SearchSpec& spec) {
    std::vector<GridPoint> points(spec.angle_grid.size());
    parallel_for(points.size(), spec.workers, [&](std::size_t k) {
        TiltPlan plan = spec.plan;
        plan.target_mrc_deg = spec.angle_grid[k];
        points[k].theta = plan.target_mrc_deg;
        try {
            points[k].weights = tilt_and_average(layer, plan, 1);
            points[k].logits =
                logits_batch(points[k].weights.weights, points[k].weights.bias, cal.features);
        } catch (const SaturationError&) {
            points[k].saturated = true;
        }
    });
    return points;
}

CurvePoint point_from(double theta, MapKind map, const EvalReport& r, Objective objective) {
    return {theta, map, objective_value(r, objective), r.accuracy, r.ece, r.adaece, false};
}

struct Candidate {
    CalibrationMap map;
    EvalReport report;
};

Candidate fit_and_score(MapKind kind, const GridPoint& gp, const SplitData& cal,
                        const SearchSpec& spec) {
    Candidate c;
    c.map = fit_map(kind, gp.logits, cal.labels);
    c.report = evaluate_logits(gp.logits, c.map, cal.labels, spec.bins);
    return c;
}

void choose(SearchResult& out, const GridPoint& gp, MapKind kind, Candidate&& c,
            Objective objective) {
    const double value = objective_value(c.report, objective);
    if (value < out.best_objective) {
        out.best_objective = value;
        out.best_theta_deg = gp.theta;
        out.best_map_kind = kind;
        out.best_map = std::move(c.map);
        out.calibration_report = std::move(c.report);
        out.weights = gp.weights;
    }
}

SearchResult sparse_on(const LastLayer& layer, const SplitData& cal, const SearchSpec& spec) {
    auto points = tilt_grid(layer, cal, spec);
    SearchResult out;
    out.mode = SearchMode::Sparse;
    out.objective = spec.objective;
    out.stage1_objective = to_string(spec.objective) + " of identity map";
    out.seed = spec.plan.seed;

    std::vector<EvalReport> stage1(points.size());
    parallel_for(points.size(), spec.workers, [&](std::size_t k) {
        if (!points[k].saturated) {
            stage1[k] = evaluate_logits(points[k].logits, IdentityMap{}, cal.labels, spec.bins);
        }
    });
    std::size_t best = points.size();
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < points.size(); ++k) {
        if (points[k].saturated) {
            CurvePoint p;
            p.theta_deg = points[k].theta;
            p.saturated = true;
            out.angle_curve.push_back(p);
            continue;
        }
        out.angle_curve.push_back(point_from(points[k].theta, MapKind::Identity, stage1[k], spec.objective));
        const double v = objective_value(stage1[k], spec.objective);
        if (v < best_value) {
            best_value = v;
            best = k;
        }
    }
    if (best == points.size()) throw SaturationError("search: every grid angle saturated", 0.0, 0);

    const GridPoint& gp = points[best];
    for (MapKind kind : ordered_maps(spec.maps)) {
        Candidate c = kind == MapKind::Identity
                          ? Candidate{IdentityMap{}, stage1[best]}
                          : fit_and_score(kind, gp, cal, spec);
        out.curve.push_back(point_from(gp.theta, kind, c.report, spec.objective));
        choose(out, gp, kind, std::move(c), spec.objective);
    }
    return out;
}

SearchResult complete_on(const LastLayer& layer, const SplitData& cal, const SearchSpec& spec) {
    auto points = tilt_grid(layer, cal, spec);
    const auto maps = ordered_maps(spec.maps);
    SearchResult out;
    out.mode = SearchMode::Complete;
    out.objective = spec.objective;
    out.seed = spec.plan.seed;

    std::vector<Candidate> cands(points.size() * maps.size());
    parallel_for(cands.size(), spec.workers, [&](std::size_t idx) {
        const auto& gp = points[idx / maps.size()];
        if (!gp.saturated) cands[idx] = fit_and_score(maps[idx % maps.size()], gp, cal, spec);
    });
    for (std::size_t idx = 0; idx < cands.size(); ++idx) {
        const auto& gp = points[idx / maps.size()];
        const MapKind kind = maps[idx % maps.size()];
        if (gp.saturated) {
            CurvePoint p;
            p.theta_deg = gp.theta;
            p.map = kind;
            p.saturated = true;
            out.curve.push_back(p);
            continue;
        }
        out.curve.push_back(point_from(gp.theta, kind, cands[idx].report, spec.objective));
        choose(out, gp, kind, std::move(cands[idx]), spec.objective);
    }
    if (!out.best_map.fitted()) throw SaturationError("search: every grid angle saturated", 0.0, 0);
    return out;
}

}  // namespace

SearchResult search_on(const LastLayer& layer, const SplitData& cal, const SearchSpec& spec) {
    spec.validate();
    layer.validate();
    if (cal.size() == 0) throw DomainError("search: calibration split is empty");
    return spec.mode == SearchMode::Sparse ? sparse_on(layer, cal, spec)
                                           : complete_on(layer, cal, spec);
}

SearchResult search_sparse(const FeatureBundle& bundle, const SearchSpec& spec) {
    check_search_splits(bundle);
    SearchSpec s = spec;
    s.mode = SearchMode::Sparse;
    return search_on(bundle.layer, bundle.view("calibration"), s);
}

SearchResult search_complete(const FeatureBundle& bundle, const SearchSpec& spec) {
    check_search_splits(bundle);
    SearchSpec s = spec;
    s.mode = SearchMode::Complete;
    return search_on(bundle.layer, bundle.view("calibration"), s);
}

SearchResult run_search(const FeatureBundle& bundle, const SearchSpec& spec) {
    return spec.mode == SearchMode::Sparse ? search_sparse(bundle, spec)
                                           : search_complete(bundle, spec);
}

EvalReport evaluate_result(const SearchResult& result, const FeatureBundle& bundle,
                           const std::string& split, int bins) {
    const SplitData data = bundle.view(split);
    return evaluate(result.weights.weights, result.weights.bias, result.best_map, data.features,
                    data.labels, bins);
}

RepeatSummary search_repeats(const FeatureBundle& bundle, const SearchSpec& spec) {
    spec.validate();
    RepeatSummary out;
    for (int r = 0; r < spec.repeats; ++r) {
        SearchSpec s = spec;
        s.plan.seed = spec.plan.seed + static_cast<std::uint64_t>(r);
        out.runs.push_back(run_search(bundle, s));
    }
    const SplitData test = bundle.view("test");
    for (const auto& run : out.runs) {
        out.test.push_back(evaluate(run.weights.weights, run.weights.bias, run.best_map,
                                    test.features, test.labels, spec.bins));
    }
    out.baseline_test = evaluate(bundle.layer.weights, bundle.layer.bias, IdentityMap{},
                                 test.features, test.labels, spec.bins);
    return out;
}

std::vector<EfficiencyPoint> data_efficiency_sweep(const FeatureBundle& bundle,
                                                   const SearchSpec& spec,
                                                   const std::vector<std::size_t>& sizes) {
    check_search_splits(bundle);
    spec.validate();
    const SplitData cal = bundle.view("calibration");
    for (std::size_t size : sizes) {
        if (size == 0 || size > cal.size()) {
            throw DomainError("data efficiency: size " + std::to_string(size) +
                              " must lie in [1, " + std::to_string(cal.size()) + "]");
        }
    }
    SearchSpec s = spec;
    s.mode = SearchMode::Sparse;
    std::vector<EfficiencyPoint> out;
    for (std::size_t size : sizes) {
        std::vector<std::size_t> pos(cal.size());
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        if (size < cal.size()) {
            SeededRng rng(spec.plan.seed, 0x5eed0000ULL + size);
            for (std::size_t i = 0; i < size; ++i) {
                std::swap(pos[i], pos[i + rng.uniform_index(pos.size() - i)]);
            }
            pos.resize(size);
            std::sort(pos.begin(), pos.end());
        }
        SplitData sub;
        sub.features.resize(static_cast<Eigen::Index>(size), cal.features.cols());
        for (std::size_t k = 0; k < size; ++k) {
            sub.indices.push_back(cal.indices[pos[k]]);
            sub.labels.push_back(cal.labels[pos[k]]);
            sub.features.row(static_cast<Eigen::Index>(k)) =
                cal.features.row(static_cast<Eigen::Index>(pos[k]));
        }
        EfficiencyPoint p;
        p.size = size;
        p.subsample = sub.indices;
        p.result = search_on(bundle.layer, sub, s);
        out.push_back(std::move(p));
    }
    const SplitData test = bundle.view("test");
    for (auto& p : out) {
        p.test = evaluate(p.result.weights.weights, p.result.weights.bias, p.result.best_map,
                          test.features, test.labels, spec.bins);
    }
    return out;
}

namespace {

nlohmann::json curve_json(const std::vector<CurvePoint>& curve) {
    auto arr = nlohmann::json::array();
    for (const auto& p : curve) {
        nlohmann::json j{{"theta_deg", p.theta_deg}, {"map", to_string(p.map)}, {"saturated", p.saturated}};
        if (!p.saturated) {
            j["objective"] = p.objective;
            j["accuracy"] = p.accuracy;
            j["ece"] = p.ece;
            j["adaece"] = p.adaece;
        }
        arr.push_back(j);
    }
    return arr;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

void to_json(nlohmann::json& j, const SearchResult& r) {
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : r.weights.members) {
        members.push_back({{"seed", m.seed},
                           {"stream_id", m.stream_id},
                           {"achieved_mrc_deg", m.achieved_mrc_deg},
                           {"n_r", m.n_r}});
    }
    j = nlohmann::json{{"mode", to_string(r.mode)},
                       {"objective", to_string(r.objective)},
                       {"calibration_fit_objective", "nll"},
                       {"seed", r.seed},
                       {"best_theta_deg", r.best_theta_deg},
                       {"best_map_kind", to_string(r.best_map_kind)},
                       {"best_map", r.best_map},
                       {"best_objective", r.best_objective},
                       {"calibration_report", r.calibration_report},
                       {"curve", curve_json(r.curve)},
                       {"members", members}};
    if (r.mode == SearchMode::Sparse) {
        j["stage1_objective"] = r.stage1_objective;
        j["angle_curve"] = curve_json(r.angle_curve);
    }
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream out;
    out << "theta_deg,map,objective,accuracy,ece,adaece\n";
    for (const auto& p : curve) {
        out << fmt(p.theta_deg) << ',' << to_string(p.map) << ',';
        if (p.saturated) {
            out << "nan,nan,nan,nan\n";
        } else {
            out << fmt(p.objective) << ',' << fmt(p.accuracy) << ',' << fmt(p.ece) << ','
                << fmt(p.adaece) << '\n';
        }
    }
    return out.str();
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    if (values.empty()) return out;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

std::string format_mean_std(const MeanStd& v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f_{%.*f}", precision, v.mean, precision, v.stddev);
    return buf;
}

}  // namespace tna
