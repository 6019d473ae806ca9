#pragma once

#include <array>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "tna/geometry.hpp"

namespace tna {

enum class MapKind { Identity, Temperature, EnsembleTemperature, IsotonicOvA };

/// Short names used on the command line and in CSV/JSON: identity, ts, ets, irova.
std::string to_string(MapKind kind);
MapKind map_kind_from_string(const std::string& name);

struct IdentityMap {};

struct TemperatureMap {
    double temperature = 1.0;
};

/// w[0] softmax(s / T) + w[1] softmax(s) + w[2] / C.
struct EnsembleTemperatureMap {
    double temperature = 1.0;
    std::array<double, 3> weights{1.0, 0.0, 0.0};
};

/// Nondecreasing step function: value of the last threshold <= x,
/// clamped to the first/last value outside the threshold range.
struct StepFunction {
    std::vector<double> thresholds;
    std::vector<double> values;

    double operator()(double x) const;
};

struct IsotonicOvAMap {
    std::vector<StepFunction> per_class;
    std::vector<int> absent_classes;  ///< classes with no calibration label; mapped to 0
};

inline constexpr double kIsotonicFloor = 1e-12;
inline constexpr double kTemperatureMin = 0.05;
inline constexpr double kTemperatureMax = 10.0;

/// A fitted calibration map, or an unfitted placeholder (default constructed).
class CalibrationMap {
public:
    using Variant = std::variant<std::monostate, IdentityMap, TemperatureMap,
                                 EnsembleTemperatureMap, IsotonicOvAMap>;

    CalibrationMap() = default;
    CalibrationMap(IdentityMap m) : map_(m) {}
    CalibrationMap(TemperatureMap m) : map_(m) {}
    CalibrationMap(EnsembleTemperatureMap m) : map_(m) {}
    CalibrationMap(IsotonicOvAMap m) : map_(std::move(m)) {}

    bool fitted() const { return !std::holds_alternative<std::monostate>(map_); }
    MapKind kind() const;
    const Variant& variant() const { return map_; }

    /// Probability vector for one logit row. Throws StateError if unfitted.
    Vector apply(const Vector& logit_row) const;
    /// Row-wise application to an (m x C) logit matrix.
    Matrix apply_rows(const Matrix& logit_rows) const;

private:
    Variant map_;
};

inline Vector apply_map(const CalibrationMap& map, const Vector& logit_row) {
    return map.apply(logit_row);
}

/// Mean NLL of softmax(s / T).
double temperature_nll(const Matrix& logit_rows, std::span<const int> labels, double temperature);

/// Golden-section search on log T over [0.05, 10] minimising mean NLL.
TemperatureMap fit_temperature(const Matrix& logit_rows, std::span<const int> labels);

Vector apply_temperature(const TemperatureMap& map, const Vector& logit_row);

/// Simplex grid (step 0.02) then local refinement (step 0.002) on mean NLL.
EnsembleTemperatureMap fit_ets(const Matrix& logit_rows, std::span<const int> labels,
                               double base_temperature);

Vector apply_ets(const EnsembleTemperatureMap& map, const Vector& logit_row);

/// Weighted pool-adjacent-violators: the nondecreasing least-squares fit of y.
/// Returns one fitted value per input point.
std::vector<double> pava(std::span<const double> y, std::span<const double> weights = {});

/// One step function per class, fitted on (score_c, 1{label == c}).
/// `scores` is (m x C), typically softmax outputs.
IsotonicOvAMap fit_irova(const Matrix& scores, std::span<const int> labels);

Vector apply_irova(const IsotonicOvAMap& map, const Vector& logit_row);

/// Fits the named family on calibration logits (IROvA consumes their softmax).
CalibrationMap fit_map(MapKind kind, const Matrix& logit_rows, std::span<const int> labels);

void to_json(nlohmann::json& j, const CalibrationMap& map);
void from_json(const nlohmann::json& j, CalibrationMap& map);

}  // namespace tna
