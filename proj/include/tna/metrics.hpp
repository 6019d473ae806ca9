#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "tna/calibration.hpp"
#include "tna/geometry.hpp"

namespace tna {

struct PredictionRecord {
    double confidence = 0.0;
    bool correct = false;
    int predicted_class = 0;
};

enum class BinScheme { EqualInterval, EqualMass };

struct ReliabilityRow {
    double lower = 0.0;
    double upper = 0.0;
    long count = 0;
    double accuracy = 0.0;    ///< 0 for empty bins
    double confidence = 0.0;  ///< 0 for empty bins
};

struct ReliabilityTable {
    BinScheme scheme = BinScheme::EqualInterval;
    int bins = 15;
    std::vector<ReliabilityRow> rows;

    /// Sum over bins of (|B_j| / N) |acc(B_j) - conf(B_j)|.
    double gap() const;
};

inline constexpr int kDefaultBins = 15;

/// Bin j in [0, B) holding confidence p under (j/B, (j+1)/B]; p = 0 goes to bin 0.
int interval_bin(double p, int bins);

/// Equal-width bins (j/B, (j+1)/B].
ReliabilityTable interval_table(std::span<const PredictionRecord> records, int bins = kDefaultBins);

/// Equal-count bins over records stably sorted by confidence; the first N mod B
/// bins take one extra record. Row bounds are the min/max confidence inside.
ReliabilityTable mass_table(std::span<const PredictionRecord> records, int bins = kDefaultBins);

/// Bin sizes used by mass_table.
std::vector<long> mass_bin_sizes(long n, int bins);

double ece(std::span<const PredictionRecord> records, int bins = kDefaultBins);
double adaece(std::span<const PredictionRecord> records, int bins = kDefaultBins);
double accuracy(std::span<const PredictionRecord> records);
double mean_confidence(std::span<const PredictionRecord> records);

/// (pred, p_hat) from a probability row; lowest index wins ties.
PredictionRecord make_record(const Vector& probabilities, int label);

/// Fractions in [0, 1]; the *_pct accessors are for presentation.
struct EvalReport {
    long samples = 0;
    double accuracy = 0.0;
    double ece = 0.0;
    double adaece = 0.0;
    double nll = 0.0;
    double mean_confidence = 0.0;
    int bins = kDefaultBins;
    std::string map;
    ReliabilityTable interval;
    ReliabilityTable mass;

    double accuracy_pct() const { return 100.0 * accuracy; }
    double ece_pct() const { return 100.0 * ece; }
    double adaece_pct() const { return 100.0 * adaece; }
};

/// Scores features with (weights, bias), applies the map, and summarises.
EvalReport evaluate(const Matrix& weights, const Vector& bias, const CalibrationMap& map,
                    const Matrix& features, std::span<const int> labels, int bins = kDefaultBins);

/// Same, starting from precomputed logits (m x C).
EvalReport evaluate_logits(const Matrix& logits, const CalibrationMap& map,
                           std::span<const int> labels, int bins = kDefaultBins);

enum class Objective { ECE, AdaECE, NLL };

std::string to_string(Objective objective);
Objective objective_from_string(const std::string& name);
double objective_value(const EvalReport& report, Objective objective);

void to_json(nlohmann::json& j, const ReliabilityTable& table);
void to_json(nlohmann::json& j, const EvalReport& report);

std::string csv_header();
std::string csv_row(const EvalReport& report);

}  // namespace tna
