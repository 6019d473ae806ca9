#include "tna/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tna/tilt.hpp"

namespace tna {

namespace {

void check_records(std::span<const PredictionRecord> records, int bins) {
    if (records.empty()) throw DomainError("calibration metrics need at least one record");
    if (bins < 1) throw DomainError("bin count must be >= 1");
    for (const auto& r : records) {
        if (!std::isfinite(r.confidence)) throw DomainError("record confidence is not finite");
    }
}

void fill_row(ReliabilityRow& row, double correct, double conf) {
    if (row.count > 0) {
        row.accuracy = correct / static_cast<double>(row.count);
        row.confidence = conf / static_cast<double>(row.count);
    }
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

double ReliabilityTable::gap() const {
    long total = 0;
    for (const auto& r : rows) total += r.count;
    if (total == 0) return 0.0;
    double sum = 0.0;
    for (const auto& r : rows) {
        if (r.count == 0) continue;
        sum += static_cast<double>(r.count) / static_cast<double>(total) *
               std::abs(r.accuracy - r.confidence);
    }
    return sum;
}

int interval_bin(double p, int bins) {
    if (!(p > 0.0)) return 0;
    int j = static_cast<int>(std::ceil(p * bins)) - 1;
    j = std::clamp(j, 0, bins - 1);
    while (j > 0 && p <= static_cast<double>(j) / bins) --j;
    while (j < bins - 1 && p > static_cast<double>(j + 1) / bins) ++j;
    return j;
}

ReliabilityTable interval_table(std::span<const PredictionRecord> records, int bins) {
    check_records(records, bins);
    ReliabilityTable t;
    t.scheme = BinScheme::EqualInterval;
    t.bins = bins;
    t.rows.resize(static_cast<std::size_t>(bins));
    std::vector<double> correct(t.rows.size(), 0.0), conf(t.rows.size(), 0.0);
    for (int j = 0; j < bins; ++j) {
        t.rows[j].lower = static_cast<double>(j) / bins;
        t.rows[j].upper = static_cast<double>(j + 1) / bins;
    }
    for (const auto& r : records) {
        const auto j = static_cast<std::size_t>(interval_bin(r.confidence, bins));
        ++t.rows[j].count;
        correct[j] += r.correct ? 1.0 : 0.0;
        conf[j] += r.confidence;
    }
    for (std::size_t j = 0; j < t.rows.size(); ++j) fill_row(t.rows[j], correct[j], conf[j]);
    return t;
}

std::vector<long> mass_bin_sizes(long n, int bins) {
    if (bins < 1) throw DomainError("bin count must be >= 1");
    std::vector<long> sizes(static_cast<std::size_t>(bins), n / bins);
    for (long j = 0; j < n % bins; ++j) ++sizes[static_cast<std::size_t>(j)];
    return sizes;
}

ReliabilityTable mass_table(std::span<const PredictionRecord> records, int bins) {
    check_records(records, bins);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].confidence < records[b].confidence;
    });
    ReliabilityTable t;
    t.scheme = BinScheme::EqualMass;
    t.bins = bins;
    std::size_t pos = 0;
    for (long size : mass_bin_sizes(static_cast<long>(records.size()), bins)) {
        ReliabilityRow row;
        row.count = size;
        double correct = 0.0, conf = 0.0;
        for (long k = 0; k < size; ++k, ++pos) {
            const auto& r = records[order[pos]];
            if (k == 0) row.lower = r.confidence;
            row.upper = r.confidence;
            correct += r.correct ? 1.0 : 0.0;
            conf += r.confidence;
        }
        fill_row(row, correct, conf);
        t.rows.push_back(row);
    }
    return t;
}

double ece(std::span<const PredictionRecord> records, int bins) {
    return interval_table(records, bins).gap();
}

double adaece(std::span<const PredictionRecord> records, int bins) {
    return mass_table(records, bins).gap();
}

double accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw DomainError("accuracy of an empty record set");
    long hits = 0;
    for (const auto& r : records) hits += r.correct ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

double mean_confidence(std::span<const PredictionRecord> records) {
    if (records.empty()) throw DomainError("mean confidence of an empty record set");
    double sum = 0.0;
    for (const auto& r : records) sum += r.confidence;
    return sum / static_cast<double>(records.size());
}

PredictionRecord make_record(const Vector& p, int label) {
    Eigen::Index pred = 0;
    const double top = p.maxCoeff(&pred);
    return {top, pred == label, static_cast<int>(pred)};
}

EvalReport evaluate_logits(const Matrix& logits, const CalibrationMap& map,
                           std::span<const int> labels, int bins) {
    if (logits.rows() == 0) throw DomainError("evaluate: empty split");
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw DomainError("evaluate: " + std::to_string(logits.rows()) + " logit rows but " +
                          std::to_string(labels.size()) + " labels");
    }
    if (!map.fitted()) throw StateError("evaluate: calibration map is not fitted");
    std::vector<PredictionRecord> records;
    records.reserve(labels.size());
    double nll = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw DomainError("evaluate: label out of range");
        const Vector p = map.apply(logits.row(i).transpose());
        records.push_back(make_record(p, y));
        nll -= std::log(std::max(p(y), std::numeric_limits<double>::min()));
    }
    EvalReport r;
    r.samples = static_cast<long>(records.size());
    r.bins = bins;
    r.map = to_string(map.kind());
    r.interval = interval_table(records, bins);
    r.mass = mass_table(records, bins);
    r.accuracy = accuracy(records);
    r.mean_confidence = mean_confidence(records);
    r.ece = r.interval.gap();
    r.adaece = r.mass.gap();
    r.nll = nll / static_cast<double>(records.size());
    return r;
}

EvalReport evaluate(const Matrix& weights, const Vector& bias, const CalibrationMap& map,
                    const Matrix& features, std::span<const int> labels, int bins) {
    return evaluate_logits(logits_batch(weights, bias, features), map, labels, bins);
}

std::string to_string(Objective objective) {
    switch (objective) {
        case Objective::ECE: return "ece";
        case Objective::AdaECE: return "adaece";
        case Objective::NLL: return "nll";
    }
    return "unknown";
}

Objective objective_from_string(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "ece") return Objective::ECE;
    if (s == "adaece") return Objective::AdaECE;
    if (s == "nll") return Objective::NLL;
    throw DomainError("unknown objective '" + name + "'");
}

double objective_value(const EvalReport& report, Objective objective) {
    switch (objective) {
        case Objective::ECE: return report.ece;
        case Objective::AdaECE: return report.adaece;
        case Objective::NLL: return report.nll;
    }
    return report.ece;
}

void to_json(nlohmann::json& j, const ReliabilityTable& table) {
    j = nlohmann::json{{"scheme", table.scheme == BinScheme::EqualInterval ? "equal-interval"
                                                                            : "equal-mass"},
                       {"bins", table.bins},
                       {"rows", nlohmann::json::array()}};
    for (const auto& r : table.rows) {
        j["rows"].push_back({{"lower", r.lower},
                             {"upper", r.upper},
                             {"count", r.count},
                             {"accuracy", r.accuracy},
                             {"confidence", r.confidence}});
    }
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"samples", r.samples},
                       {"map", r.map},
                       {"bins", r.bins},
                       {"accuracy", r.accuracy},
                       {"ece", r.ece},
                       {"adaece", r.adaece},
                       {"nll", r.nll},
                       {"mean_confidence", r.mean_confidence},
                       {"accuracy_pct", r.accuracy_pct()},
                       {"ece_pct", r.ece_pct()},
                       {"adaece_pct", r.adaece_pct()},
                       {"reliability_interval", r.interval},
                       {"reliability_mass", r.mass}};
}

std::string csv_header() { return "map,samples,accuracy,ece,adaece,nll,mean_confidence"; }

std::string csv_row(const EvalReport& r) {
    return r.map + "," + std::to_string(r.samples) + "," + fmt(r.accuracy) + "," + fmt(r.ece) +
           "," + fmt(r.adaece) + "," + fmt(r.nll) + "," + fmt(r.mean_confidence);
}

}  // namespace tna
