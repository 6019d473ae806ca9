#include "tna/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tna/tilt.hpp"

namespace tna {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_fit_inputs(const Matrix& rows, std::span<const int> labels, const char* who) {
    if (rows.rows() == 0 || labels.empty()) {
        throw DomainError(std::string(who) + ": empty calibration input");
    }
    if (static_cast<std::size_t>(rows.rows()) != labels.size()) {
        throw DomainError(std::string(who) + ": " + std::to_string(rows.rows()) + " rows but " +
                          std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
        if (y < 0 || y >= rows.cols()) {
            throw DomainError(std::string(who) + ": label " + std::to_string(y) + " out of range");
        }
    }
}

// -log softmax(x)_label, keeping precision when the row is confidently correct.
double cross_entropy(const Eigen::Ref<const Eigen::RowVectorXd>& x, int label) {
    Eigen::Index arg = 0;
    const double top = x.maxCoeff(&arg);
    double rest = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (j != arg) rest += std::exp(x(j) - top);
    }
    return (top - x(label)) + std::log1p(rest);
}

double safe_neg_log(double p) {
    return -std::log(std::max(p, std::numeric_limits<double>::min()));
}

}  // namespace

std::string to_string(MapKind kind) {
    switch (kind) {
        case MapKind::Identity: return "identity";
        case MapKind::Temperature: return "ts";
        case MapKind::EnsembleTemperature: return "ets";
        case MapKind::IsotonicOvA: return "irova";
    }
    return "unknown";
}

MapKind map_kind_from_string(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "identity" || s == "none") return MapKind::Identity;
    if (s == "ts" || s == "temperature") return MapKind::Temperature;
    if (s == "ets") return MapKind::EnsembleTemperature;
    if (s == "irova" || s == "isotonic") return MapKind::IsotonicOvA;
    throw DomainError("unknown calibration map '" + name + "'");
}

double StepFunction::operator()(double x) const {
    if (values.empty()) return 0.0;
    const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), x);
    if (it == thresholds.begin()) return values.front();
    return values[static_cast<std::size_t>(std::distance(thresholds.begin(), it) - 1)];
}

MapKind CalibrationMap::kind() const {
    return std::visit(
        overloaded{[](const std::monostate&) -> MapKind {
                       throw StateError("calibration map is not fitted");
                   },
                   [](const IdentityMap&) { return MapKind::Identity; },
                   [](const TemperatureMap&) { return MapKind::Temperature; },
                   [](const EnsembleTemperatureMap&) { return MapKind::EnsembleTemperature; },
                   [](const IsotonicOvAMap&) { return MapKind::IsotonicOvA; }},
        map_);
}

Vector CalibrationMap::apply(const Vector& s) const {
    return std::visit(
        overloaded{[](const std::monostate&) -> Vector {
                       throw StateError("calibration map is not fitted");
                   },
                   [&](const IdentityMap&) { return softmax(s); },
                   [&](const TemperatureMap& m) { return apply_temperature(m, s); },
                   [&](const EnsembleTemperatureMap& m) { return apply_ets(m, s); },
                   [&](const IsotonicOvAMap& m) { return apply_irova(m, s); }},
        map_);
}

Matrix CalibrationMap::apply_rows(const Matrix& rows) const {
    if (!fitted()) throw StateError("calibration map is not fitted");
    Matrix out(rows.rows(), rows.cols());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        out.row(i) = apply(rows.row(i).transpose()).transpose();
    }
    return out;
}

// ---- temperature scaling -------------------------------------------------

double temperature_nll(const Matrix& rows, std::span<const int> labels, double temperature) {
    double total = 0.0;
    const double inv_t = 1.0 / temperature;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const Eigen::RowVectorXd scaled = rows.row(i) * inv_t;
        total += cross_entropy(scaled, labels[static_cast<std::size_t>(i)]);
    }
    return total / static_cast<double>(rows.rows());
}

TemperatureMap fit_temperature(const Matrix& rows, std::span<const int> labels) {
    check_fit_inputs(rows, labels, "fit_temperature");
    const auto nll_at = [&](double log_t) { return temperature_nll(rows, labels, std::exp(log_t)); };

    constexpr double kInvPhi = 0.6180339887498949;
    double a = std::log(kTemperatureMin);
    double b = std::log(kTemperatureMax);
    double c = b - kInvPhi * (b - a);
    double d = a + kInvPhi * (b - a);
    double fc = nll_at(c);
    double fd = nll_at(d);
    while (std::exp(b) - std::exp(a) > 1e-4) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kInvPhi * (b - a);
            fc = nll_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kInvPhi * (b - a);
            fd = nll_at(d);
        }
    }
    double best_t = std::exp(0.5 * (a + b));
    double best = temperature_nll(rows, labels, best_t);
    // Monotone objectives push the optimum onto the bracket edge.
    for (double edge : {kTemperatureMin, kTemperatureMax}) {
        const double f = temperature_nll(rows, labels, edge);
        if (f < best) {
            best = f;
            best_t = edge;
        }
    }
    return {best_t};
}

Vector apply_temperature(const TemperatureMap& map, const Vector& s) {
    if (!(map.temperature > 0.0)) throw DomainError("temperature must be positive");
    return softmax(s / map.temperature);
}

// ---- ensemble temperature scaling ----------------------------------------

EnsembleTemperatureMap fit_ets(const Matrix& rows, std::span<const int> labels,
                               double base_temperature) {
    check_fit_inputs(rows, labels, "fit_ets");
    if (!(base_temperature > 0.0)) throw DomainError("fit_ets: base temperature must be positive");
    const auto m = static_cast<std::size_t>(rows.rows());
    const double uniform = 1.0 / static_cast<double>(rows.cols());
    std::vector<double> p_scaled(m), p_raw(m);
    for (std::size_t i = 0; i < m; ++i) {
        const Vector s = rows.row(static_cast<Eigen::Index>(i)).transpose();
        p_scaled[i] = softmax(s / base_temperature)(labels[i]);
        p_raw[i] = softmax(s)(labels[i]);
    }
    const auto nll = [&](double w1, double w2) {
        const double w3 = 1.0 - w1 - w2;
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            total += safe_neg_log(w1 * p_scaled[i] + w2 * p_raw[i] + w3 * uniform);
        }
        return total / static_cast<double>(m);
    };

    constexpr int kCoarse = 50;  // 1 / 0.02
    double best_w1 = 1.0, best_w2 = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kCoarse; ++i) {
        for (int j = 0; i + j <= kCoarse; ++j) {
            const double w1 = i / double(kCoarse);
            const double w2 = j / double(kCoarse);
            const double f = nll(w1, w2);
            if (f < best) {
                best = f;
                best_w1 = w1;
                best_w2 = w2;
            }
        }
    }
    constexpr double kFine = 0.002;
    const double c1 = best_w1, c2 = best_w2;
    for (int a = -10; a <= 10; ++a) {
        for (int b = -10; b <= 10; ++b) {
            const double w1 = c1 + a * kFine;
            const double w2 = c2 + b * kFine;
            if (w1 < -1e-12 || w2 < -1e-12 || w1 + w2 > 1.0 + 1e-12) continue;
            const double cw1 = std::clamp(w1, 0.0, 1.0);
            const double cw2 = std::clamp(w2, 0.0, 1.0 - cw1);
            const double f = nll(cw1, cw2);
            if (f < best) {
                best = f;
                best_w1 = cw1;
                best_w2 = cw2;
            }
        }
    }
    EnsembleTemperatureMap map;
    map.temperature = base_temperature;
    map.weights = {best_w1, best_w2, std::max(0.0, 1.0 - best_w1 - best_w2)};
    return map;
}

Vector apply_ets(const EnsembleTemperatureMap& map, const Vector& s) {
    const Vector scaled = apply_temperature({map.temperature}, s);
    const Vector raw = softmax(s);
    const double uniform = 1.0 / static_cast<double>(s.size());
    return (map.weights[0] * scaled + map.weights[1] * raw).array() + map.weights[2] * uniform;
}

// ---- isotonic one-vs-all -------------------------------------------------

std::vector<double> pava(std::span<const double> y, std::span<const double> weights) {
    if (!weights.empty() && weights.size() != y.size()) {
        throw DomainError("pava: weight count does not match values");
    }
    struct Block {
        double sum_wy;
        double sum_w;
        std::size_t count;
        double mean() const { return sum_wy / sum_w; }
    };
    std::vector<Block> stack;
    stack.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w > 0.0)) throw DomainError("pava: weights must be positive");
        stack.push_back({w * y[i], w, 1});
        while (stack.size() > 1 && stack[stack.size() - 2].mean() > stack.back().mean()) {
            const Block top = stack.back();
            stack.pop_back();
            stack.back().sum_wy += top.sum_wy;
            stack.back().sum_w += top.sum_w;
            stack.back().count += top.count;
        }
    }
    std::vector<double> fitted;
    fitted.reserve(y.size());
    for (const auto& b : stack) fitted.insert(fitted.end(), b.count, b.mean());
    return fitted;
}

IsotonicOvAMap fit_irova(const Matrix& scores, std::span<const int> labels) {
    check_fit_inputs(scores, labels, "fit_irova");
    const auto m = static_cast<std::size_t>(scores.rows());
    IsotonicOvAMap map;
    map.per_class.resize(static_cast<std::size_t>(scores.cols()));

    std::vector<std::size_t> order(m);
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores(static_cast<Eigen::Index>(a), c) < scores(static_cast<Eigen::Index>(b), c);
        });
        // Merge tied scores into one point carrying the mean indicator.
        std::vector<double> xs, ys, ws;
        bool present = false;
        for (std::size_t k = 0; k < m; ++k) {
            const double x = scores(static_cast<Eigen::Index>(order[k]), c);
            const double hit = labels[order[k]] == c ? 1.0 : 0.0;
            present = present || hit > 0.0;
            if (!xs.empty() && xs.back() == x) {
                ys.back() += hit;
                ws.back() += 1.0;
            } else {
                xs.push_back(x);
                ys.push_back(hit);
                ws.push_back(1.0);
            }
        }
        for (std::size_t k = 0; k < ys.size(); ++k) ys[k] /= ws[k];
        const auto fitted = pava(ys, ws);

        StepFunction& step = map.per_class[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (!step.values.empty() && step.values.back() == fitted[k]) continue;
            step.thresholds.push_back(xs[k]);
            step.values.push_back(fitted[k]);
        }
        if (!present) map.absent_classes.push_back(static_cast<int>(c));
    }
    return map;
}

Vector apply_irova(const IsotonicOvAMap& map, const Vector& s) {
    if (static_cast<std::size_t>(s.size()) != map.per_class.size()) {
        throw DomainError("apply_irova: logit length does not match fitted class count");
    }
    const Vector scores = softmax(s);
    Vector p(s.size());
    for (Eigen::Index c = 0; c < s.size(); ++c) {
        p(c) = std::max(map.per_class[static_cast<std::size_t>(c)](scores(c)), kIsotonicFloor);
    }
    return p / p.sum();
}

CalibrationMap fit_map(MapKind kind, const Matrix& rows, std::span<const int> labels) {
    switch (kind) {
        case MapKind::Identity:
            return IdentityMap{};
        case MapKind::Temperature:
            return fit_temperature(rows, labels);
        case MapKind::EnsembleTemperature: {
            const auto ts = fit_temperature(rows, labels);
            return fit_ets(rows, labels, ts.temperature);
        }
        case MapKind::IsotonicOvA: {
            check_fit_inputs(rows, labels, "fit_irova");
            Matrix scores(rows.rows(), rows.cols());
            for (Eigen::Index i = 0; i < rows.rows(); ++i) {
                scores.row(i) = softmax(rows.row(i).transpose()).transpose();
            }
            return fit_irova(scores, labels);
        }
    }
    throw DomainError("fit_map: unknown map kind");
}

// ---- serialization -------------------------------------------------------

void to_json(nlohmann::json& j, const CalibrationMap& map) {
    std::visit(overloaded{[](const std::monostate&) {
                              throw StateError("cannot serialize an unfitted calibration map");
                          },
                          [&](const IdentityMap&) { j = {{"type", "identity"}}; },
                          [&](const TemperatureMap& m) {
                              j = {{"type", "ts"}, {"temperature", m.temperature}};
                          },
                          [&](const EnsembleTemperatureMap& m) {
                              j = {{"type", "ets"},
                                   {"temperature", m.temperature},
                                   {"weights", m.weights}};
                          },
                          [&](const IsotonicOvAMap& m) {
                              nlohmann::json classes = nlohmann::json::array();
                              for (const auto& step : m.per_class) {
                                  classes.push_back({{"thresholds", step.thresholds},
                                                     {"values", step.values}});
                              }
                              j = {{"type", "irova"},
                                   {"classes", classes},
                                   {"absent_classes", m.absent_classes}};
                          }},
               map.variant());
}

void from_json(const nlohmann::json& j, CalibrationMap& map) {
    const auto type = j.at("type").get<std::string>();
    switch (map_kind_from_string(type)) {
        case MapKind::Identity:
            map = IdentityMap{};
            return;
        case MapKind::Temperature:
            map = TemperatureMap{j.at("temperature").get<double>()};
            return;
        case MapKind::EnsembleTemperature: {
            EnsembleTemperatureMap m;
            m.temperature = j.at("temperature").get<double>();
            m.weights = j.at("weights").get<std::array<double, 3>>();
            map = m;
            return;
        }
        case MapKind::IsotonicOvA: {
            IsotonicOvAMap m;
            for (const auto& cls : j.at("classes")) {
                StepFunction step;
                step.thresholds = cls.at("thresholds").get<std::vector<double>>();
                step.values = cls.at("values").get<std::vector<double>>();
                if (step.thresholds.size() != step.values.size()) {
                    throw DomainError("irova step function has mismatched arrays");
                }
                m.per_class.push_back(std::move(step));
            }
            if (j.contains("absent_classes")) {
                m.absent_classes = j.at("absent_classes").get<std::vector<int>>();
            }
            map = std::move(m);
            return;
        }
    }
}

}  // namespace tna
