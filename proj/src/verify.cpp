#include "tna/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tna/parallel.hpp"

namespace tna {

ConeSample sample_on_cone(const Vector& u, double angle_deg, SeededRng& rng) {
    if (u.size() < 2) throw DomainError("sample_on_cone: dimension must be >= 2");
    if (std::abs(u.norm() - 1.0) > 1e-9) throw DomainError("sample_on_cone: u must be a unit vector");
    if (!(angle_deg > 0.0 && angle_deg < 180.0)) {
        throw DomainError("sample_on_cone: angle must lie in (0, 180) degrees");
    }
    Vector r(u.size());
    for (int attempt = 0; attempt < 100; ++attempt) {
        for (Eigen::Index j = 0; j < r.size(); ++j) r(j) = rng.normal();
        r -= r.dot(u) * u;
        const double norm = r.norm();
        if (norm > 1e-12) {
            r /= norm;
            const double a = to_radians(angle_deg);
            return {u, angle_deg, std::cos(a) * u + std::sin(a) * r};
        }
    }
    throw DomainError("sample_on_cone: projection degenerated 100 times in a row");
}

double closed_form_mode(double psi_deg, double theta_deg) {
    const double psi = to_radians(psi_deg);
    const double theta = to_radians(theta_deg);
    return to_degrees(std::acos(std::cos(psi) * std::cos(theta)) - psi);
}

MonteCarloModeReport thm1_mode_check(int n, double psi_deg, double theta_deg, long samples,
                                     double bin_width_deg, const ModeCheckOptions& options) {
    if (!(0.0 < theta_deg && theta_deg < psi_deg && psi_deg < 90.0)) {
        throw DomainError("mode check requires 0 deg < theta < psi < 90 deg (got theta=" +
                          std::to_string(theta_deg) + ", psi=" + std::to_string(psi_deg) + ")");
    }
    if (n < 2) throw DomainError("mode check requires n >= 2");
    if (samples < 1) throw DomainError("mode check requires samples >= 1");
    if (!(bin_width_deg > 0.0)) throw DomainError("mode check requires a positive bin width");
    if (options.batch < 1) throw DomainError("mode check requires batch >= 1");

    Vector u = Vector::Zero(n);
    u(0) = 1.0;
    Vector v = Vector::Zero(n);
    v(0) = std::cos(to_radians(psi_deg));
    v(1) = std::sin(to_radians(psi_deg));

    const auto batches = static_cast<std::size_t>((samples + options.batch - 1) / options.batch);
    std::vector<std::map<long, long>> hist(batches);
    std::vector<double> sums(batches, 0.0);
    parallel_for(batches, options.workers, [&](std::size_t b) {
        SeededRng rng(options.seed, b + 1);
        const long count = std::min(options.batch, samples - static_cast<long>(b) * options.batch);
        for (long k = 0; k < count; ++k) {
            const Vector tilted = sample_on_cone(u, theta_deg, rng).v;
            const double delta = angle_between(tilted, v) - psi_deg;
            ++hist[b][std::lround(delta / bin_width_deg)];
            sums[b] += delta;
        }
    });

    MonteCarloModeReport r;
    r.n = n;
    r.psi_deg = psi_deg;
    r.theta_deg = theta_deg;
    r.samples = samples;
    r.bin_width_deg = bin_width_deg;
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
        for (const auto& [k, c] : hist[b]) r.histogram[k] += c;
        total += sums[b];
    }
    long best_bin = 0, best_count = -1;
    for (const auto& [k, c] : r.histogram) {
        if (c > best_count) {
            best_count = c;
            best_bin = k;
        }
    }
    r.empirical_mode_deg = static_cast<double>(best_bin) * bin_width_deg;
    r.closed_form_mode_deg = closed_form_mode(psi_deg, theta_deg);
    r.gap_deg = std::abs(r.empirical_mode_deg - r.closed_form_mode_deg);
    r.mean_delta_deg = total / static_cast<double>(samples);
    return r;
}

RelaxationCase prop1_check(const std::vector<double>& psis_deg, double theta_deg,
                           const std::vector<double>& class_norms, double feature_norm) {
    if (psis_deg.size() < 2) throw DomainError("prop1: need at least two classes");
    if (class_norms.size() != psis_deg.size()) throw DomainError("prop1: one norm per class required");
    if (!(theta_deg >= 0.0 && theta_deg < 90.0)) throw DomainError("prop1: theta must lie in [0, 90)");
    if (!(feature_norm > 0.0)) throw DomainError("prop1: feature norm must be positive");
    const auto c = static_cast<Eigen::Index>(psis_deg.size());
    Vector before(c), after(c);
    const double ct = std::cos(to_radians(theta_deg));
    for (Eigen::Index i = 0; i < c; ++i) {
        const double psi = psis_deg[static_cast<std::size_t>(i)];
        const double norm = class_norms[static_cast<std::size_t>(i)];
        if (!(psi >= 0.0 && psi < 90.0)) throw DomainError("prop1: every psi must lie in [0, 90)");
        if (!(norm > 0.0)) throw DomainError("prop1: class norms must be positive");
        before(i) = norm * feature_norm * std::cos(to_radians(psi));
        after(i) = before(i) * ct;
    }
    RelaxationCase out;
    out.p_hat = confidence(before).p_hat;
    out.p_hat_prime = confidence(after).p_hat;
    out.relaxed = out.p_hat_prime < out.p_hat;
    return out;
}

AngleSummary orthogonality_concentration(int n, long samples, std::uint64_t seed) {
    if (n < 2) throw DomainError("orthogonality concentration requires n >= 2");
    if (samples < 2) throw DomainError("orthogonality concentration requires samples >= 2");
    SeededRng rng(seed, 0);
    std::vector<double> angles;
    angles.reserve(static_cast<std::size_t>(samples));
    Vector a(n), b(n);
    for (long k = 0; k < samples; ++k) {
        do {
            for (int j = 0; j < n; ++j) a(j) = rng.normal();
            for (int j = 0; j < n; ++j) b(j) = rng.normal();
        } while (a.norm() == 0.0 || b.norm() == 0.0);
        angles.push_back(angle_between(a, b));
    }
    const auto ms = mean_std(angles);
    return {ms.mean, ms.stddev};
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DomainError("spearman: length mismatch");
    if (x.size() < 2) throw DomainError("spearman: need at least two points");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nan("");
    return sxy / std::sqrt(sxx * syy);
}

// ---- figure data ---------------------------------------------------------

std::vector<Fig2Row> fig2_traces(const LastLayer& layer, const TiltPlan& plan,
                                 const std::vector<double>& theta_s, int seeds,
                                 long total_factors, int workers) {
    if (seeds < 1) throw DomainError("fig2: seeds must be >= 1");
    const auto jobs = theta_s.size() * static_cast<std::size_t>(seeds);
    std::vector<TiltedTransform> traces(jobs);
    parallel_for(jobs, workers, [&](std::size_t k) {
        TiltPlan p = plan;
        p.theta_s = theta_s[k / static_cast<std::size_t>(seeds)];
        SeededRng rng(plan.seed + k % static_cast<std::size_t>(seeds), 0);
        traces[k] = mrc_trace(layer, p, rng, total_factors);
        traces[k].matrix.resize(0, 0);
        traces[k].factors.clear();
    });
    std::vector<Fig2Row> rows;
    for (std::size_t k = 0; k < jobs; ++k) {
        for (const auto& tp : traces[k].trace) {
            rows.push_back({theta_s[k / static_cast<std::size_t>(seeds)], traces[k].seed, tp.n_r, tp.mrc_deg});
        }
    }
    return rows;
}

std::vector<Fig3Row> fig3_accuracy(const FeatureBundle& bundle, const TiltPlan& plan,
                                   const std::vector<double>& mrcs, const std::vector<int>& n_es,
                                   int seeds, int workers) {
    if (seeds < 1) throw DomainError("fig3: seeds must be >= 1");
    const SplitData test = bundle.view("test");
    std::vector<Fig3Row> rows;
    const auto original = evaluate(bundle.layer.weights, bundle.layer.bias, IdentityMap{},
                                   test.features, test.labels);
    rows.push_back({-1.0, 0, plan.seed, original.accuracy});

    struct Job {
        double mrc;
        int n_e;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (double m : mrcs) {
        for (int ne : n_es) {
            for (int s = 0; s < seeds; ++s) jobs.push_back({m, ne, plan.seed + static_cast<std::uint64_t>(s)});
        }
    }
    std::vector<double> acc(jobs.size());
    parallel_for(jobs.size(), workers, [&](std::size_t k) {
        TiltPlan p = plan;
        p.target_mrc_deg = jobs[k].mrc;
        p.n_e = jobs[k].n_e;
        p.seed = jobs[k].seed;
        const auto w = tilt_and_average(bundle.layer, p, 1);
        acc[k] = evaluate(w.weights, w.bias, IdentityMap{}, test.features, test.labels).accuracy;
    });
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        rows.push_back({jobs[k].mrc, jobs[k].n_e, jobs[k].seed, acc[k]});
    }
    return rows;
}

std::vector<Fig4Row> fig4_efficiency(const FeatureBundle& bundle, const SearchSpec& spec,
                                     const std::vector<std::size_t>& sizes) {
    std::vector<Fig4Row> rows;
    for (MapKind kind : spec.maps) {
        for (bool tilt : {false, true}) {
            SearchSpec s = spec;
            s.maps = {kind};
            if (!tilt) s.angle_grid = {0.0};
            for (const auto& p : data_efficiency_sweep(bundle, s, sizes)) {
                rows.push_back({to_string(kind) + (tilt ? "+tna" : ""), p.size, p.test.ece,
                                p.test.accuracy});
            }
        }
    }
    return rows;
}

AngleStudy angle_study(const FeatureBundle& bundle, const TiltPlan& plan, double bin_width_deg,
                       int workers) {
    if (!(bin_width_deg > 0.0)) throw DomainError("angle study: bin width must be positive");
    const SplitData test = bundle.view("test");
    std::vector<std::pair<std::string, Matrix>> variants{{"original", bundle.layer.weights}};
    for (double target : {30.0, 45.0}) {
        TiltPlan p = plan;
        p.target_mrc_deg = target;
        variants.emplace_back(target == 30.0 ? "tilt30" : "tilt45",
                              tilt_and_average(bundle.layer, p, workers).weights);
    }

    AngleStudy out;
    const auto add = [&](const std::string& name, const std::vector<double>& angles) {
        std::map<long, long> hist;
        for (double a : angles) ++hist[std::lround(a / bin_width_deg)];
        for (const auto& [k, c] : hist) out.histogram.push_back({name, k * bin_width_deg, c});
        out.mean_deg[name] = std::accumulate(angles.begin(), angles.end(), 0.0) /
                             static_cast<double>(angles.size());
    };
    for (const auto& [name, w] : variants) {
        const Matrix s = logits_batch(w, bundle.layer.bias, test.features);
        std::vector<double> angles;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            Eigen::Index pred = 0;
            s.row(i).maxCoeff(&pred);
            angles.push_back(angle_between(w.col(pred), test.features.row(i).transpose()));
        }
        add(name, angles);
    }
    SeededRng rng(plan.seed, 0xfa15eULL);
    std::vector<double> angles;
    const auto c = static_cast<std::uint64_t>(bundle.classes());
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto other = rng.uniform_index(c - 1);
        if (other >= static_cast<std::uint64_t>(test.labels[i])) ++other;
        angles.push_back(angle_between(bundle.layer.weights.col(static_cast<Eigen::Index>(other)),
                                       test.features.row(static_cast<Eigen::Index>(i)).transpose()));
    }
    add("false-class", angles);
    return out;
}

FigureKind figure_from_string(const std::string& name) {
    if (name == "fig2") return FigureKind::Fig2;
    if (name == "fig3") return FigureKind::Fig3;
    if (name == "fig4") return FigureKind::Fig4;
    if (name == "angles") return FigureKind::Angles;
    throw DomainError("unknown figure '" + name + "' (fig2 | fig3 | fig4 | angles)");
}

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

void emit_figure_curves(const FeatureBundle& bundle, const TiltPlan& plan, FigureKind which,
                        const std::filesystem::path& out_path, const FigureOptions& o) {
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + out_path.string() + " for writing");
    switch (which) {
        case FigureKind::Fig2:
            out << "theta_s,seed,n_r,mrc_deg\n";
            for (const auto& r : fig2_traces(bundle.layer, plan, o.theta_s, o.seeds, o.total_factors, o.workers)) {
                out << fmt(r.theta_s) << ',' << r.seed << ',' << r.n_r << ',' << fmt(r.mrc_deg) << '\n';
            }
            break;
        case FigureKind::Fig3:
            out << "mrc_deg,n_e,seed,accuracy\n";
            for (const auto& r : fig3_accuracy(bundle, plan, o.mrcs, o.n_es, o.seeds, o.workers)) {
                if (r.mrc_deg < 0) {
                    out << "original,0," << r.seed << ',' << fmt(r.accuracy) << '\n';
                } else {
                    out << fmt(r.mrc_deg) << ',' << r.n_e << ',' << r.seed << ',' << fmt(r.accuracy) << '\n';
                }
            }
            break;
        case FigureKind::Fig4: {
            auto sizes = o.sizes;
            const std::size_t full = bundle.splits.at("calibration").size();
            std::erase_if(sizes, [&](std::size_t s) { return s == 0 || s >= full; });
            sizes.push_back(full);
            SearchSpec spec = o.spec;
            spec.plan = plan;
            spec.workers = o.workers;
            out << "method,calibration_size,test_ece,test_accuracy\n";
            for (const auto& r : fig4_efficiency(bundle, spec, sizes)) {
                out << r.method << ',' << r.size << ',' << fmt(r.test_ece) << ',' << fmt(r.test_accuracy) << '\n';
            }
            break;
        }
        case FigureKind::Angles: {
            const auto study = angle_study(bundle, plan, o.bin_width_deg, o.workers);
            out << "variant,bin_center_deg,count\n";
            for (const auto& r : study.histogram) {
                out << r.variant << ',' << fmt(r.bin_center_deg) << ',' << r.count << '\n';
            }
            break;
        }
    }
    if (!out) throw FormatError("write failed for " + out_path.string());
}

void to_json(nlohmann::json& j, const MonteCarloModeReport& r) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [k, c] : r.histogram) hist.push_back({{"center_deg", k * r.bin_width_deg}, {"count", c}});
    j = nlohmann::json{{"n", r.n},
                       {"psi_deg", r.psi_deg},
                       {"theta_deg", r.theta_deg},
                       {"samples", r.samples},
                       {"bin_width_deg", r.bin_width_deg},
                       {"empirical_mode_deg", r.empirical_mode_deg},
                       {"closed_form_mode_deg", r.closed_form_mode_deg},
                       {"gap_deg", r.gap_deg},
                       {"mean_delta_deg", r.mean_delta_deg},
                       {"histogram", hist}};
}

}  // namespace tna
