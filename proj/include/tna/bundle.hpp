#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "tna/geometry.hpp"
#include "tna/tilt.hpp"

namespace tna {

inline constexpr int kBundleFormatVersion = 1;

/// Rows of one named split, copied out of a bundle.
struct SplitData {
    std::vector<std::size_t> indices;
    Matrix features;  ///< |indices| x n
    std::vector<int> labels;

    std::size_t size() const { return indices.size(); }
};

/// Penultimate features, labels, the classifier head and named index splits.
///
/// Reads through view() are counted per split name. Copies share the counters.
class FeatureBundle {
public:
    Matrix features;  ///< m x n
    std::vector<int> labels;
    LastLayer layer;
    std::map<std::string, std::vector<std::size_t>> splits;
    std::map<std::string, std::string> metadata;

    FeatureBundle();

    Eigen::Index samples() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }
    Eigen::Index classes() const { return layer.classes(); }

    /// Throws DomainError on shape mismatch, out-of-range labels or indices,
    /// unsorted or duplicated split indices, or calibration/test overlap.
    void validate() const;

    bool has_split(const std::string& name) const { return splits.count(name) > 0; }
    SplitData view(const std::string& split) const;

    long reads(const std::string& split) const;
    void reset_reads() const;

private:
    struct Counters {
        std::mutex mutex;
        std::map<std::string, long> reads;
    };
    std::shared_ptr<Counters> counters_;
};

void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& dir);
FeatureBundle load_bundle(const std::filesystem::path& dir);

/// Debug import. Features CSV rows: label, z_0 .. z_{n-1}. Layer CSV rows,
/// one per class: b_i, w_i0 .. w_i(n-1). An optional header line is skipped.
/// Splits are assigned with assign_splits(seed).
FeatureBundle import_csv(const std::filesystem::path& features_csv,
                         const std::filesystem::path& layer_csv, std::uint64_t seed);

/// Shuffles [0, m) with the seed and cuts test = first round(0.2 m),
/// calibration = next round(0.2 m), train = the rest. Each list is sorted.
std::map<std::string, std::vector<std::size_t>> assign_splits(std::size_t m, std::uint64_t seed);

/// Noise added to the class mean of each sample.
enum class NoiseModel {
    ClassSpan,  ///< isotropic inside the span of the class means
    Isotropic,  ///< isotropic in all n dimensions
};

struct SynthSpec {
    int n = 512;
    int classes = 20;
    int m = 10000;
    double separation = 3.0;
    double weight_scale = 3.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 7;
    NoiseModel noise = NoiseModel::ClassSpan;
};

/// The acceptance fixture.
inline SynthSpec synth_a() { return {}; }

/// Gaussian classes around unit-sphere means mu_i, z = separation mu_y + noise.
/// Weights are w_i = weight_scale (separation / sigma^2) mu_i with zero bias, so
/// weight_scale = 1 is the Bayes classifier of the generating model and larger
/// scales are overconfident. Values are rounded to float so the bundle
/// round-trips through the on-disk format exactly.
FeatureBundle synth_generate(const SynthSpec& spec);

std::string to_string(NoiseModel noise);
NoiseModel noise_model_from_string(const std::string& name);

}  // namespace tna
