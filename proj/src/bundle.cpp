#include "tna/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <zlib.h>

#include "json.hpp"
#include "tna/rng.hpp"

namespace tna {

namespace fs = std::filesystem;
using nlohmann::json;

FeatureBundle::FeatureBundle() : counters_(std::make_shared<Counters>()) {}

void FeatureBundle::validate() const {
    layer.validate();
    if (features.cols() != layer.dim()) {
        throw DomainError("bundle features have width " + std::to_string(features.cols()) +
                          " but the layer expects " + std::to_string(layer.dim()));
    }
    if (labels.size() != static_cast<std::size_t>(features.rows())) {
        throw DomainError("bundle has " + std::to_string(features.rows()) + " feature rows but " +
                          std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= layer.classes()) {
            throw DomainError("label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " is outside [0, C)");
        }
    }
    std::map<std::size_t, std::string> owner;
    for (const auto& [name, idx] : splits) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] >= labels.size()) {
                throw DomainError("split '" + name + "' index " + std::to_string(idx[k]) +
                                  " is out of range");
            }
            if (k > 0 && idx[k] <= idx[k - 1]) {
                throw DomainError("split '" + name + "' must be strictly increasing");
            }
            auto [it, fresh] = owner.emplace(idx[k], name);
            if (!fresh) {
                throw DomainError("splits '" + it->second + "' and '" + name +
                                  "' overlap at index " + std::to_string(idx[k]));
            }
        }
    }
}

SplitData FeatureBundle::view(const std::string& split) const {
    const auto it = splits.find(split);
    if (it == splits.end()) throw DomainError("bundle has no split named '" + split + "'");
    {
        std::lock_guard lock(counters_->mutex);
        ++counters_->reads[split];
    }
    SplitData out;
    out.indices = it->second;
    out.features.resize(static_cast<Eigen::Index>(out.indices.size()), features.cols());
    out.labels.reserve(out.indices.size());
    for (std::size_t k = 0; k < out.indices.size(); ++k) {
        out.features.row(static_cast<Eigen::Index>(k)) =
            features.row(static_cast<Eigen::Index>(out.indices[k]));
        out.labels.push_back(labels[out.indices[k]]);
    }
    return out;
}

long FeatureBundle::reads(const std::string& split) const {
    std::lock_guard lock(counters_->mutex);
    const auto it = counters_->reads.find(split);
    return it == counters_->reads.end() ? 0 : it->second;
}

void FeatureBundle::reset_reads() const {
    std::lock_guard lock(counters_->mutex);
    counters_->reads.clear();
}

// ---- binary format -------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return v;
}

void put_f32(std::string& out, double x) {
    const float f = static_cast<float>(x);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

double get_f32(const char* p) {
    const std::uint32_t bits = get_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

std::uint32_t crc_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json array_entry(const std::string& file, const std::string& bytes, const std::string& dtype,
                 std::vector<long> shape) {
    return {{"file", file},
            {"offset", 0},
            {"length", bytes.size()},
            {"crc32", crc_of(bytes)},
            {"dtype", dtype},
            {"shape", shape}};
}

// Reads one array payload and checks size and checksum against the manifest.
std::string load_array(const fs::path& dir, const json& manifest, const std::string& name,
                       std::size_t expected_bytes) {
    if (!manifest.contains("arrays") || !manifest["arrays"].contains(name)) {
        throw FormatError("manifest has no entry for array '" + name + "'");
    }
    const json& e = manifest["arrays"][name];
    const auto file = e.at("file").get<std::string>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("length").get<std::size_t>();
    const auto crc = e.at("crc32").get<std::uint32_t>();
    if (length != expected_bytes) {
        throw FormatError("array '" + name + "' declares " + std::to_string(length) +
                          " bytes but the shape needs " + std::to_string(expected_bytes));
    }
    const std::string raw = read_file(dir / file);
    if (raw.size() < offset + length) {
        throw TruncatedError("array '" + name + "' in " + file + " is truncated: " +
                             std::to_string(raw.size()) + " bytes, need " +
                             std::to_string(offset + length));
    }
    std::string bytes = raw.substr(offset, length);
    if (crc_of(bytes) != crc) {
        throw ChecksumError(name, "checksum mismatch for array '" + name + "'");
    }
    return bytes;
}

}  // namespace

void save_bundle(const FeatureBundle& b, const fs::path& dir) {
    b.validate();
    fs::create_directories(dir);
    const auto m = b.samples();
    const auto n = b.dim();
    const auto c = b.classes();

    std::string features, labels, weights, bias;
    features.reserve(static_cast<std::size_t>(m * n * 4));
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) put_f32(features, b.features(i, j));
    }
    for (int y : b.labels) put_u32(labels, static_cast<std::uint32_t>(y));
    for (Eigen::Index k = 0; k < c; ++k) {
        for (Eigen::Index j = 0; j < n; ++j) put_f32(weights, b.layer.weights(j, k));
    }
    for (Eigen::Index k = 0; k < c; ++k) put_f32(bias, b.layer.bias(k));

    json manifest{{"format_version", kBundleFormatVersion},
                  {"m", m},
                  {"n", n},
                  {"C", c},
                  {"endianness", "little"},
                  {"arrays",
                   {{"features", array_entry("features.bin", features, "float32", {m, n})},
                    {"labels", array_entry("labels.bin", labels, "uint32", {m})},
                    {"weights", array_entry("weights.bin", weights, "float32", {c, n})},
                    {"bias", array_entry("bias.bin", bias, "float32", {c})}}},
                  {"splits", b.splits},
                  {"metadata", b.metadata}};

    write_file(dir / "features.bin", features);
    write_file(dir / "labels.bin", labels);
    write_file(dir / "weights.bin", weights);
    write_file(dir / "bias.bin", bias);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

FeatureBundle load_bundle(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json is not valid JSON: " + std::string(e.what()));
    }
    FeatureBundle b;
    try {
        const int version = manifest.at("format_version").get<int>();
        if (version != kBundleFormatVersion) {
            throw VersionError("bundle format version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(kBundleFormatVersion) + ")");
        }
        if (manifest.value("endianness", std::string("little")) != "little") {
            throw FormatError("only little-endian bundles are supported");
        }
        const auto m = manifest.at("m").get<long>();
        const auto n = manifest.at("n").get<long>();
        const auto c = manifest.at("C").get<long>();
        if (m < 0 || n < 1 || c < 2) throw FormatError("manifest has invalid dimensions");
        const auto um = static_cast<std::size_t>(m), un = static_cast<std::size_t>(n),
                   uc = static_cast<std::size_t>(c);

        const std::string features = load_array(dir, manifest, "features", um * un * 4);
        const std::string labels = load_array(dir, manifest, "labels", um * 4);
        const std::string weights = load_array(dir, manifest, "weights", uc * un * 4);
        const std::string bias = load_array(dir, manifest, "bias", uc * 4);

        b.features.resize(m, n);
        for (long i = 0; i < m; ++i) {
            for (long j = 0; j < n; ++j) b.features(i, j) = get_f32(features.data() + 4 * (i * n + j));
        }
        b.labels.resize(um);
        for (std::size_t i = 0; i < um; ++i) {
            const std::uint32_t y = get_u32(labels.data() + 4 * i);
            if (y >= uc) throw FormatError("label " + std::to_string(y) + " is outside [0, C)");
            b.labels[i] = static_cast<int>(y);
        }
        b.layer.weights.resize(n, c);
        for (long k = 0; k < c; ++k) {
            for (long j = 0; j < n; ++j) b.layer.weights(j, k) = get_f32(weights.data() + 4 * (k * n + j));
        }
        b.layer.bias.resize(c);
        for (long k = 0; k < c; ++k) b.layer.bias(k) = get_f32(bias.data() + 4 * k);

        if (manifest.contains("splits")) {
            b.splits = manifest["splits"].get<std::map<std::string, std::vector<std::size_t>>>();
        }
        if (manifest.contains("metadata")) {
            b.metadata = manifest["metadata"].get<std::map<std::string, std::string>>();
        }
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest: " + std::string(e.what()));
    }
    try {
        b.validate();
    } catch (const DomainError& e) {
        throw FormatError(std::string("bundle failed validation: ") + e.what());
    }
    return b;
}

// ---- splits and CSV ------------------------------------------------------

std::map<std::string, std::vector<std::size_t>> assign_splits(std::size_t m, std::uint64_t seed) {
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    SeededRng rng(seed, 4);
    for (std::size_t i = m; i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    const auto cut = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(m)));
    std::map<std::string, std::vector<std::size_t>> splits;
    splits["test"].assign(order.begin(), order.begin() + static_cast<long>(cut));
    splits["calibration"].assign(order.begin() + static_cast<long>(cut),
                                 order.begin() + static_cast<long>(2 * cut));
    splits["train"].assign(order.begin() + static_cast<long>(2 * cut), order.end());
    for (auto& [name, idx] : splits) std::sort(idx.begin(), idx.end());
    return splits;
}

namespace {

std::vector<std::vector<double>> read_csv_rows(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t", used) != std::string::npos) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
            if (!numeric) break;
        }
        if (!numeric) {
            if (rows.empty() && line_no == 1) continue;  // header
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": non-numeric cell");
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": expected " + std::to_string(rows.front().size()) + " columns");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

FeatureBundle import_csv(const fs::path& features_csv, const fs::path& layer_csv,
                         std::uint64_t seed) {
    const auto data = read_csv_rows(features_csv);
    const auto head = read_csv_rows(layer_csv);
    if (data.empty()) throw FormatError(features_csv.string() + " has no rows");
    if (head.size() < 2) throw FormatError(layer_csv.string() + " needs one row per class (C >= 2)");
    const auto n = static_cast<Eigen::Index>(data.front().size()) - 1;
    if (n < 1) throw FormatError("feature rows need a label and at least one coordinate");
    if (static_cast<Eigen::Index>(head.front().size()) != n + 1) {
        throw FormatError("layer rows must hold a bias and " + std::to_string(n) + " weights");
    }
    FeatureBundle b;
    const auto m = static_cast<Eigen::Index>(data.size());
    const auto c = static_cast<Eigen::Index>(head.size());
    b.features.resize(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double y = data[static_cast<std::size_t>(i)][0];
        if (y < 0 || y != std::floor(y) || y >= static_cast<double>(c)) {
            throw FormatError("row " + std::to_string(i) + " has invalid label");
        }
        b.labels.push_back(static_cast<int>(y));
        for (Eigen::Index j = 0; j < n; ++j) {
            b.features(i, j) = to_float(data[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)]);
        }
    }
    b.layer.weights.resize(n, c);
    b.layer.bias.resize(c);
    for (Eigen::Index k = 0; k < c; ++k) {
        const auto& row = head[static_cast<std::size_t>(k)];
        b.layer.bias(k) = to_float(row[0]);
        for (Eigen::Index j = 0; j < n; ++j) b.layer.weights(j, k) = to_float(row[static_cast<std::size_t>(j + 1)]);
    }
    b.splits = assign_splits(static_cast<std::size_t>(m), seed);
    b.metadata = {{"source", "csv"},
                  {"features_csv", features_csv.filename().string()},
                  {"layer_csv", layer_csv.filename().string()},
                  {"split_seed", std::to_string(seed)}};
    b.validate();
    return b;
}

// ---- synthetic generator -------------------------------------------------

std::string to_string(NoiseModel noise) {
    return noise == NoiseModel::ClassSpan ? "class-span" : "isotropic";
}

NoiseModel noise_model_from_string(const std::string& name) {
    if (name == "class-span") return NoiseModel::ClassSpan;
    if (name == "isotropic") return NoiseModel::Isotropic;
    throw DomainError("unknown noise model '" + name + "' (class-span | isotropic)");
}

FeatureBundle synth_generate(const SynthSpec& s) {
    if (s.n < 2) throw DomainError("synth: n must be >= 2");
    if (s.classes < 2) throw DomainError("synth: C must be >= 2");
    if (s.m < s.classes) throw DomainError("synth: m must be >= C");
    if (!(s.separation > 0.0) || !std::isfinite(s.separation)) {
        throw DomainError("synth: class separation must be positive");
    }
    if (!(s.weight_scale > 0.0) || !std::isfinite(s.weight_scale)) {
        throw DomainError("synth: weight scale must be positive");
    }
    if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma)) {
        throw DomainError("synth: noise sigma must be >= 0");
    }
    const Eigen::Index n = s.n, c = s.classes, m = s.m;

    SeededRng mean_rng(s.seed, 1);
    Matrix means(n, c);
    for (Eigen::Index k = 0; k < c; ++k) {
        Vector g(n);
        do {
            for (Eigen::Index j = 0; j < n; ++j) g(j) = mean_rng.normal();
        } while (g.norm() == 0.0);
        means.col(k) = g.normalized();
    }

    Matrix basis;
    if (s.noise == NoiseModel::ClassSpan) {
        const Eigen::Index r = std::min(n, c);
        basis = Eigen::HouseholderQR<Matrix>(means).householderQ() * Matrix::Identity(n, r);
    }

    FeatureBundle b;
    SeededRng label_rng(s.seed, 2);
    SeededRng noise_rng(s.seed, 3);
    b.features.resize(m, n);
    b.labels.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const int y = static_cast<int>(label_rng.uniform_index(static_cast<std::uint64_t>(c)));
        b.labels[static_cast<std::size_t>(i)] = y;
        Vector z = s.separation * means.col(y);
        if (s.noise_sigma > 0.0) {
            const Eigen::Index dims = s.noise == NoiseModel::ClassSpan ? basis.cols() : n;
            Vector g(dims);
            for (Eigen::Index j = 0; j < dims; ++j) g(j) = noise_rng.normal();
            if (s.noise == NoiseModel::ClassSpan) {
                z += s.noise_sigma * (basis * g);
            } else {
                z += s.noise_sigma * g;
            }
        }
        b.features.row(i) = z.transpose().unaryExpr([](double x) { return to_float(x); });
    }

    const double bayes = s.noise_sigma > 0.0 ? s.separation / (s.noise_sigma * s.noise_sigma)
                                             : s.separation;
    b.layer.weights = (s.weight_scale * bayes * means).unaryExpr([](double x) { return to_float(x); });
    b.layer.bias = Vector::Zero(c);
    b.splits = assign_splits(static_cast<std::size_t>(m), s.seed);
    b.metadata = {{"source", "synth"},
                  {"n", std::to_string(s.n)},
                  {"C", std::to_string(s.classes)},
                  {"m", std::to_string(s.m)},
                  {"separation", std::to_string(s.separation)},
                  {"weight_scale", std::to_string(s.weight_scale)},
                  {"noise_sigma", std::to_string(s.noise_sigma)},
                  {"noise_model", to_string(s.noise)},
                  {"seed", std::to_string(s.seed)}};
    b.validate();
    return b;
}

}  // namespace tna
