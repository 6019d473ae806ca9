#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "tna/bundle.hpp"
#include "tna/errors.hpp"
#include "tna/metrics.hpp"

using namespace tna;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tna_bundle_test_" + name);
    fs::remove_all(p);
    return p;
}

SynthSpec small_spec() {
    SynthSpec s;
    s.n = 16;
    s.classes = 5;
    s.m = 400;
    return s;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

void require_same(const FeatureBundle& a, const FeatureBundle& b) {
    CHECK(bit_equal(a.features, b.features));
    CHECK(bit_equal(a.layer.weights, b.layer.weights));
    CHECK(bit_equal(a.layer.bias, b.layer.bias));
    CHECK(a.labels == b.labels);
    CHECK(a.splits == b.splits);
}

nlohmann::json read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    return nlohmann::json::parse(in);
}

void write_manifest(const fs::path& dir, const nlohmann::json& j) {
    std::ofstream(dir / "manifest.json") << j.dump(2);
}

}  // namespace

TEST_CASE("save then load is bit exact") {
    const auto b = synth_generate(small_spec());
    const auto dir = scratch("roundtrip");
    save_bundle(b, dir);
    for (const char* f : {"manifest.json", "features.bin", "labels.bin", "weights.bin", "bias.bin"}) {
        CHECK(fs::exists(dir / f));
    }
    const auto back = load_bundle(dir);
    require_same(b, back);
    CHECK(back.metadata == b.metadata);
    fs::remove_all(dir);
}

TEST_CASE("manifest layout") {
    const auto b = synth_generate(small_spec());
    const auto dir = scratch("manifest");
    save_bundle(b, dir);
    const auto j = read_manifest(dir);
    CHECK(j.at("format_version") == kBundleFormatVersion);
    CHECK(j.at("m") == 400);
    CHECK(j.at("n") == 16);
    CHECK(j.at("C") == 5);
    CHECK(j.at("endianness") == "little");
    const auto& w = j.at("arrays").at("weights");
    CHECK(w.at("shape") == nlohmann::json::array({5, 16}));
    CHECK(w.at("length") == 5 * 16 * 4);
    CHECK(fs::file_size(dir / "features.bin") == 400u * 16u * 4u);
    CHECK(fs::file_size(dir / "labels.bin") == 400u * 4u);

    // weights.bin holds class vectors as rows: the first float is w_0[0].
    std::ifstream in(dir / "weights.bin", std::ios::binary);
    float first = 0, second_row = 0;
    in.read(reinterpret_cast<char*>(&first), 4);
    in.seekg(16 * 4);
    in.read(reinterpret_cast<char*>(&second_row), 4);
    CHECK(static_cast<double>(first) == b.layer.weights(0, 0));
    CHECK(static_cast<double>(second_row) == b.layer.weights(0, 1));
    fs::remove_all(dir);
}

TEST_CASE("corrupted checksum names the array") {
    const auto dir = scratch("checksum");
    save_bundle(synth_generate(small_spec()), dir);
    auto j = read_manifest(dir);
    j["arrays"]["weights"]["crc32"] = j["arrays"]["weights"]["crc32"].get<std::uint64_t>() ^ 1u;
    write_manifest(dir, j);
    try {
        load_bundle(dir);
        FAIL("expected a checksum error");
    } catch (const ChecksumError& e) {
        CHECK(e.array() == "weights");
        CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("corrupted payload is caught") {
    const auto dir = scratch("payload");
    save_bundle(synth_generate(small_spec()), dir);
    {
        std::fstream f(dir / "features.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        const char junk = 0x5a;
        f.write(&junk, 1);
    }
    CHECK_THROWS_AS(load_bundle(dir), ChecksumError);
    fs::remove_all(dir);
}

TEST_CASE("version mismatch") {
    const auto dir = scratch("version");
    save_bundle(synth_generate(small_spec()), dir);
    auto j = read_manifest(dir);
    j["format_version"] = kBundleFormatVersion + 1;
    write_manifest(dir, j);
    CHECK_THROWS_AS(load_bundle(dir), VersionError);
    fs::remove_all(dir);
}

TEST_CASE("truncated array") {
    const auto dir = scratch("truncated");
    save_bundle(synth_generate(small_spec()), dir);
    fs::resize_file(dir / "labels.bin", 100);
    CHECK_THROWS_AS(load_bundle(dir), TruncatedError);
    fs::remove_all(dir);
}

TEST_CASE("load errors are distinct types") {
    CHECK_FALSE(std::is_base_of_v<ChecksumError, VersionError>);
    CHECK_FALSE(std::is_base_of_v<VersionError, TruncatedError>);
    CHECK_FALSE(std::is_base_of_v<TruncatedError, ChecksumError>);
    CHECK_THROWS_AS(load_bundle(scratch("missing")), FormatError);
}

TEST_CASE("overlapping splits are rejected at load and construction") {
    auto b = synth_generate(small_spec());
    b.splits["test"].push_back(b.splits["calibration"].front());
    std::sort(b.splits["test"].begin(), b.splits["test"].end());
    CHECK_THROWS_AS(b.validate(), DomainError);

    auto good = synth_generate(small_spec());
    const auto dir = scratch("overlap");
    save_bundle(good, dir);
    auto j = read_manifest(dir);
    j["splits"]["test"] = j["splits"]["calibration"];
    write_manifest(dir, j);
    CHECK_THROWS_AS(load_bundle(dir), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("validation catches shape and range errors") {
    auto b = synth_generate(small_spec());
    b.labels[3] = 5;
    CHECK_THROWS_AS(b.validate(), DomainError);
    b = synth_generate(small_spec());
    b.splits["test"].push_back(400);
    CHECK_THROWS_AS(b.validate(), DomainError);
    b = synth_generate(small_spec());
    b.labels.pop_back();
    CHECK_THROWS_AS(b.validate(), DomainError);
}

TEST_CASE("three sample CSV import matches the binary route") {
    const auto dir = scratch("csv");
    fs::create_directories(dir);
    std::ofstream(dir / "features.csv") << "label,z0,z1\n0,1.5,-2\n1,0.25,3\n1,-1,0.125\n";
    std::ofstream(dir / "layer.csv") << "bias,w0,w1\n0.5,1,0\n-0.5,0,1\n";
    const auto imported = import_csv(dir / "features.csv", dir / "layer.csv", 3);

    FeatureBundle manual;
    manual.features.resize(3, 2);
    manual.features << 1.5, -2, 0.25, 3, -1, 0.125;
    manual.labels = {0, 1, 1};
    manual.layer.weights = Matrix::Identity(2, 2);
    manual.layer.bias.resize(2);
    manual.layer.bias << 0.5, -0.5;
    manual.splits = assign_splits(3, 3);
    save_bundle(manual, dir / "bin");
    const auto binary = load_bundle(dir / "bin");
    require_same(imported, binary);
    fs::remove_all(dir);
}

TEST_CASE("CSV import rejects malformed rows") {
    const auto dir = scratch("csvbad");
    fs::create_directories(dir);
    std::ofstream(dir / "features.csv") << "0,1,2\n1,3\n";
    std::ofstream(dir / "layer.csv") << "0,1,0\n0,0,1\n";
    CHECK_THROWS_AS(import_csv(dir / "features.csv", dir / "layer.csv", 0), FormatError);
    std::ofstream(dir / "features.csv") << "0,1,2\n7,3,4\n";
    CHECK_THROWS_AS(import_csv(dir / "features.csv", dir / "layer.csv", 0), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("split assignment") {
    const auto s = assign_splits(10000, 7);
    CHECK(s.at("test").size() == 2000);
    CHECK(s.at("calibration").size() == 2000);
    CHECK(s.at("train").size() == 6000);
    std::vector<int> seen(10000, 0);
    for (const auto& [name, idx] : s) {
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        for (auto i : idx) ++seen[i];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    CHECK(assign_splits(10000, 7) == s);
    CHECK(assign_splits(10000, 8) != s);
}

TEST_CASE("synthetic generator is deterministic") {
    const auto a = synth_generate(small_spec());
    const auto b = synth_generate(small_spec());
    require_same(a, b);
    auto other = small_spec();
    other.seed = 8;
    CHECK_FALSE(bit_equal(synth_generate(other).features, a.features));
    CHECK(a.metadata.at("source") == "synth");
    CHECK(a.metadata.at("C") == "5");
}

TEST_CASE("noiseless limit classifies perfectly and grows confident") {
    auto s = small_spec();
    s.noise_sigma = 0.0;
    s.separation = 0.5;
    double prev = 0.0;
    for (double scale : {1.0, 3.0, 10.0, 30.0, 100.0}) {
        s.weight_scale = scale;
        const auto b = synth_generate(s);
        const auto r = evaluate(b.layer.weights, b.layer.bias, CalibrationMap(IdentityMap{}), b.features, b.labels);
        CHECK(r.accuracy == 1.0);
        CHECK(r.mean_confidence > prev);
        prev = r.mean_confidence;
    }
    CHECK(prev > 0.999);
}

TEST_CASE("weight scale sharpens confidence without moving predictions") {
    auto s = small_spec();
    s.weight_scale = 1.0;
    const auto one = synth_generate(s);
    s.weight_scale = 3.0;
    const auto three = synth_generate(s);
    CHECK(bit_equal(one.features, three.features));
    const auto split = one.view("test");
    const CalibrationMap id(IdentityMap{});
    const auto r1 = evaluate(one.layer.weights, one.layer.bias, id, split.features, split.labels);
    const auto r3 = evaluate(three.layer.weights, three.layer.bias, id, split.features, split.labels);
    CHECK(r3.accuracy == r1.accuracy);
    CHECK(r3.mean_confidence > r1.mean_confidence);
}

TEST_CASE("uniform positive scaling never changes a prediction") {
    const auto b = synth_generate(small_spec());
    const Matrix base = logits_batch(b.layer.weights, b.layer.bias, b.features);
    for (double k : {0.01, 0.5, 2.0, 100.0}) {
        const Matrix scaled = logits_batch(k * b.layer.weights, b.layer.bias, b.features);
        for (Eigen::Index i = 0; i < base.rows(); ++i) {
            Eigen::Index p = 0, q = 0;
            base.row(i).maxCoeff(&p);
            scaled.row(i).maxCoeff(&q);
            REQUIRE(p == q);
        }
    }
}

TEST_CASE("synth-A is overconfident on its test split") {
    const auto b = synth_generate(synth_a());
    CHECK(b.samples() == 10000);
    CHECK(b.dim() == 512);
    CHECK(b.classes() == 20);
    const auto t = b.view("test");
    const auto r = evaluate(b.layer.weights, b.layer.bias, CalibrationMap(IdentityMap{}), t.features, t.labels);
    CHECK(r.mean_confidence - r.accuracy >= 0.05);
}

TEST_CASE("degenerate generator parameters") {
    auto s = small_spec();
    s.n = 1;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    s = small_spec();
    s.classes = 1;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    s = small_spec();
    s.m = 3;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    s = small_spec();
    s.separation = 0;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    s = small_spec();
    s.weight_scale = -1;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    s = small_spec();
    s.noise_sigma = -0.1;
    CHECK_THROWS_AS(synth_generate(s), DomainError);
    CHECK(noise_model_from_string("isotropic") == NoiseModel::Isotropic);
    CHECK_THROWS_AS(noise_model_from_string("pink"), DomainError);
}

TEST_CASE("isotropic noise model") {
    auto s = small_spec();
    s.noise = NoiseModel::Isotropic;
    const auto b = synth_generate(s);
    CHECK(b.metadata.at("noise_model") == "isotropic");
    CHECK_FALSE(bit_equal(b.features, synth_generate(small_spec()).features));
}

TEST_CASE("split reads are counted and shared by copies") {
    const auto b = synth_generate(small_spec());
    CHECK(b.reads("test") == 0);
    const auto v = b.view("calibration");
    CHECK(v.size() == 80);
    CHECK(v.features.row(0) == b.features.row(static_cast<Eigen::Index>(v.indices[0])));
    CHECK(v.labels[0] == b.labels[v.indices[0]]);
    const FeatureBundle copy = b;
    copy.view("test");
    CHECK(b.reads("test") == 1);
    CHECK(b.reads("calibration") == 1);
    b.reset_reads();
    CHECK(copy.reads("calibration") == 0);
    CHECK_THROWS_AS(b.view("validation"), DomainError);
}
