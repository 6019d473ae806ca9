#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "tna/bundle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::current_path() / "cli_scratch";

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + TNA_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string path(const std::string& rel) { return "\"" + (kRoot / rel).string() + "\""; }

// synth-A is shared by the cases below; the small bundle keeps the rest fast.
void ensure_bundles() {
    static bool done = false;
    if (done) return;
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    REQUIRE(run("synth --out " + path("synth_a")) == 0);
    REQUIRE(run("synth --out " + path("small") + " --n 32 --classes 5 --m 600") == 0);
    done = true;
}

}  // namespace

TEST_CASE("synth then eval keeps the overconfident fixture contract") {
    ensure_bundles();
    REQUIRE(run("eval --bundle " + path("synth_a") + " --out " + path("base.json")) == 0);
    const auto r = read_json(kRoot / "base.json");
    CHECK(r.at("mean_confidence").get<double>() - r.at("accuracy").get<double>() >= 0.05);
    CHECK(r.at("samples") == 2000);
}

TEST_CASE("zero tilt then eval reproduces the untilted report") {
    ensure_bundles();
    REQUIRE(run("eval --bundle " + path("small") + " --out " + path("small_base.json")) == 0);
    REQUIRE(run("tilt --bundle " + path("small") + " --out " + path("small_t0") + " --target-mrc 0") == 0);
    CHECK(fs::exists(kRoot / "small_t0" / "provenance.json"));
    REQUIRE(run("eval --bundle " + path("small_t0") + " --out " + path("small_t0.json")) == 0);
    CHECK(slurp(kRoot / "small_base.json") == slurp(kRoot / "small_t0.json"));
}

TEST_CASE("calibrate then eval applies the fitted map") {
    ensure_bundles();
    REQUIRE(run("calibrate --bundle " + path("small") + " --map ts --out " + path("ts.json")) == 0);
    CHECK(read_json(kRoot / "ts.json").at("type") == "ts");
    REQUIRE(run("eval --bundle " + path("small") + " --map-file " + path("ts.json") + " --out " +
                path("ts_eval.json") + " --csv " + path("ts_eval.csv")) == 0);
    CHECK(read_json(kRoot / "ts_eval.json").at("map") == "ts");
    CHECK(slurp(kRoot / "ts_eval.csv").rfind("map,samples,accuracy,ece,adaece,nll,mean_confidence\nts,", 0) == 0);
}

TEST_CASE("search writes a result and curves") {
    ensure_bundles();
    REQUIRE(run("search --bundle " + path("small") + " --out " + path("search") +
                " --maps identity,ts --grid 0,30,60 --repeats 2") == 0);
    const auto j = read_json(kRoot / "search" / "result.json");
    CHECK(j.dump().find("best_theta_deg") != std::string::npos);
    CHECK(fs::exists(kRoot / "search" / "curve_r0.csv"));
    CHECK(fs::exists(kRoot / "search" / "curve_r1.csv"));
    CHECK(fs::exists(kRoot / "search" / "angle_curve_r0.csv"));
}

TEST_CASE("verify thm1 with defaults passes") {
    REQUIRE(run("verify --suite thm1 --out " + path("thm1.json")) == 0);
    const auto j = read_json(kRoot / "thm1.json");
    CHECK(j.dump().find("gap") != std::string::npos);
}

TEST_CASE("verify reports tolerance failures with exit 4") {
    CHECK(run("verify --suite thm1 --n 64 --samples 2000 --tolerance -1") == 4);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("tilt --bundle " + path("nope") + " --out " + path("x")) == 2);
    ensure_bundles();
    CHECK(run("tilt --bundle " + path("small") + " --out " + path("x") + " --target-mrc 120") == 2);
    CHECK(run("tilt --bundle " + path("small") + " --out " + path("x") + " --n-e 0") == 2);
    CHECK(run("search --bundle " + path("small") + " --mode bayes") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("data errors exit 3") {
    ensure_bundles();
    fs::copy(kRoot / "small", kRoot / "broken", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    {
        std::fstream f(kRoot / "broken" / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const char junk = 0x11;
        f.write(&junk, 1);
    }
    CHECK(run("eval --bundle " + path("broken")) == 3);
    CHECK(run("tilt --bundle " + path("small") + " --out " + path("sat") + " --target-mrc 89.9 --max-factors 50") == 3);
}

TEST_CASE("config file values are overridden by flags") {
    ensure_bundles();
    std::ofstream(kRoot / "cfg.json") << R"({"tilt": {"bundle": ")" << (kRoot / "small").string()
                                      << R"(", "out": ")" << (kRoot / "cfg_out").string()
                                      << R"(", "target_mrc": 20, "n_e": 2, "seed": 5}})";
    REQUIRE(run("--config " + path("cfg.json") + " tilt") == 0);
    auto prov = read_json(kRoot / "cfg_out" / "provenance.json");
    CHECK(prov.dump().find("\"n_e\":2") != std::string::npos);
    REQUIRE(run("--config " + path("cfg.json") + " tilt --n-e 3") == 0);
    prov = read_json(kRoot / "cfg_out" / "provenance.json");
    CHECK(prov.dump().find("\"n_e\":3") != std::string::npos);
}

TEST_CASE("identical flags give identical files") {
    ensure_bundles();
    for (const char* d : {"det1", "det2"}) {
        REQUIRE(run(std::string("tilt --bundle ") + path("small") + " --out " + path(d) + " --target-mrc 30 --seed 9") == 0);
    }
    for (const char* f : {"weights.bin", "bias.bin", "features.bin", "manifest.json", "provenance.json"}) {
        CHECK(slurp(kRoot / "det1" / f) == slurp(kRoot / "det2" / f));
    }
    REQUIRE(run("tilt --bundle " + path("small") + " --out " + path("det3") + " --target-mrc 30 --seed 10") == 0);
    CHECK(slurp(kRoot / "det1" / "weights.bin") != slurp(kRoot / "det3" / "weights.bin"));
}
