#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "titan/commands.hpp"

using namespace titan;
using namespace titan::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "titan_cli_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

CommandOptions options(const fs::path& out, std::vector<std::string> overrides = {}) {
    CommandOptions o;
    o.out = out.string();
    o.overrides = std::move(overrides);
    return o;
}

const std::vector<std::string> kTinyRun{"rounds=3",      "stream_velocity=20", "batch_size=4",
                                        "buffer_capacity=8", "test_size=50",   "hidden=6",
                                        "dim=4",         "num_classes=3"};

}  // namespace

TEST_CASE("config files") {
    std::istringstream in(
        "# comment\n"
        "strategies = cis, rs\n"
        "batch_size = 12   # trailing\n"
        "stream_velocity = 120\n"
        "noise = label\n"
        "noise_fraction = 0.25\n"
        "class_spread = 0.5, 2\n"
        "seeds = 3, 4\n");
    const auto c = parse_config(in);
    CHECK(c.strategies == std::vector<Strategy>{Strategy::cis, Strategy::rs});
    CHECK(c.batch_size == 12);
    CHECK(c.velocity == 120);
    CHECK(c.noise.kind == NoiseKind::label_flip);
    CHECK(c.mixture.spreads == std::vector<double>{0.5, 2.0});
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});

    const auto p = c.pipeline(Strategy::cis, 3);
    CHECK(p.batch_size == 12);
    CHECK(p.filter.capacity == c.buffer_capacity);
    CHECK(p.seed == 3);
}

TEST_CASE("config errors name the key") {
    auto fails_on = [](const std::string& text, const std::string& key) {
        std::istringstream in(text);
        try {
            parse_config(in);
        } catch (const ConfigError& e) {
            CHECK(e.key() == key);
            return;
        }
        FAIL("no ConfigError for: " << text);
    };
    fails_on("bogus = 1\n", "bogus");
    fails_on("batch_size = ten\n", "batch_size");
    fails_on("batch_size = 50\nstream_velocity = 20\n", "stream_velocity");
    fails_on("strategy = best\n", "strategy");
    fails_on("noise_fraction = 1.5\n", "noise_fraction");
    fails_on("lr = -1\n", "lr");
}

TEST_CASE("run writes metrics and a summary") {
    const auto dir = scratch("run");
    std::ostringstream log;
    auto o = options(dir, kTinyRun);
    o.overrides.push_back("strategies=cis,hl");
    o.dump_plan = true;
    REQUIRE(cmd_run(o, log) == kOk);
    CHECK(fs::exists(dir / "metrics_rs_seed1.csv"));
    CHECK(fs::exists(dir / "metrics_cis_seed1.csv"));
    CHECK(fs::exists(dir / "metrics_hl_seed1.csv"));
    CHECK(fs::exists(dir / "params_cis_seed1.bin"));
    CHECK(fs::exists(dir / "plans_cis_seed1.jsonl"));

    const auto summary = json::parse(slurp(dir / "summary.json"));
    REQUIRE(summary["runs"].size() == 3);
    CHECK(summary["runs"][0]["strategy"] == "rs");
    CHECK(summary["runs"][0]["implicit"] == true);
    CHECK(summary["strategies"].contains("cis"));

    // Header plus one line per round.
    const auto csv = slurp(dir / "metrics_cis_seed1.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("round,strategy,variance_closed_form", 0) == 0);
}

TEST_CASE("run is byte-reproducible") {
    const auto a = scratch("rep_a"), b = scratch("rep_b");
    std::ostringstream log;
    auto oa = options(a, kTinyRun), ob = options(b, kTinyRun);
    oa.seed = ob.seed = 17;
    REQUIRE(cmd_run(oa, log) == kOk);
    REQUIRE(cmd_run(ob, log) == kOk);
    for (const char* f : {"summary.json", "metrics_cis_seed17.csv", "metrics_rs_seed17.csv", "params_cis_seed17.bin"}) {
        CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
    }
}

TEST_CASE("configuration problems exit with 2") {
    const auto dir = scratch("bad");
    std::ostringstream log;
    CHECK(cmd_run(options(dir, {"batch_size=0"}), log) == kConfigError);
    CHECK(cmd_run(options(dir, {"no_such_key=1"}), log) == kConfigError);
    CHECK(cmd_run(options(dir, {"missing-equals"}), log) == kConfigError);
    CommandOptions missing;
    missing.config_path = (dir / "absent.cfg").string();
    CHECK(cmd_run(missing, log) == kConfigError);
    CHECK(log.str().find("no_such_key") != std::string::npos);
}

TEST_CASE("variance check on the default instance") {
    const auto dir = scratch("vc");
    std::ostringstream log;
    auto o = options(dir, {"mc_draws=20000"});
    o.seed = 42;
    CHECK(cmd_variance_check(o, log) == kOk);
    const auto r = json::parse(slurp(dir / "variance_check.json"));
    REQUIRE(r.size() == 1);
    CHECK(r[0]["passed"] == true);

    o.perturb_alloc = true;
    CHECK(cmd_variance_check(o, log) == kOk);
    const auto p = json::parse(slurp(dir / "variance_check.json"));
    CHECK(p.dump().find("\"perturbation_worse\":true") != std::string::npos);
}

TEST_CASE("variance check edge cases") {
    const auto dir = scratch("vc_edge");
    std::ostringstream log;
    auto single = options(dir, {"instance_classes=1", "mc_draws=5000"});
    CHECK(cmd_variance_check(single, log) == kOk);
    CHECK(slurp(dir / "variance_check.json").find("single class") != std::string::npos);

    auto huge = options(dir, {"instance_classes=8", "instance_batch=60", "mc_draws=100"});
    CHECK(cmd_variance_check(huge, log) == kConfigError);
}

TEST_CASE("variance check is byte-reproducible") {
    const auto a = scratch("vc_a"), b = scratch("vc_b");
    std::ostringstream log;
    auto oa = options(a, {"mc_draws=5000"}), ob = options(b, {"mc_draws=5000"});
    oa.seed = ob.seed = 9;
    REQUIRE(cmd_variance_check(oa, log) == kOk);
    REQUIRE(cmd_variance_check(ob, log) == kOk);
    CHECK(slurp(a / "variance_check.json") == slurp(b / "variance_check.json"));
}

TEST_CASE("allocation check") {
    const auto dir = scratch("ac");
    std::ostringstream log;
    auto o = options(dir);
    o.seed = 5;
    CHECK(cmd_alloc_check(o, log) == kOk);
    CHECK(json::parse(slurp(dir / "alloc_check.json"))[0]["passed"] == true);
}

TEST_CASE("gen-data") {
    const std::vector<std::string> small{"samples=10", "num_classes=2", "dim=2", "class_spread=1", "test_size=5"};
    SUBCASE("reproducible bytes") {
        const auto a = scratch("gd_a"), b = scratch("gd_b");
        std::ostringstream log;
        auto oa = options(a, small), ob = options(b, small);
        oa.seed = ob.seed = 7;
        REQUIRE(cmd_gen_data(oa, log) == kOk);
        REQUIRE(cmd_gen_data(ob, log) == kOk);
        const auto text = slurp(a / "stream.csv");
        CHECK(text == slurp(b / "stream.csv"));
        CHECK(std::count(text.begin(), text.end(), '\n') == 11);
        CHECK(slurp(a / "test.csv") == slurp(b / "test.csv"));
    }
    SUBCASE("zero spread collapses each class to its mean") {
        const auto dir = scratch("gd_zero");
        std::ostringstream log;
        auto o = options(dir, {"samples=200", "class_spread=0"});
        REQUIRE(cmd_gen_data(o, log) == kOk);
        const auto rows = read_samples_csv((dir / "stream.csv").string());
        std::map<std::size_t, linalg::Vector> first;
        for (const auto& s : rows) {
            auto [it, fresh] = first.emplace(s.label, s.features);
            CHECK(it->second == s.features);
        }
        CHECK(first.size() == 4);
    }
    SUBCASE("label flips against the clean reference") {
        const auto clean = scratch("gd_clean"), noisy = scratch("gd_noisy");
        std::ostringstream log;
        REQUIRE(cmd_gen_data(options(clean, {"samples=1000"}), log) == kOk);
        REQUIRE(cmd_gen_data(options(noisy, {"samples=1000", "noise=label", "noise_fraction=0.4"}), log) == kOk);
        const auto a = read_samples_csv((clean / "stream.csv").string());
        const auto b = read_samples_csv((noisy / "stream.csv").string());
        REQUIRE(a.size() == 1000);
        std::size_t flipped = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].features == b[i].features);
            flipped += a[i].label != b[i].label;
        }
        // 400 +- 3 sd of Binomial(1000, 0.4)
        CHECK(std::abs(static_cast<double>(flipped) - 400.0) <= 3.0 * std::sqrt(240.0));
    }
    SUBCASE("unwritable output is a runtime failure") {
        const auto dir = scratch("gd_file");
        { std::ofstream(dir / "blocker") << "x"; }
        std::ostringstream log;
        CHECK(cmd_gen_data(options(dir / "blocker" / "sub", small), log) == kFailure);
    }
}

TEST_CASE("csv replay source") {
    const auto dir = scratch("replay");
    std::ostringstream log;
    REQUIRE(cmd_gen_data(options(dir, {"samples=300", "test_size=60"}), log) == kOk);
    const auto run_dir = dir / "out";
    auto o = options(run_dir, {"source=csv", "stream_csv=" + (dir / "stream.csv").string(),
                               "test_csv=" + (dir / "test.csv").string(), "rounds=2", "strategies=cis"});
    CHECK(cmd_run(o, log) == kOk);
    CHECK(cmd_run(options(run_dir, {"source=csv", "stream_csv=" + (dir / "nope.csv").string()}), log) ==
          kConfigError);
}
