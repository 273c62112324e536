#include <doctest.h>

#include <stdexcept>
#include <cmath>
#include <algorithm>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "clicooper/checkpoint.hpp"
#include "clicooper/harness.hpp"

using namespace clicooper;
namespace fs = std::filesystem;

namespace {

// Shrunken configuration: every mechanism exercised, seconds not minutes.
harness::RunConfig small_config() {
    harness::RunConfig cfg;
    cfg.data.per_class = 60;
    cfg.data.test_per_class = 25;
    cfg.epochs = 8;
    cfg.wm_B = 128;
    cfg.wm_max_rounds = 400;
    cfg.batch_size = 64;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("config JSON round-trips and rejects unknown keys") {
    harness::RunConfig cfg = small_config();
    std::string text = harness::config_to_json(cfg);
    harness::RunConfig back = harness::config_from_json(text);
    CHECK(harness::config_to_json(back) == text);

    CHECK_THROWS_WITH_AS(harness::config_from_json("{\"bogus\": 1}"), doctest::Contains("unknown key"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(harness::config_from_json("{\"dp\": {\"epsilon\": \"soon\"}}"),
                         doctest::Contains("inf"), std::invalid_argument);

    harness::RunConfig inf_cfg = harness::config_from_json("{\"dp\": {\"epsilon\": \"inf\"}}");
    CHECK(std::isinf(inf_cfg.epsilon));
    CHECK(harness::config_to_json(inf_cfg).find("\"epsilon\": \"inf\"") != std::string::npos);
}

TEST_CASE("config validation catches inconsistent shapes") {
    harness::RunConfig cfg = small_config();
    cfg.trainer_widths.back().back() = 9; // != pseudo classes
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = small_config();
    cfg.g = {2, 2, 2}; // q entries required
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg = small_config();
    cfg.transport = "carrier-pigeon";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("make_blobs is deterministic with separated class means") {
    harness::DataConfig dc;
    dc.per_class = 10;
    dc.test_per_class = 5;
    auto a = harness::make_blobs(dc);
    auto b = harness::make_blobs(dc);
    CHECK(a.train_x.values == b.train_x.values);
    CHECK(a.train_y == b.train_y);
    CHECK(a.train_x.rows() == 40);
    CHECK(a.test_x.rows() == 20);

    // Spike structure: class means differ strongly on some coordinate.
    for (uint32_t c = 1; c < dc.q; ++c) {
        double max_gap = 0.0;
        for (uint32_t d = 0; d < dc.dim; ++d)
            max_gap = std::max(max_gap, std::abs(a.train_x.at(0, d) - a.train_x.at(c * 10, d)));
        CHECK(max_gap > dc.spike_value / 2);
    }
}

TEST_CASE("gamma_to_g reproduces the paper-style expansion grids") {
    CHECK(harness::gamma_to_g(2.0, 4) == std::vector<uint32_t>{2, 2, 2, 2});
    CHECK(harness::gamma_to_g(1.5, 4) == std::vector<uint32_t>{2, 2, 1, 1});
    CHECK(harness::gamma_to_g(2.5, 4) == std::vector<uint32_t>{3, 3, 2, 2});
    CHECK(harness::gamma_to_g(1.0, 3) == std::vector<uint32_t>{1, 1, 1});
    CHECK_THROWS_AS(harness::gamma_to_g(0.5, 4), std::invalid_argument);
}

TEST_CASE("run_experiment completes, verifies, and is bit-reproducible") {
    TmpDir dir_a("clicooper_run_a");
    TmpDir dir_b("clicooper_run_b");
    harness::RunConfig cfg = small_config();

    harness::RunRecord rec = harness::run_experiment(cfg, dir_a.str());
    CHECK(rec.verify_success);
    CHECK(rec.fail_stage == "none");
    CHECK(rec.acc_pre_embed >= 0.90);
    CHECK(rec.acc_post_embed >= rec.acc_pre_embed - 0.02);
    REQUIRE(rec.eta_per_link.size() == 3);
    for (double eta : rec.eta_per_link) CHECK(eta >= cfg.wm_eta_goal);

    for (const char* f : {"client.clwc", "trainer_1.clwc", "trainer_2.clwc", "trainer_3.clwc",
                          "cache.cldp", "manifest.json", "label_map.json", "report.json", "eval.json",
                          "metrics.csv", "config.json"})
        CHECK(fs::exists(dir_a.path / f));

    harness::RunRecord rec2 = harness::run_experiment(cfg, dir_b.str());
    CHECK(rec2.run_id == rec.run_id);
    for (const char* f : {"client.clwc", "trainer_1.clwc", "trainer_2.clwc", "trainer_3.clwc",
                          "cache.cldp", "report.json"})
        CHECK(io::read_file((dir_a.path / f).string()) == io::read_file((dir_b.path / f).string()));
}

TEST_CASE("run_experiment with lambda = 0 aborts at the embedding stage") {
    TmpDir dir("clicooper_run_lambda0");
    harness::RunConfig cfg = small_config();
    cfg.wm_lambda = 0.0;
    cfg.wm_max_rounds = 30;
    CHECK_THROWS_WITH_AS(harness::run_experiment(cfg, dir.str()), doctest::Contains("[embed]"),
                         std::runtime_error);
}

TEST_CASE("metrics schema is stable and the renderer aligns rows") {
    harness::RunRecord rec;
    rec.run_id = "run-test";
    rec.config = small_config();
    rec.embed_ms = {1.0, 2.0, 3.0};
    rec.verify_ms = {1.5, 2.5, 3.5};
    rec.eta_per_link = {1.0, 1.0, 1.0};

    std::string header = harness::metrics_csv_header();
    std::string row = harness::metrics_csv_row(rec);
    auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
    CHECK(count(header) == count(row));
    CHECK(header.rfind("schema_version", 0) == 0);

    std::string table = harness::render_metrics_table(header + "\n" + row + "\n");
    CHECK(table.find("run-test") != std::string::npos);
    CHECK(harness::render_metrics_table("").find("no records") != std::string::npos);
}

TEST_CASE("cluster experiment: clean activations cluster perfectly, protected ones do not") {
    harness::RunConfig cfg = small_config();
    cfg.data.per_class = 40;
    auto r = harness::cluster_experiment(cfg, 7);
    CHECK(r.baseline_accuracy == doctest::Approx(1.0));
    CHECK(r.baseline_k == cfg.data.q);
    CHECK(r.protected_accuracy < r.baseline_accuracy);
}

TEST_CASE("sweep produces one record per axis value") {
    TmpDir dir("clicooper_sweep");
    harness::RunConfig cfg = small_config();
    cfg.data.per_class = 40;
    cfg.epochs = 4;
    cfg.wm_B = 64;
    auto records = harness::sweep(cfg, "epsilon", {2.0, 5.0, 10.0}, dir.str());
    CHECK(records.size() == 3);
    std::string csv = slurp((dir.path / "metrics.csv").string());
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4); // header + 3 rows
    CHECK(fs::exists(dir.path / "epsilon_2" / "report.json"));
}
