// Command-line front end: run experiments, sweep parameters, verify
// released artifacts, and drive the three attack evaluations.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "clicooper/checkpoint.hpp"
#include "clicooper/harness.hpp"
#include "clicooper/rng.hpp"
#include "clicooper/verifier.hpp"

namespace fs = std::filesystem;
using namespace clicooper;
using nlohmann::json;

namespace {

harness::RunConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return harness::default_config();
    return harness::load_config(config_path);
}

void apply_seed_shift(harness::RunConfig& cfg, uint64_t seed) {
    if (seed == 0) return;
    cfg.data.seed = mix_seed(cfg.data.seed, seed);
    cfg.label_seed = mix_seed(cfg.label_seed, seed);
    cfg.expand_seed = mix_seed(cfg.expand_seed, seed);
    cfg.dp_seed = mix_seed(cfg.dp_seed, seed);
    cfg.encoder.seed = mix_seed(cfg.encoder.seed, seed);
    cfg.shuffle_seed = mix_seed(cfg.shuffle_seed, seed);
    cfg.wm_embed_seed = mix_seed(cfg.wm_embed_seed, seed);
    for (auto& s : cfg.trainer_seeds) s = mix_seed(s, seed);
}

double parse_eps(const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

void append_csv(const std::string& path, const std::string& header, const std::string& row) {
    bool fresh = !fs::exists(path);
    std::ofstream f(path, std::ios::app);
    if (fresh) f << header << "\n";
    f << row << "\n";
}

int cmd_verify(const std::string& dir, const std::string& manifest_path, double eta_override,
               const std::string& out_dir) {
    std::string mpath = manifest_path.empty() ? dir + "/manifest.json" : manifest_path;
    std::ifstream mf(mpath);
    if (!mf) throw std::runtime_error("cannot open manifest " + mpath);
    json manifest = json::parse(mf);
    std::string base = fs::path(mpath).parent_path().string();
    if (base.empty()) base = ".";

    dp::DpActivationBatch cache = dp::load_cache(base + "/" + manifest.at("cache").get<std::string>());
    std::vector<nn::Segment> ckpts;
    std::vector<verify::LinkSpec> specs;
    for (const auto& l : manifest.at("links")) {
        verify::LinkSpec spec;
        spec.index = l.at("i").get<uint32_t>();
        spec.nonce = l.at("mu").get<uint64_t>();
        spec.identity = l.at("id").get<std::string>();
        spec.selected = l.at("selected").get<uint32_t>();
        specs.push_back(spec);
        ckpts.push_back(io::load_checkpoint(base + "/" + l.at("checkpoint").get<std::string>()));
    }
    uint32_t B = manifest.at("B").get<uint32_t>();
    double eta_g = eta_override > 0.0 ? eta_override : manifest.at("eta_g").get<double>();
    double acc_threshold = manifest.value("acc_threshold", 0.0);

    verify::VerificationReport report;
    if (manifest.contains("eval") && fs::exists(base + "/" + manifest["eval"].get<std::string>())) {
        std::ifstream ef(base + "/" + manifest["eval"].get<std::string>());
        json eval = json::parse(ef);
        auto feats = eval.at("features").get<std::vector<std::vector<double>>>();
        auto groups = eval.at("groups").get<std::vector<std::vector<int32_t>>>();
        TensorF64 test_x = TensorF64::zeros(
            {static_cast<uint32_t>(feats.size()), static_cast<uint32_t>(feats.empty() ? 0 : feats[0].size())});
        for (size_t r = 0; r < feats.size(); ++r) test_x.set_row(r, feats[r]);
        nn::Segment client = io::load_checkpoint(base + "/" + manifest.at("client").get<std::string>());
        verify::AssembledModel model =
            verify::assemble(std::move(client), std::span<const nn::Segment>(ckpts.data(), ckpts.size()),
                             cache.params.clip_radius);
        report = verify::verify_full(model, std::span<const nn::Segment>(ckpts.data(), ckpts.size()), cache,
                                     specs, B, eta_g, &test_x, &groups, acc_threshold);
    } else {
        report =
            verify::verify_chain(std::span<const nn::Segment>(ckpts.data(), ckpts.size()), cache, specs, B, eta_g);
    }

    std::cout << verify::render_report_table(report);
    std::string json_text = verify::report_to_json(report);
    fs::create_directories(out_dir);
    write_text(out_dir + "/verify_report.json", json_text + "\n");
    return report.success ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"clicooper: serverless multi-client split learning with DP-protected activations,\n"
                 "secret label expansion, and hash-chained segment watermarks"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", transport_override, seed_str = "0";

    auto* run = app.add_subcommand("run", "run one end-to-end experiment");
    run->add_option("--config", config_path, "JSON config (defaults when omitted)");
    run->add_option("--out-dir", out_dir, "artifact directory");
    run->add_option("--transport", transport_override, "inproc|tcp")->check(CLI::IsMember({"inproc", "tcp", ""}));
    run->add_option("--seed", seed_str, "shift all seeds by this value");

    auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
    std::string axis;
    std::vector<std::string> values;
    sweep->add_option("--config", config_path, "JSON config");
    sweep->add_option("--axis", axis, "epsilon|gamma|B")->required()->check(CLI::IsMember({"epsilon", "gamma", "B"}));
    sweep->add_option("--values", values, "axis values (inf allowed for epsilon)")->required();
    sweep->add_option("--out-dir", out_dir, "artifact directory");
    sweep->add_option("--seed", seed_str, "shift all seeds by this value");

    auto* verify_cmd = app.add_subcommand("verify", "verify released artifacts against the manifest");
    std::string verify_dir = "out", manifest_path;
    double eta_override = 0.0;
    verify_cmd->add_option("--dir", verify_dir, "directory holding manifest.json and artifacts");
    verify_cmd->add_option("--manifest", manifest_path, "explicit manifest path");
    verify_cmd->add_option("--eta-g", eta_override, "override the detection threshold");
    verify_cmd->add_option("--out-dir", out_dir, "where to write verify_report.json");

    auto* attack = app.add_subcommand("attack", "run an adversarial evaluation");
    attack->require_subcommand(1);
    uint32_t trials = 5;
    bool use_dbscan = false;
    auto* cluster = attack->add_subcommand("cluster", "clustering label-matching attack");
    cluster->add_option("--config", config_path, "JSON config");
    cluster->add_option("--seed", seed_str, "base trial seed");
    cluster->add_option("--trials", trials, "number of seeded trials");
    cluster->add_flag("--dbscan", use_dbscan, "use DBSCAN instead of k-means");
    cluster->add_option("--out-dir", out_dir, "artifact directory");

    auto* invert = attack->add_subcommand("invert", "activation inversion attack");
    std::vector<std::string> eps_list{"inf", "10", "5", "2"};
    uint32_t targets = 32;
    invert->add_option("--config", config_path, "JSON config");
    invert->add_option("--seed", seed_str, "trial seed");
    invert->add_option("--epsilons", eps_list, "epsilon ladder");
    invert->add_option("--targets", targets, "reconstruction targets");
    invert->add_option("--out-dir", out_dir, "artifact directory");

    auto* extract = attack->add_subcommand("extract", "black-box model extraction attack");
    bool with_control = false;
    extract->add_option("--config", config_path, "JSON config");
    extract->add_option("--seed", seed_str, "trial seed");
    extract->add_flag("--control", with_control, "also run the true-mapping control condition");
    extract->add_option("--out-dir", out_dir, "artifact directory");

    auto* report = app.add_subcommand("report", "render metrics.csv as an aligned table");
    std::string csv_path = "out/metrics.csv";
    report->add_option("--csv", csv_path, "metrics csv path");

    CLI11_PARSE(app, argc, argv);

    try {
        uint64_t seed = std::stoull(seed_str);

        if (run->parsed()) {
            harness::RunConfig cfg = load_or_default(config_path);
            apply_seed_shift(cfg, seed);
            if (!transport_override.empty()) cfg.transport = transport_override;
            harness::RunRecord rec = harness::run_experiment(cfg, out_dir);
            std::cout << "run " << rec.run_id << ": epochs=" << rec.epochs_run
                      << " train_s=" << rec.train_seconds << " acc_pre=" << rec.acc_pre_embed
                      << " acc_post=" << rec.acc_post_embed
                      << " verify=" << (rec.verify_success ? "Success" : "Fail") << "\n";
            std::cout << "artifacts in " << out_dir << "\n";
            return rec.verify_success ? 0 : 2;
        }

        if (sweep->parsed()) {
            harness::RunConfig cfg = load_or_default(config_path);
            apply_seed_shift(cfg, seed);
            std::vector<double> vals;
            for (const auto& v : values) vals.push_back(parse_eps(v));
            auto records = harness::sweep(cfg, axis, vals, out_dir);
            std::ifstream csv(out_dir + "/metrics.csv");
            std::stringstream ss;
            ss << csv.rdbuf();
            std::cout << harness::render_metrics_table(ss.str());
            return 0;
        }

        if (verify_cmd->parsed()) return cmd_verify(verify_dir, manifest_path, eta_override, out_dir);

        if (cluster->parsed()) {
            harness::RunConfig cfg = load_or_default(config_path);
            fs::create_directories(out_dir);
            json result;
            result["attack"] = use_dbscan ? "dbscan" : "kmeans";
            double base_sum = 0.0, prot_sum = 0.0;
            auto rows = json::array();
            for (uint32_t t = 0; t < trials; ++t) {
                auto r = harness::cluster_experiment(cfg, mix_seed(seed, t + 1), use_dbscan);
                rows.push_back({{"trial", t},
                                {"baseline", r.baseline_accuracy},
                                {"protected", r.protected_accuracy},
                                {"baseline_k", r.baseline_k},
                                {"protected_k", r.protected_k}});
                base_sum += r.baseline_accuracy;
                prot_sum += r.protected_accuracy;
                append_csv(out_dir + "/attack_cluster.csv",
                           "run_id,attack,epsilon,gamma,trial,baseline_accuracy,protected_accuracy",
                           "cluster," + std::string(use_dbscan ? "dbscan" : "kmeans") + "," +
                               (std::isinf(cfg.epsilon) ? "inf" : std::to_string(cfg.epsilon)) + "," +
                               std::to_string(double(cfg.pseudo_classes()) / cfg.data.q) + "," +
                               std::to_string(t) + "," + std::to_string(r.baseline_accuracy) + "," +
                               std::to_string(r.protected_accuracy));
            }
            result["trials"] = rows;
            result["mean_baseline"] = base_sum / trials;
            result["mean_protected"] = prot_sum / trials;
            std::cout << result.dump(2) << "\n";
            write_text(out_dir + "/attack_cluster.json", result.dump(2) + "\n");
            return 0;
        }

        if (invert->parsed()) {
            harness::RunConfig cfg = load_or_default(config_path);
            fs::create_directories(out_dir);
            std::vector<double> eps;
            for (const auto& e : eps_list) eps.push_back(parse_eps(e));
            auto r = harness::inversion_experiment(cfg, eps, targets, seed == 0 ? 1 : seed);
            json result;
            result["attack"] = "unsplit_invert";
            auto rows = json::array();
            for (size_t i = 0; i < r.epsilons.size(); ++i) {
                rows.push_back({{"epsilon", std::isinf(r.epsilons[i]) ? json("inf") : json(r.epsilons[i])},
                                {"mean_ssim", r.mean_ssim[i]},
                                {"mse", r.mse[i]}});
                append_csv(out_dir + "/attack_invert.csv", "run_id,attack,epsilon,mean_ssim,mse",
                           "invert,unsplit," +
                               (std::isinf(r.epsilons[i]) ? std::string("inf") : std::to_string(r.epsilons[i])) +
                               "," + std::to_string(r.mean_ssim[i]) + "," + std::to_string(r.mse[i]));
            }
            result["ladder"] = rows;
            std::cout << result.dump(2) << "\n";
            write_text(out_dir + "/attack_invert.json", result.dump(2) + "\n");
            return 0;
        }

        if (extract->parsed()) {
            harness::RunConfig cfg = load_or_default(config_path);
            fs::create_directories(out_dir);
            auto r = harness::extraction_experiment(cfg, seed == 0 ? 1 : seed, with_control);
            json result;
            result["attack"] = "extraction";
            result["victim_demasked_accuracy"] = r.victim_demasked_accuracy;
            result["surrogate_accuracy"] = r.surrogate_accuracy;
            if (with_control) result["control_accuracy"] = r.control_accuracy;
            result["queries"] = r.queries;
            std::cout << result.dump(2) << "\n";
            write_text(out_dir + "/attack_extract.json", result.dump(2) + "\n");
            append_csv(out_dir + "/attack_extract.csv",
                       "run_id,attack,epsilon,gamma,victim_accuracy,surrogate_accuracy,control_accuracy,queries",
                       "extract,extraction," +
                           (std::isinf(cfg.epsilon) ? std::string("inf") : std::to_string(cfg.epsilon)) + "," +
                           std::to_string(double(cfg.pseudo_classes()) / cfg.data.q) + "," +
                           std::to_string(r.victim_demasked_accuracy) + "," +
                           std::to_string(r.surrogate_accuracy) + "," + std::to_string(r.control_accuracy) +
                           "," + std::to_string(r.queries));
            return 0;
        }

        if (report->parsed()) {
            std::ifstream csv(csv_path);
            if (!csv) {
                std::cout << harness::metrics_csv_header() << "\n(no records)\n";
                return 0;
            }
            std::stringstream ss;
            ss << csv.rdbuf();
            std::cout << harness::render_metrics_table(ss.str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
