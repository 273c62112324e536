#include "clicooper/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "clicooper/checkpoint.hpp"
#include "clicooper/rng.hpp"

namespace clicooper::harness {

namespace fs = std::filesystem;
using nlohmann::json;

uint32_t RunConfig::pseudo_classes() const {
    uint32_t t = 0;
    for (uint32_t gi : g) t += gi;
    return t;
}

void RunConfig::validate() const {
    if (data.q < 2) throw std::invalid_argument("config: data.q must be >= 2");
    if (g.size() != data.q) throw std::invalid_argument("config: label.g must have q entries");
    if (trainer_widths.empty()) throw std::invalid_argument("config: no trainer segments");
    if (trainer_seeds.size() != trainer_widths.size())
        throw std::invalid_argument("config: trainers.seeds count != widths count");
    if (nonces.size() != trainer_widths.size() || identities.size() != trainer_widths.size())
        throw std::invalid_argument("config: watermark.nonces/identities must list one entry per trainer");
    if (encoder.widths.size() < 2 || encoder.widths.front() != data.dim)
        throw std::invalid_argument("config: encoder must start at data.dim");
    if (trainer_widths.front().front() != encoder.widths.back())
        throw std::invalid_argument("config: encoder output != first trainer input");
    if (trainer_widths.back().back() != pseudo_classes())
        throw std::invalid_argument("config: final trainer width " +
                                    std::to_string(trainer_widths.back().back()) + " != pseudo class count " +
                                    std::to_string(pseudo_classes()));
    if (encoder.init != "near_identity" && encoder.init != "random")
        throw std::invalid_argument("config: encoder.init must be near_identity or random");
    if (encoder.activation != "identity" && encoder.activation != "relu")
        throw std::invalid_argument("config: encoder.activation must be identity or relu");
    if (transport != "inproc" && transport != "tcp")
        throw std::invalid_argument("config: transport must be inproc or tcp");
    dp::DpParams{epsilon, clip_radius}.validate();
}

pipeline::ExperimentPlan RunConfig::to_plan() const {
    pipeline::ExperimentPlan plan;
    plan.n = static_cast<uint32_t>(trainer_widths.size());
    plan.split_widths = trainer_widths;
    plan.epochs = epochs;
    plan.lr = lr;
    plan.momentum = momentum;
    plan.batch_size = batch_size;
    plan.early_stop = early_stop;
    plan.dpp = dp::DpParams{epsilon, clip_radius};
    plan.q = data.q;
    plan.g = g;
    plan.wm.B = wm_B;
    plan.wm.lambda = wm_lambda;
    plan.wm.eta_goal = wm_eta_goal;
    plan.wm.max_rounds = wm_max_rounds;
    plan.wm.embed_lr = wm_embed_lr;
    plan.wm.embed_batch = wm_embed_batch;
    plan.shuffle_seed = shuffle_seed;
    plan.trainer_seeds = trainer_seeds;
    return plan;
}

RunConfig default_config() { return RunConfig{}; }

namespace {

double epsilon_from_json(const json& v) {
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw std::invalid_argument("config: dp.epsilon string must be \"inf\"");
    }
    return v.get<double>();
}

json epsilon_to_json(double eps) {
    if (std::isinf(eps)) return "inf";
    return eps;
}

void check_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || (it.key() == k);
        if (!ok)
            throw std::invalid_argument(std::string("config: unknown key \"") + it.key() + "\" in " + where);
    }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace

RunConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    check_keys(j, "root",
               {"data", "label", "dp", "encoder", "trainers", "train", "watermark", "verify", "transport"});
    RunConfig cfg;
    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, "data",
                   {"q", "dim", "per_class", "test_per_class", "spike_count", "spike_value", "mean_texture",
                    "class_sigma", "seed"});
        maybe(d, "q", cfg.data.q);
        maybe(d, "dim", cfg.data.dim);
        maybe(d, "per_class", cfg.data.per_class);
        maybe(d, "test_per_class", cfg.data.test_per_class);
        maybe(d, "spike_count", cfg.data.spike_count);
        maybe(d, "spike_value", cfg.data.spike_value);
        maybe(d, "mean_texture", cfg.data.mean_texture);
        maybe(d, "class_sigma", cfg.data.class_sigma);
        maybe(d, "seed", cfg.data.seed);
    }
    if (j.contains("label")) {
        const json& l = j["label"];
        check_keys(l, "label", {"g", "aug_sigma", "map_seed", "expand_seed"});
        maybe(l, "g", cfg.g);
        maybe(l, "aug_sigma", cfg.aug_sigma);
        maybe(l, "map_seed", cfg.label_seed);
        maybe(l, "expand_seed", cfg.expand_seed);
    }
    if (j.contains("dp")) {
        const json& d = j["dp"];
        check_keys(d, "dp", {"epsilon", "clip_radius", "seed"});
        if (d.contains("epsilon")) cfg.epsilon = epsilon_from_json(d["epsilon"]);
        maybe(d, "clip_radius", cfg.clip_radius);
        maybe(d, "seed", cfg.dp_seed);
    }
    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        check_keys(e, "encoder", {"widths", "init", "activation", "seed"});
        maybe(e, "widths", cfg.encoder.widths);
        maybe(e, "init", cfg.encoder.init);
        maybe(e, "activation", cfg.encoder.activation);
        maybe(e, "seed", cfg.encoder.seed);
    }
    if (j.contains("trainers")) {
        const json& t = j["trainers"];
        check_keys(t, "trainers", {"widths", "seeds"});
        maybe(t, "widths", cfg.trainer_widths);
        maybe(t, "seeds", cfg.trainer_seeds);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t, "train", {"epochs", "lr", "momentum", "batch_size", "shuffle_seed", "early_stop"});
        maybe(t, "epochs", cfg.epochs);
        maybe(t, "lr", cfg.lr);
        maybe(t, "momentum", cfg.momentum);
        maybe(t, "batch_size", cfg.batch_size);
        maybe(t, "shuffle_seed", cfg.shuffle_seed);
        maybe(t, "early_stop", cfg.early_stop);
    }
    if (j.contains("watermark")) {
        const json& w = j["watermark"];
        check_keys(w, "watermark",
                   {"B", "lambda", "eta_goal", "max_rounds", "embed_lr", "embed_momentum", "embed_batch",
                    "selected", "embed_seed", "nonces", "identities"});
        maybe(w, "B", cfg.wm_B);
        maybe(w, "lambda", cfg.wm_lambda);
        maybe(w, "eta_goal", cfg.wm_eta_goal);
        maybe(w, "max_rounds", cfg.wm_max_rounds);
        maybe(w, "embed_lr", cfg.wm_embed_lr);
        maybe(w, "embed_momentum", cfg.wm_momentum);
        maybe(w, "embed_batch", cfg.wm_embed_batch);
        maybe(w, "selected", cfg.wm_selected);
        maybe(w, "embed_seed", cfg.wm_embed_seed);
        maybe(w, "nonces", cfg.nonces);
        maybe(w, "identities", cfg.identities);
    }
    if (j.contains("verify")) {
        const json& v = j["verify"];
        check_keys(v, "verify", {"eta_g", "acc_threshold", "demask_optin"});
        maybe(v, "eta_g", cfg.verify_eta_g);
        maybe(v, "acc_threshold", cfg.verify_acc_threshold);
        maybe(v, "demask_optin", cfg.demask_optin);
    }
    maybe(j, "transport", cfg.transport);
    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["data"] = {{"q", cfg.data.q},
                 {"dim", cfg.data.dim},
                 {"per_class", cfg.data.per_class},
                 {"test_per_class", cfg.data.test_per_class},
                 {"spike_count", cfg.data.spike_count},
                 {"spike_value", cfg.data.spike_value},
                 {"mean_texture", cfg.data.mean_texture},
                 {"class_sigma", cfg.data.class_sigma},
                 {"seed", cfg.data.seed}};
    j["label"] = {{"g", cfg.g},
                  {"aug_sigma", cfg.aug_sigma},
                  {"map_seed", cfg.label_seed},
                  {"expand_seed", cfg.expand_seed}};
    j["dp"] = {{"epsilon", epsilon_to_json(cfg.epsilon)},
               {"clip_radius", cfg.clip_radius},
               {"seed", cfg.dp_seed}};
    j["encoder"] = {{"widths", cfg.encoder.widths},
                    {"init", cfg.encoder.init},
                    {"activation", cfg.encoder.activation},
                    {"seed", cfg.encoder.seed}};
    j["trainers"] = {{"widths", cfg.trainer_widths}, {"seeds", cfg.trainer_seeds}};
    j["train"] = {{"epochs", cfg.epochs},       {"lr", cfg.lr},
                  {"momentum", cfg.momentum},   {"batch_size", cfg.batch_size},
                  {"shuffle_seed", cfg.shuffle_seed}, {"early_stop", cfg.early_stop}};
    j["watermark"] = {{"B", cfg.wm_B},
                      {"lambda", cfg.wm_lambda},
                      {"eta_goal", cfg.wm_eta_goal},
                      {"max_rounds", cfg.wm_max_rounds},
                      {"embed_lr", cfg.wm_embed_lr},
                      {"embed_momentum", cfg.wm_momentum},
                      {"embed_batch", cfg.wm_embed_batch},
                      {"selected", cfg.wm_selected},
                      {"embed_seed", cfg.wm_embed_seed},
                      {"nonces", cfg.nonces},
                      {"identities", cfg.identities}};
    j["verify"] = {{"eta_g", cfg.verify_eta_g},
                   {"acc_threshold", cfg.verify_acc_threshold},
                   {"demask_optin", cfg.demask_optin}};
    j["transport"] = cfg.transport;
    return j.dump(2);
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json(ss.str());
}

Blobs make_blobs(const DataConfig& cfg) {
    if (cfg.spike_count * cfg.q > cfg.dim)
        throw std::invalid_argument("make_blobs: not enough dimensions for the class spikes");
    CounterRng rng(cfg.seed);

    // Distinct spike coordinates across classes.
    std::vector<uint32_t> coords(cfg.dim);
    std::iota(coords.begin(), coords.end(), 0);
    for (uint32_t i = 0; i < cfg.spike_count * cfg.q; ++i) {
        size_t pick = i + static_cast<size_t>(rng.below(cfg.dim - i));
        std::swap(coords[i], coords[pick]);
    }

    std::vector<std::vector<double>> means(cfg.q, std::vector<double>(cfg.dim));
    for (uint32_t c = 0; c < cfg.q; ++c) {
        for (uint32_t j = 0; j < cfg.dim; ++j) means[c][j] = cfg.mean_texture * rng.normal();
        for (uint32_t s = 0; s < cfg.spike_count; ++s)
            means[c][coords[c * cfg.spike_count + s]] += cfg.spike_value;
    }

    auto sample_split = [&](uint32_t per_class, TensorF64& X, std::vector<int32_t>& y) {
        X = TensorF64::zeros({cfg.q * per_class, cfg.dim});
        y.clear();
        size_t row = 0;
        for (uint32_t c = 0; c < cfg.q; ++c) {
            for (uint32_t s = 0; s < per_class; ++s, ++row) {
                double* dst = &X.values[row * cfg.dim];
                for (uint32_t j = 0; j < cfg.dim; ++j)
                    dst[j] = means[c][j] + cfg.class_sigma * rng.normal();
                y.push_back(static_cast<int32_t>(c));
            }
        }
    };

    Blobs b;
    sample_split(cfg.per_class, b.train_x, b.train_y);
    sample_split(cfg.test_per_class, b.test_x, b.test_y);
    return b;
}

nn::Segment make_encoder(const EncoderConfig& cfg) {
    nn::Activation act = cfg.activation == "relu" ? nn::Activation::Relu : nn::Activation::Identity;
    nn::InitStyle style = cfg.init == "random" ? nn::InitStyle::Random : nn::InitStyle::NearIdentity;
    nn::Segment enc = nn::init_segment(cfg.widths, act, act, cfg.seed, style);
    enc.frozen = true; // the client encoder is pretrained and never updated
    return enc;
}

namespace {

struct StageTag {
    const char* name;
};

template <typename F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("[") + name + "] " + e.what());
    }
}

std::string run_id_for(const RunConfig& cfg) {
    std::string snapshot = config_to_json(cfg);
    Digest32 d = sha256(snapshot.data(), snapshot.size());
    return "run-" + hex(d).substr(0, 12);
}

std::string join_list(const std::vector<double>& xs, const char* fmt = "%.6g") {
    std::string out;
    char buf[64];
    for (size_t i = 0; i < xs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), fmt, xs[i]);
        if (i) out += ";";
        out += buf;
    }
    return out;
}

} // namespace

RunRecord run_experiment(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    RunRecord rec;
    rec.config = cfg;
    rec.run_id = run_id_for(cfg);

    Blobs data = stage("data", [&] { return make_blobs(cfg.data); });
    labels::LabelMap map =
        stage("labelmap", [&] { return labels::build_label_map(cfg.data.q, cfg.g, cfg.label_seed); });
    labels::ExpandedDataset expanded = stage("expand", [&] {
        return labels::expand_dataset(data.train_x, data.train_y, map, cfg.aug_sigma, cfg.expand_seed);
    });
    nn::Segment encoder = stage("encoder", [&] { return make_encoder(cfg.encoder); });
    dp::DpActivationBatch cache = stage("protect", [&] {
        return dp::protect(encoder, expanded, dp::DpParams{cfg.epsilon, cfg.clip_radius}, cfg.dp_seed);
    });

    pipeline::ExperimentPlan plan = cfg.to_plan();
    stage("negotiate", [&] { return pipeline::negotiate(plan); });

    auto t0 = std::chrono::steady_clock::now();
    pipeline::TrainingResult trained = stage("train", [&] {
        if (cfg.transport == "tcp") {
            pipeline::TcpTransport net(static_cast<int>(plan.n));
            return pipeline::run_training(plan, cache, expanded.pseudo_labels, net);
        }
        return pipeline::run_training(plan, cache, expanded.pseudo_labels);
    });
    rec.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epochs_run = trained.epochs_run;
    rec.final_train_loss = trained.epoch_losses.empty() ? 0.0 : trained.epoch_losses.back();

    rec.acc_pre_embed = stage("evaluate", [&] {
        verify::AssembledModel model = verify::assemble(
            encoder, std::span<const nn::Segment>(trained.segments.data(), trained.segments.size()),
            cfg.clip_radius);
        return verify::accuracy_gate(model, data.test_x, data.test_y, map, 0.0).accuracy;
    });

    // Epoch N+1: chained embedding, sequential across trainers.
    std::vector<nn::Segment> segments = std::move(trained.segments);
    std::vector<verify::LinkSpec> specs;
    std::vector<wm::WatermarkLink> links;
    stage("embed", [&] {
        for (uint32_t i = 1; i <= plan.n; ++i) {
            wm::EmbedConfig ec;
            ec.B = cfg.wm_B;
            ec.lambda = cfg.wm_lambda;
            ec.eta_goal = cfg.wm_eta_goal;
            ec.max_rounds = cfg.wm_max_rounds;
            ec.embed_lr = cfg.wm_embed_lr;
            ec.momentum = cfg.wm_momentum;
            ec.batch_size = cfg.wm_embed_batch;
            ec.selected = cfg.wm_selected;
            ec.batch_seed = mix_seed(cfg.wm_embed_seed, i);
            auto e0 = std::chrono::steady_clock::now();
            wm::EmbedOutcome out = wm::embed(segments, i, cache, expanded.pseudo_labels, cfg.nonces[i - 1],
                                             cfg.identities[i - 1], ec);
            rec.embed_ms.push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - e0).count());
            specs.push_back({i, cfg.nonces[i - 1], cfg.identities[i - 1],
                             static_cast<uint32_t>(out.link.positions.size())});
            links.push_back(std::move(out.link));
        }
        return 0;
    });

    // Persist the released artifacts.
    stage("persist", [&] {
        io::save_checkpoint(encoder, out_dir + "/client.clwc");
        for (uint32_t i = 0; i < plan.n; ++i)
            io::save_checkpoint(segments[i], out_dir + "/trainer_" + std::to_string(i + 1) + ".clwc");
        dp::save_cache(cache, out_dir + "/cache.cldp");
        {
            std::ofstream f(out_dir + "/label_map.json");
            f << labels::map_to_json(map) << "\n";
        }
        {
            std::ofstream f(out_dir + "/config.json");
            f << config_to_json(cfg) << "\n";
        }
        json manifest;
        manifest["B"] = cfg.wm_B;
        manifest["eta_g"] = cfg.verify_eta_g;
        manifest["acc_threshold"] = cfg.verify_acc_threshold;
        manifest["cache"] = "cache.cldp";
        manifest["client"] = "client.clwc";
        auto arr = json::array();
        for (size_t i = 0; i < specs.size(); ++i) {
            arr.push_back({{"i", specs[i].index},
                           {"mu", specs[i].nonce},
                           {"id", specs[i].identity},
                           {"selected", specs[i].selected},
                           {"eta", links[i].eta},
                           {"checkpoint", "trainer_" + std::to_string(i + 1) + ".clwc"}});
        }
        manifest["links"] = arr;
        manifest["eval"] = "eval.json";
        {
            std::ofstream f(out_dir + "/manifest.json");
            f << manifest.dump(2) << "\n";
        }
        json eval;
        auto rows = json::array();
        for (uint32_t r = 0; r < data.test_x.rows(); ++r) rows.push_back(data.test_x.row(r));
        eval["features"] = rows;
        auto groups = json::array();
        for (const auto& grp : labels::eval_groups(data.test_y, map)) groups.push_back(grp);
        eval["groups"] = groups;
        std::ofstream f(out_dir + "/eval.json");
        f << eval.dump() << "\n";
        return 0;
    });

    // Verification runs on the persisted artifacts, exactly what a verifier
    // would load.
    verify::VerificationReport report = stage("verify", [&] {
        dp::DpActivationBatch cache2 = dp::load_cache(out_dir + "/cache.cldp");
        nn::Segment client2 = io::load_checkpoint(out_dir + "/client.clwc");
        std::vector<nn::Segment> ckpts;
        for (uint32_t i = 1; i <= plan.n; ++i)
            ckpts.push_back(io::load_checkpoint(out_dir + "/trainer_" + std::to_string(i) + ".clwc"));
        verify::AssembledModel model = verify::assemble(
            std::move(client2), std::span<const nn::Segment>(ckpts.data(), ckpts.size()), cfg.clip_radius);
        std::vector<std::vector<int32_t>> groups = labels::eval_groups(data.test_y, map);
        verify::VerificationReport rep =
            verify::verify_full(model, std::span<const nn::Segment>(ckpts.data(), ckpts.size()), cache2,
                                specs, cfg.wm_B, cfg.verify_eta_g, &data.test_x, &groups,
                                cfg.verify_acc_threshold, &rec.verify_ms);
        rec.acc_post_embed = cfg.demask_optin
                                 ? verify::accuracy_gate(model, data.test_x, data.test_y, map, 0.0).accuracy
                                 : rep.acc_main;
        return rep;
    });

    rec.verify_success = report.success;
    for (const auto& c : report.per_link) rec.eta_per_link.push_back(c.eta);
    switch (report.fail_stage) {
        case verify::FailStage::None: rec.fail_stage = "none"; break;
        case verify::FailStage::CacheDigest: rec.fail_stage = "cache_digest"; break;
        case verify::FailStage::Accuracy: rec.fail_stage = "accuracy"; break;
        case verify::FailStage::Link: rec.fail_stage = "link_" + std::to_string(report.fail_link); break;
    }

    stage("report", [&] {
        json out;
        out["run_id"] = rec.run_id;
        out["acc_pre_embed"] = rec.acc_pre_embed;
        out["acc_post_embed"] = rec.acc_post_embed;
        out["epochs_run"] = rec.epochs_run;
        out["final_train_loss"] = rec.final_train_loss;
        out["verification"] = json::parse(verify::report_to_json(report));
        std::ofstream f(out_dir + "/report.json");
        f << out.dump(2) << "\n";

        const std::string csv_path = out_dir + "/metrics.csv";
        bool fresh = !fs::exists(csv_path);
        std::ofstream csv(csv_path, std::ios::app);
        if (fresh) csv << metrics_csv_header() << "\n";
        csv << metrics_csv_row(rec) << "\n";
        return 0;
    });

    return rec;
}

std::vector<uint32_t> gamma_to_g(double gamma_value, uint32_t q) {
    if (!(gamma_value >= 1.0)) throw std::invalid_argument("gamma must be >= 1");
    auto total = static_cast<uint32_t>(std::llround(gamma_value * q));
    if (total < q) throw std::invalid_argument("gamma too small");
    uint32_t base = total / q;
    uint32_t extra = total % q;
    std::vector<uint32_t> g(q, base);
    for (uint32_t i = 0; i < extra; ++i) ++g[i];
    return g;
}

std::vector<RunRecord> sweep(const RunConfig& base, const std::string& axis,
                             const std::vector<double>& values, const std::string& out_dir) {
    if (axis != "epsilon" && axis != "gamma" && axis != "B")
        throw std::invalid_argument("sweep: axis must be epsilon, gamma, or B");
    fs::create_directories(out_dir);
    std::vector<RunRecord> records;
    for (double v : values) {
        RunConfig cfg = base;
        std::string tag;
        if (axis == "epsilon") {
            cfg.epsilon = v;
            tag = std::isinf(v) ? "inf" : std::to_string(v);
        } else if (axis == "gamma") {
            cfg.g = gamma_to_g(v, cfg.data.q);
            cfg.trainer_widths.back().back() = cfg.pseudo_classes();
            tag = std::to_string(v);
        } else {
            cfg.wm_B = static_cast<uint32_t>(v);
            tag = std::to_string(static_cast<uint32_t>(v));
        }
        if (tag.find('.') != std::string::npos) {
            tag.erase(tag.find_last_not_of('0') + 1, std::string::npos);
            if (!tag.empty() && tag.back() == '.') tag.pop_back();
        }
        records.push_back(run_experiment(cfg, out_dir + "/" + axis + "_" + tag));
    }
    std::ofstream csv(out_dir + "/metrics.csv");
    csv << metrics_csv_header() << "\n";
    for (const auto& r : records) csv << metrics_csv_row(r) << "\n";
    return records;
}

std::string metrics_csv_header() {
    return "schema_version,run_id,transport,epsilon,gamma,B,n_trainers,epochs_run,train_seconds,"
           "embed_ms_per_link,verify_ms_per_link,eta_per_link,acc_pre_embed,acc_post_embed,"
           "verify_result,fail_stage";
}

std::string metrics_csv_row(const RunRecord& r) {
    std::ostringstream os;
    double gamma_value = static_cast<double>(r.config.pseudo_classes()) / r.config.data.q;
    os << 1 << "," << r.run_id << "," << r.config.transport << ",";
    if (std::isinf(r.config.epsilon)) os << "inf";
    else os << r.config.epsilon;
    os << "," << gamma_value << "," << r.config.wm_B << "," << r.config.trainer_widths.size() << ","
       << r.epochs_run << "," << r.train_seconds << "," << join_list(r.embed_ms) << ","
       << join_list(r.verify_ms) << "," << join_list(r.eta_per_link, "%.6f") << "," << r.acc_pre_embed
       << "," << r.acc_post_embed << "," << (r.verify_success ? "Success" : "Fail") << "," << r.fail_stage;
    return os.str();
}

std::string render_metrics_table(const std::string& csv_text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(csv_text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) return metrics_csv_header() + std::string("\n(no records)\n");
    size_t cols = rows[0].size();
    std::vector<size_t> width(cols, 0);
    for (const auto& r : rows)
        for (size_t c = 0; c < std::min(cols, r.size()); ++c) width[c] = std::max(width[c], r[c].size());
    std::string out;
    for (const auto& r : rows) {
        for (size_t c = 0; c < std::min(cols, r.size()); ++c) {
            out += r[c];
            out.append(width[c] - r[c].size() + 2, ' ');
        }
        out += "\n";
    }
    return out;
}

ClusterTrialResult cluster_experiment(const RunConfig& base, uint64_t trial_seed, bool use_dbscan) {
    RunConfig cfg = base;
    cfg.data.seed = mix_seed(base.data.seed, trial_seed);
    cfg.label_seed = mix_seed(base.label_seed, trial_seed);
    cfg.expand_seed = mix_seed(base.expand_seed, trial_seed);
    cfg.dp_seed = mix_seed(base.dp_seed, trial_seed);

    Blobs data = make_blobs(cfg.data);
    nn::Segment encoder = make_encoder(cfg.encoder);

    ClusterTrialResult result;
    const uint32_t total_pseudo = cfg.pseudo_classes();
    std::vector<uint32_t> k_range;
    for (uint32_t k = 2; k <= std::max(2 * cfg.data.q, total_pseudo + 2); ++k) k_range.push_back(k);

    { // Baseline: unprotected activations, one group per true class.
        TensorF64 acts = nn::segment_infer(encoder, data.train_x);
        attacks::ClusterOutcome out = use_dbscan ? attacks::dbscan(acts, 5)
                                                 : attacks::kmeans_auto(acts, k_range, mix_seed(trial_seed, 1));
        std::vector<std::vector<size_t>> groups(cfg.data.q);
        for (size_t i = 0; i < data.train_y.size(); ++i) groups[data.train_y[i]].push_back(i);
        attacks::score_clusters(out, groups);
        result.baseline_accuracy = out.perfect_accuracy;
        result.baseline_k = out.k_found;
    }
    { // Protected: what T1 actually observes — the DP cache over the
      // expanded dataset.
        labels::LabelMap map = labels::build_label_map(cfg.data.q, cfg.g, cfg.label_seed);
        labels::ExpandedDataset expanded =
            labels::expand_dataset(data.train_x, data.train_y, map, cfg.aug_sigma, cfg.expand_seed);
        dp::DpActivationBatch cache =
            dp::protect(encoder, expanded, dp::DpParams{cfg.epsilon, cfg.clip_radius}, cfg.dp_seed);
        attacks::ClusterOutcome out = use_dbscan
                                          ? attacks::dbscan(cache.values, 5)
                                          : attacks::kmeans_auto(cache.values, k_range, mix_seed(trial_seed, 2));
        std::vector<std::vector<size_t>> groups(cfg.data.q);
        for (size_t i = 0; i < expanded.size(); ++i)
            groups[labels::demask(expanded.pseudo_labels[i], map)].push_back(i);
        attacks::score_clusters(out, groups);
        result.protected_accuracy = out.perfect_accuracy;
        result.protected_k = out.k_found;
    }
    return result;
}

InversionTrialResult inversion_experiment(const RunConfig& base, const std::vector<double>& epsilons,
                                          uint32_t num_targets, uint64_t trial_seed) {
    RunConfig cfg = base;
    cfg.data.seed = mix_seed(base.data.seed, trial_seed);
    Blobs data = make_blobs(cfg.data);
    nn::Segment encoder = make_encoder(cfg.encoder);

    const uint32_t side = static_cast<uint32_t>(std::lround(std::sqrt(double(cfg.data.dim))));
    if (side * side != cfg.data.dim)
        throw std::invalid_argument("inversion_experiment: data.dim must be a square for SSIM scoring");
    num_targets = std::min<uint32_t>(num_targets, data.train_x.rows());
    std::vector<size_t> rows(num_targets);
    std::iota(rows.begin(), rows.end(), 0);
    TensorF64 targets = data.train_x.gather_rows(rows);

    TensorF64 acts = nn::segment_infer(encoder, targets);
    dp::clip_rows_l1(acts, cfg.clip_radius);

    InversionTrialResult result;
    for (double eps : epsilons) {
        // Paired noise across the epsilon ladder: same seed, scale b(eps).
        dp::DpActivationBatch observed =
            dp::laplace_perturb(acts, dp::DpParams{eps, cfg.clip_radius}, mix_seed(cfg.dp_seed, trial_seed));
        attacks::InversionOptions opt;
        opt.seed = mix_seed(trial_seed, 0x696e76ULL); // "inv"
        nn::Activation act = cfg.encoder.activation == "relu" ? nn::Activation::Relu
                                                              : nn::Activation::Identity;
        attacks::InversionOutcome out = attacks::unsplit_invert(observed.values, cfg.encoder.widths, act,
                                                                act, opt, &targets, side, side);
        result.epsilons.push_back(eps);
        result.mean_ssim.push_back(out.mean_ssim);
        result.mse.push_back(out.mse);
    }
    return result;
}

ExtractionTrialResult extraction_experiment(const RunConfig& base, uint64_t trial_seed, bool with_control) {
    RunConfig cfg = base;
    cfg.data.seed = mix_seed(base.data.seed, trial_seed);
    cfg.label_seed = mix_seed(base.label_seed, trial_seed);
    cfg.expand_seed = mix_seed(base.expand_seed, trial_seed);
    cfg.dp_seed = mix_seed(base.dp_seed, trial_seed);
    cfg.shuffle_seed = mix_seed(base.shuffle_seed, trial_seed);
    for (auto& s : cfg.trainer_seeds) s = mix_seed(s, trial_seed);

    Blobs data = make_blobs(cfg.data);
    labels::LabelMap map = labels::build_label_map(cfg.data.q, cfg.g, cfg.label_seed);
    labels::ExpandedDataset expanded =
        labels::expand_dataset(data.train_x, data.train_y, map, cfg.aug_sigma, cfg.expand_seed);
    nn::Segment encoder = make_encoder(cfg.encoder);
    dp::DpActivationBatch cache =
        dp::protect(encoder, expanded, dp::DpParams{cfg.epsilon, cfg.clip_radius}, cfg.dp_seed);
    pipeline::ExperimentPlan plan = cfg.to_plan();
    pipeline::TrainingResult trained = pipeline::run_training(plan, cache, expanded.pseudo_labels);

    verify::AssembledModel model = verify::assemble(
        encoder, std::span<const nn::Segment>(trained.segments.data(), trained.segments.size()),
        cfg.clip_radius);

    ExtractionTrialResult result;
    result.victim_demasked_accuracy =
        verify::accuracy_gate(model, data.test_x, data.test_y, map, 0.0).accuracy;

    attacks::PseudoApi api = [&model](const TensorF64& x) {
        TensorF64 logits = model.predict(x);
        std::vector<int32_t> out;
        out.reserve(logits.rows());
        for (uint32_t r = 0; r < logits.rows(); ++r) {
            const double* row = &logits.values[static_cast<size_t>(r) * logits.cols()];
            int32_t best = 0;
            for (uint32_t c = 1; c < logits.cols(); ++c)
                if (row[c] > row[best]) best = static_cast<int32_t>(c);
            out.push_back(best);
        }
        return out;
    };

    // Probe set: jittered copies of the training inputs.
    TensorF64 probe = data.train_x;
    CounterRng jitter(mix_seed(trial_seed, 0x70726f6265ULL)); // "probe"
    for (double& v : probe.values) v += cfg.aug_sigma * jitter.normal();

    attacks::ExtractionOptions opt;
    opt.surrogate_widths = {cfg.data.dim, 32, cfg.data.q};
    opt.seed = mix_seed(trial_seed, 0x657874ULL); // "ext"
    attacks::ExtractionOutcome out = attacks::extraction_attack(api, probe, cfg.data.q, map.total_pseudo(),
                                                                data.test_x, data.test_y, opt);
    result.surrogate_accuracy = out.surrogate_true_accuracy;
    result.queries = out.pseudo_label_queries;

    if (with_control) {
        attacks::ExtractionOptions copt = opt;
        copt.oracle_map = &map;
        attacks::ExtractionOutcome cout_ = attacks::extraction_attack(
            api, probe, cfg.data.q, map.total_pseudo(), data.test_x, data.test_y, copt);
        result.control_accuracy = cout_.surrogate_true_accuracy;
    }
    return result;
}

} // namespace clicooper::harness
