#include "clicooper/verifier.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace clicooper::verify {

TensorF64 AssembledModel::predict(const TensorF64& features) const {
    TensorF64 acts = nn::segment_infer(client, features);
    dp::clip_rows_l1(acts, clip_radius);
    return nn::segment_infer(trainer_stack, acts);
}

AssembledModel assemble(nn::Segment client, std::span<const nn::Segment> trainers, double clip_radius) {
    if (trainers.empty()) throw std::invalid_argument("assemble: no trainer checkpoints");
    if (!(clip_radius > 0.0)) throw std::invalid_argument("assemble: clip radius must be > 0");
    AssembledModel model;
    model.clip_radius = clip_radius;
    model.trainer_stack = nn::merge_segments(trainers); // rejects incompatible widths
    if (client.output_dim() != model.trainer_stack.input_dim())
        throw std::invalid_argument("assemble: client output " + std::to_string(client.output_dim()) +
                                    " != trainer stack input " +
                                    std::to_string(model.trainer_stack.input_dim()));
    model.client = std::move(client);
    return model;
}

namespace {

std::vector<int32_t> argmax_rows(const TensorF64& logits) {
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
}

} // namespace

GateResult accuracy_gate(const AssembledModel& model, const TensorF64& test_features,
                         const std::vector<std::vector<int32_t>>& acceptable_pseudo, double threshold) {
    if (acceptable_pseudo.size() != test_features.rows())
        throw std::invalid_argument("accuracy_gate: group list size != test rows");
    TensorF64 logits = model.predict(test_features);
    std::vector<int32_t> pred = argmax_rows(logits);
    size_t hits = 0;
    for (size_t r = 0; r < pred.size(); ++r) {
        const auto& grp = acceptable_pseudo[r];
        if (std::find(grp.begin(), grp.end(), pred[r]) != grp.end()) ++hits;
    }
    GateResult res;
    res.accuracy = pred.empty() ? 0.0 : static_cast<double>(hits) / pred.size();
    res.pass = res.accuracy >= threshold;
    return res;
}

GateResult accuracy_gate(const AssembledModel& model, const TensorF64& test_features,
                         const std::vector<int32_t>& true_labels, const labels::LabelMap& map,
                         double threshold) {
    TensorF64 logits = model.predict(test_features);
    GateResult res;
    res.accuracy = labels::demasked_accuracy(logits, true_labels, map);
    res.pass = res.accuracy >= threshold;
    return res;
}

VerificationReport verify_chain(std::span<const nn::Segment> trainer_ckpts,
                                const dp::DpActivationBatch& cache, const std::vector<LinkSpec>& links,
                                uint32_t B, double eta_threshold, std::vector<double>* link_ms) {
    VerificationReport report;
    report.eta_threshold = eta_threshold;
    if (links.size() != trainer_ckpts.size())
        throw std::invalid_argument("verify_chain: " + std::to_string(links.size()) + " link specs for " +
                                    std::to_string(trainer_ckpts.size()) + " checkpoints");

    if (dp::canonical_digest(cache.values) != cache.digest) {
        report.success = false;
        report.fail_stage = FailStage::CacheDigest;
        return report;
    }

    TensorF64 anchor = cache.values;
    Digest32 anchor_digest = cache.digest;
    for (size_t i = 0; i < links.size(); ++i) {
        const LinkSpec& spec = links[i];
        if (spec.index != i + 1)
            throw std::invalid_argument("verify_chain: link specs must be ordered 1..n");
        const nn::Segment& ckpt = trainer_ckpts[i];
        if (!ckpt.frozen)
            throw std::logic_error("verify_chain: checkpoint " + std::to_string(i + 1) + " is not frozen");

        auto t0 = std::chrono::steady_clock::now();
        Digest32 h = wm::chain_hash(anchor_digest, spec.index, spec.nonce, spec.identity);
        std::vector<uint32_t> positions = wm::wm_position(spec.nonce, spec.selected, ckpt.param_count());
        std::vector<uint8_t> mark = wm::wm_gen(h, B);
        TensorF64 key = wm::key_gen(h, B, spec.selected);
        std::vector<uint8_t> extracted = wm::project_extract(ckpt, positions, key);
        double eta = wm::detection_rate(extracted, mark);
        if (link_ms)
            link_ms->push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());

        LinkCheck check{spec.index, eta, eta >= eta_threshold};
        report.per_link.push_back(check);
        if (!check.pass) {
            report.success = false;
            report.fail_stage = FailStage::Link;
            report.fail_link = spec.index;
            return report; // fail fast; later links stay unreported
        }
        if (i + 1 < links.size()) {
            anchor = nn::segment_infer(ckpt, anchor);
            anchor_digest = dp::canonical_digest(anchor);
        }
    }
    report.success = true;
    report.fail_stage = FailStage::None;
    return report;
}

VerificationReport verify_full(const AssembledModel& model, std::span<const nn::Segment> trainer_ckpts,
                               const dp::DpActivationBatch& cache, const std::vector<LinkSpec>& links,
                               uint32_t B, double eta_threshold, const TensorF64* test_features,
                               const std::vector<std::vector<int32_t>>* acceptable_pseudo,
                               double acc_threshold, std::vector<double>* link_ms) {
    if (test_features && acceptable_pseudo) {
        GateResult gate = accuracy_gate(model, *test_features, *acceptable_pseudo, acc_threshold);
        if (!gate.pass) {
            VerificationReport report;
            report.success = false;
            report.fail_stage = FailStage::Accuracy;
            report.accuracy_evaluated = true;
            report.acc_main = gate.accuracy;
            report.eta_threshold = eta_threshold;
            return report;
        }
        VerificationReport report = verify_chain(trainer_ckpts, cache, links, B, eta_threshold, link_ms);
        report.accuracy_evaluated = true;
        report.acc_main = gate.accuracy;
        return report;
    }
    return verify_chain(trainer_ckpts, cache, links, B, eta_threshold, link_ms);
}

std::string report_to_json(const VerificationReport& report) {
    nlohmann::json j;
    j["overall"] = report.success ? "Success" : "Fail";
    switch (report.fail_stage) {
        case FailStage::None: j["fail_stage"] = "none"; break;
        case FailStage::CacheDigest: j["fail_stage"] = "cache_digest"; break;
        case FailStage::Accuracy: j["fail_stage"] = "accuracy"; break;
        case FailStage::Link: j["fail_stage"] = "link"; j["fail_link"] = report.fail_link; break;
    }
    if (report.accuracy_evaluated) j["acc_main"] = report.acc_main;
    j["eta_threshold"] = report.eta_threshold;
    auto links = nlohmann::json::array();
    for (const auto& c : report.per_link)
        links.push_back({{"i", c.index}, {"eta", c.eta}, {"pass", c.pass}});
    j["per_link"] = links;
    return j.dump(2);
}

std::string render_report_table(const VerificationReport& report) {
    std::string out;
    char buf[128];
    out += "stage      result\n";
    out += "---------  ------------------\n";
    if (report.accuracy_evaluated) {
        std::snprintf(buf, sizeof(buf), "accuracy   %.4f (%s)\n", report.acc_main,
                      report.fail_stage == FailStage::Accuracy ? "FAIL" : "pass");
        out += buf;
    }
    if (report.fail_stage == FailStage::CacheDigest) out += "cache      digest mismatch (FAIL)\n";
    for (const auto& c : report.per_link) {
        std::snprintf(buf, sizeof(buf), "link %-2u    eta=%.4f (%s)\n", c.index, c.eta,
                      c.pass ? "pass" : "FAIL");
        out += buf;
    }
    out += report.success ? "overall    Success\n" : "overall    Fail\n";
    return out;
}

} // namespace clicooper::verify
