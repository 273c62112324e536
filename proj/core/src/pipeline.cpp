#include "clicooper/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "clicooper/rng.hpp"

namespace clicooper::pipeline {

Topology negotiate(const ExperimentPlan& plan) {
    if (plan.n == 0) throw std::invalid_argument("negotiate: need at least one trainer");
    if (plan.split_widths.size() != plan.n)
        throw std::invalid_argument("negotiate: split_widths has " + std::to_string(plan.split_widths.size()) +
                                    " segments for n=" + std::to_string(plan.n));
    if (plan.epochs == 0) throw std::invalid_argument("negotiate: epochs must be >= 1");
    if (plan.batch_size == 0) throw std::invalid_argument("negotiate: batch_size must be >= 1");
    uint32_t pseudo = 0;
    for (uint32_t gi : plan.g) pseudo += gi;
    if (pseudo == 0) throw std::invalid_argument("negotiate: label expansion not configured");

    Topology topo;
    topo.n = plan.n;
    topo.pseudo_classes = pseudo;
    for (uint32_t i = 0; i < plan.n; ++i) {
        const auto& w = plan.split_widths[i];
        if (w.size() < 2) throw std::invalid_argument("negotiate: segment " + std::to_string(i + 1) +
                                                      " needs at least {in, out}");
        for (uint32_t d : w)
            if (d == 0) throw std::invalid_argument("negotiate: zero width in segment " + std::to_string(i + 1));
        if (i > 0 && plan.split_widths[i - 1].back() != w.front())
            throw std::invalid_argument("negotiate: interface mismatch between T" + std::to_string(i) + " (out " +
                                        std::to_string(plan.split_widths[i - 1].back()) + ") and T" +
                                        std::to_string(i + 1) + " (in " + std::to_string(w.front()) + ")");
        topo.interface_widths.push_back(w.front());
    }
    topo.interface_widths.push_back(plan.split_widths.back().back());
    if (plan.split_widths.back().back() != pseudo)
        throw std::invalid_argument("negotiate: final segment emits " +
                                    std::to_string(plan.split_widths.back().back()) + " logits for " +
                                    std::to_string(pseudo) + " pseudo classes");
    if (plan.trainer_seeds.size() != plan.n)
        throw std::invalid_argument("negotiate: need one seed per trainer");
    return topo;
}

std::vector<size_t> epoch_permutation(uint64_t shuffle_seed, uint32_t epoch, size_t n) {
    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    CounterRng rng(mix_seed(shuffle_seed, 0x45706f6368000000ULL + epoch)); // "Epoch" + index
    for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return perm;
}

std::vector<nn::Segment> init_trainer_segments(const ExperimentPlan& plan) {
    std::vector<nn::Segment> segs;
    for (uint32_t i = 0; i < plan.n; ++i) {
        const bool is_last = (i + 1 == plan.n);
        segs.push_back(nn::init_segment(plan.split_widths[i], nn::Activation::Relu,
                                        is_last ? nn::Activation::Identity : nn::Activation::Relu,
                                        plan.trainer_seeds[i]));
    }
    return segs;
}

namespace {

struct BatchPlanner {
    size_t total = 0;
    uint32_t batch_size = 0;
    uint64_t shuffle_seed = 0;

    size_t batches_per_epoch() const { return (total + batch_size - 1) / batch_size; }

    std::vector<size_t> batch_rows(uint32_t epoch, size_t batch) const {
        std::vector<size_t> perm = epoch_permutation(shuffle_seed, epoch, total);
        size_t lo = batch * batch_size;
        size_t hi = std::min(total, lo + batch_size);
        return std::vector<size_t>(perm.begin() + lo, perm.begin() + hi);
    }
};

/// Trainer role. Index 1 paces the pipeline: it slices the cached DP batch,
/// relays forward, applies its update when the gradient returns, and decides
/// epoch boundaries from the relayed epoch-loss control messages.
class TrainerRole : public Role {
public:
    TrainerRole(int id, const ExperimentPlan& plan, nn::Segment segment)
        : Role(id), plan_(plan), segment_(std::move(segment)), is_first_(id == 1),
          is_last_(static_cast<uint32_t>(id) == plan.n) {}

    void handle(const ProtocolMessage& msg, Transport& net) override {
        switch (msg.kind) {
            case MsgKind::Activation:
                if (is_first_ && msg.from == 0) {
                    cache_ = msg.tensor;
                    planner_ = BatchPlanner{cache_.rows(), plan_.batch_size, plan_.shuffle_seed};
                    maybe_begin(net);
                } else {
                    on_activation(msg.tensor, net);
                }
                break;
            case MsgKind::Gradient:
                on_gradient(msg.tensor, net);
                break;
            case MsgKind::PseudoLabels:
                if (!is_last_) throw std::runtime_error("trainer " + std::to_string(id()) +
                                                        ": pseudo labels delivered off the label link");
                labels_ = msg.labels;
                planner_ = BatchPlanner{labels_.size(), plan_.batch_size, plan_.shuffle_seed};
                if (!is_first_) {
                    // Tn follows the shared schedule with its own counters.
                    epoch_ = 1;
                    batch_ = 0;
                    for (auto& act : pending_acts_) on_activation(act, net);
                    pending_acts_.clear();
                }
                maybe_begin(net);
                break;
            case MsgKind::Control:
                on_control(msg.control, net);
                break;
        }
    }

    bool done() const override { return done_; }

    std::vector<int> incoming_peers() const override {
        std::vector<int> peers;
        if (is_first_) peers.push_back(0);
        else peers.push_back(id() - 1);
        if (is_last_ && !is_first_) peers.push_back(0);
        if (!is_last_) peers.push_back(id() + 1);
        return peers;
    }

    nn::Segment take_segment() { return std::move(segment_); }
    const std::vector<double>& epoch_losses() const { return epoch_losses_; }
    uint32_t epochs_run() const { return epoch_; }

private:
    // T1 starts once it holds the cache (and, when it is also Tn, the labels).
    void maybe_begin(Transport& net) {
        if (!is_first_) return;
        if (cache_.empty()) return;
        if (is_last_ && labels_.empty()) return;
        epoch_ = 1;
        batch_ = 0;
        start_batch(net);
    }

    void start_batch(Transport& net) {
        current_rows_ = planner_.batch_rows(epoch_, batch_);
        TensorF64 input = cache_.gather_rows(current_rows_);
        forward_and_relay(input, net);
    }

    void forward_and_relay(const TensorF64& input, Transport& net) {
        auto [out, trace] = nn::segment_forward(segment_, input);
        trace_ = std::move(trace);
        if (is_last_) {
            finish_batch_at_tail(out, net);
        } else {
            ProtocolMessage m;
            m.kind = MsgKind::Activation;
            m.from = id();
            m.to = id() + 1;
            m.tensor = std::move(out);
            net.send(std::move(m));
        }
    }

    void on_activation(const TensorF64& act, Transport& net) {
        if (is_last_) {
            if (labels_.empty()) {
                // Labels travel on their own link and may still be in flight.
                pending_acts_.push_back(act);
                return;
            }
            current_rows_ = planner_.batch_rows(epoch_, batch_);
        }
        forward_and_relay(act, net);
    }

    void finish_batch_at_tail(const TensorF64& logits, Transport& net) {
        std::vector<int32_t> batch_labels;
        batch_labels.reserve(current_rows_.size());
        for (size_t r : current_rows_) batch_labels.push_back(labels_[r]);
        nn::XentResult xent = nn::softmax_xent(logits, batch_labels);
        loss_sum_ += xent.loss;
        ++loss_batches_;
        auto [grads, input_grad] = nn::segment_backward(segment_, *trace_, xent.grad);
        trace_.reset();
        nn::sgd_step(segment_, grads, plan_.lr, plan_.momentum);
        if (is_first_) {
            // Single-trainer degenerate case: no relay at all.
            after_own_update(net);
        } else {
            ProtocolMessage m;
            m.kind = MsgKind::Gradient;
            m.from = id();
            m.to = id() - 1;
            m.tensor = std::move(input_grad);
            net.send(std::move(m));
            advance_tail_schedule(net);
        }
    }

    void on_gradient(const TensorF64& upstream, Transport& net) {
        if (!trace_) throw std::runtime_error("trainer " + std::to_string(id()) + ": gradient without trace");
        auto [grads, input_grad] = nn::segment_backward(segment_, *trace_, upstream);
        trace_.reset();
        nn::sgd_step(segment_, grads, plan_.lr, plan_.momentum);
        if (!is_first_) {
            ProtocolMessage m;
            m.kind = MsgKind::Gradient;
            m.from = id();
            m.to = id() - 1;
            m.tensor = std::move(input_grad);
            net.send(std::move(m));
        } else {
            after_own_update(net);
        }
    }

    // Tail-side batch counters (distinct from T1's pacing when n > 1).
    void advance_tail_schedule(Transport& net) {
        ++batch_;
        if (batch_ == planner_.batches_per_epoch()) {
            ProtocolMessage m;
            m.kind = MsgKind::Control;
            m.from = id();
            m.to = id() - 1;
            m.control = {ControlCode::EpochLoss, loss_sum_ / loss_batches_};
            net.send(std::move(m));
            loss_sum_ = 0.0;
            loss_batches_ = 0;
            batch_ = 0;
            ++epoch_;
        }
    }

    // T1 bookkeeping after its own sgd step: next batch, or wait for the
    // relayed epoch loss at an epoch boundary.
    void after_own_update(Transport& net) {
        ++batch_;
        if (batch_ < planner_.batches_per_epoch()) {
            start_batch(net);
            return;
        }
        if (is_last_) {
            // n == 1: close the epoch locally.
            epoch_losses_.push_back(loss_sum_ / loss_batches_);
            loss_sum_ = 0.0;
            loss_batches_ = 0;
            end_of_epoch(net);
        }
        // n > 1: wait for Control(EpochLoss) from downstream.
    }

    void on_control(const ControlPayload& c, Transport& net) {
        if (c.code == ControlCode::Done) {
            if (!is_last_) relay_done(net);
            done_ = true;
            return;
        }
        if (c.code == ControlCode::EpochLoss) {
            if (is_first_) {
                epoch_losses_.push_back(c.value);
                end_of_epoch(net);
            } else {
                ProtocolMessage m;
                m.kind = MsgKind::Control;
                m.from = id();
                m.to = id() - 1;
                m.control = c;
                net.send(std::move(m));
            }
        }
    }

    void end_of_epoch(Transport& net) {
        bool stop = epoch_losses_.size() >= plan_.epochs;
        if (!stop && plan_.early_stop && epoch_losses_.size() >= 4) {
            stop = true;
            size_t last = epoch_losses_.size() - 1;
            for (size_t k = 0; k < 3; ++k)
                if (epoch_losses_[last - k - 1] - epoch_losses_[last - k] >= 1e-4) stop = false;
        }
        if (stop) {
            if (!is_last_) relay_done(net);
            done_ = true;
            return;
        }
        ++epoch_;
        batch_ = 0;
        start_batch(net);
    }

    void relay_done(Transport& net) {
        ProtocolMessage m;
        m.kind = MsgKind::Control;
        m.from = id();
        m.to = id() + 1;
        m.control = {ControlCode::Done, 0.0};
        net.send(std::move(m));
    }

    const ExperimentPlan& plan_;
    nn::Segment segment_;
    bool is_first_;
    bool is_last_;
    bool done_ = false;

    TensorF64 cache_;             // T1 only
    std::vector<int32_t> labels_; // Tn only
    BatchPlanner planner_;
    uint32_t epoch_ = 0;
    size_t batch_ = 0;
    std::vector<size_t> current_rows_;
    std::vector<TensorF64> pending_acts_;
    std::optional<nn::ForwardTrace> trace_;
    double loss_sum_ = 0.0;
    size_t loss_batches_ = 0;
    std::vector<double> epoch_losses_; // T1's record of relayed epoch losses
};

} // namespace

TrainingResult run_training(const ExperimentPlan& plan, const dp::DpActivationBatch& cache,
                            const std::vector<int32_t>& pseudo_labels, Transport& net) {
    Topology topo = negotiate(plan);
    if (cache.values.cols() != topo.interface_widths.front())
        throw std::invalid_argument("run_training: cache width " + std::to_string(cache.values.cols()) +
                                    " != T1 input " + std::to_string(topo.interface_widths.front()));
    if (pseudo_labels.size() != cache.values.rows())
        throw std::invalid_argument("run_training: label count != cache rows");
    for (int32_t y : pseudo_labels)
        if (y < 0 || static_cast<uint32_t>(y) >= topo.pseudo_classes)
            throw std::out_of_range("run_training: pseudo label outside the expanded space");

    std::vector<nn::Segment> segments = init_trainer_segments(plan);
    std::vector<std::unique_ptr<TrainerRole>> roles;
    for (uint32_t i = 0; i < plan.n; ++i)
        roles.push_back(std::make_unique<TrainerRole>(static_cast<int>(i + 1), plan, std::move(segments[i])));

    // The data client releases its two artifacts and ceases participation.
    auto client_release = [&]() {
        ProtocolMessage act;
        act.kind = MsgKind::Activation;
        act.from = 0;
        act.to = 1;
        act.tensor = cache.values;
        net.send(std::move(act));
        ProtocolMessage lab;
        lab.kind = MsgKind::PseudoLabels;
        lab.from = 0;
        lab.to = static_cast<int>(plan.n);
        lab.labels = pseudo_labels;
        net.send(std::move(lab));
    };

    std::vector<Role*> raw;
    for (auto& r : roles) raw.push_back(r.get());
    net.run(raw, client_release);

    TrainingResult result;
    for (auto& r : roles) result.segments.push_back(r->take_segment());
    result.epoch_losses = roles.front()->epoch_losses();
    result.epochs_run = static_cast<uint32_t>(result.epoch_losses.size());
    return result;
}

TrainingResult run_training(const ExperimentPlan& plan, const dp::DpActivationBatch& cache,
                            const std::vector<int32_t>& pseudo_labels) {
    InprocTransport net;
    return run_training(plan, cache, pseudo_labels, net);
}

TensorF64 anchor_activation(std::span<const nn::Segment> segments, const dp::DpActivationBatch& cache) {
    TensorF64 x = cache.values;
    for (size_t i = 0; i < segments.size(); ++i) {
        if (!segments[i].frozen)
            throw std::logic_error("anchor_activation: segment " + std::to_string(i + 1) + " is not frozen");
        x = nn::segment_infer(segments[i], x);
    }
    return x;
}

LatencyEstimate estimate_latency(const std::vector<double>& interface_bytes, double bandwidth_bytes_per_s,
                                 double per_link_overhead_s) {
    if (!(bandwidth_bytes_per_s > 0.0)) throw std::invalid_argument("estimate_latency: bandwidth must be > 0");
    LatencyEstimate est;
    for (double s : interface_bytes) {
        double t = s / bandwidth_bytes_per_s + per_link_overhead_s;
        est.per_link.push_back(t);
        est.total += t;
    }
    return est;
}

} // namespace clicooper::pipeline
