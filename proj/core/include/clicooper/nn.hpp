#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "clicooper/tensor.hpp"

namespace clicooper::nn {

enum class Activation : uint8_t { Relu = 0, Identity = 1 };

struct DenseLayer {
    TensorF64 weight;          // out x in, row-major
    std::vector<double> bias;  // out
    Activation activation = Activation::Relu;

    uint32_t in_dim() const { return weight.cols(); }
    uint32_t out_dim() const { return weight.rows(); }
    size_t param_count() const { return weight.size() + bias.size(); }
};

/// One trainer's contiguous dense stack. A segment is the unit of
/// ownership: it carries its own optimizer state and can be frozen, after
/// which parameter updates are rejected.
struct Segment {
    std::vector<DenseLayer> layers;
    std::vector<TensorF64> weight_vel;
    std::vector<std::vector<double>> bias_vel;
    bool frozen = false;

    uint32_t input_dim() const;
    uint32_t output_dim() const;
    size_t param_count() const;
    void validate() const; // adjacent layer dims, bias lengths, velocity shapes
    void reset_velocity();
};

/// Per-layer cached inputs and pre-activations for one batch; exactly what
/// the backward pass needs.
struct ForwardTrace {
    std::vector<TensorF64> inputs;
    std::vector<TensorF64> pre_activations;
    size_t depth() const { return inputs.size(); }
};

struct ParamGrads {
    std::vector<TensorF64> weight;
    std::vector<std::vector<double>> bias;

    static ParamGrads zeros_like(const Segment& s);
};

std::pair<TensorF64, ForwardTrace> segment_forward(const Segment& s, const TensorF64& batch);

/// Forward without keeping a trace (inference path).
TensorF64 segment_infer(const Segment& s, const TensorF64& batch);

std::pair<ParamGrads, TensorF64> segment_backward(const Segment& s, const ForwardTrace& trace,
                                                  const TensorF64& upstream_grad);

/// v <- momentum * v + grad; w <- w - lr * v. Rejects frozen segments.
void sgd_step(Segment& s, const ParamGrads& grads, double lr, double momentum);

struct XentResult {
    double loss;
    TensorF64 grad; // d(mean loss)/d(logits) == (softmax - onehot) / batch
};
XentResult softmax_xent(const TensorF64& logits, const std::vector<int32_t>& labels);

/// Fixed flattening order: layer index, then weight row-major, then bias.
/// Watermark position masks and checkpoints both rely on this order.
std::vector<double> flatten_params(const Segment& s);
void unflatten_params(Segment& s, const std::vector<double>& flat);

/// Concatenate segments into one (interface dims must chain).
Segment merge_segments(std::span<const Segment> parts);

enum class InitStyle {
    Random,       // He-style scaled normal weights, zero bias
    NearIdentity, // identity plus small noise; square layers only
};

/// widths = {in, h1, ..., out}. Hidden layers use `hidden`, the last layer
/// `last`. Deterministic in `seed`.
Segment init_segment(const std::vector<uint32_t>& widths, Activation hidden, Activation last,
                     uint64_t seed, InitStyle style = InitStyle::Random);

Activation activation_from_code(uint8_t code);

} // namespace clicooper::nn
