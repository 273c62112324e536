#include "clicooper/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "clicooper/rng.hpp"

namespace clicooper::nn {

namespace {

double apply_act(Activation a, double x) {
    return a == Activation::Relu ? (x > 0.0 ? x : 0.0) : x;
}

double act_grad(Activation a, double pre) {
    return a == Activation::Relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0;
}

// y = x * W^T + b for one layer, x is (batch x in).
TensorF64 affine(const DenseLayer& l, const TensorF64& x) {
    const uint32_t batch = x.rows();
    const uint32_t in = l.in_dim();
    const uint32_t out = l.out_dim();
    TensorF64 y = TensorF64::zeros({batch, out});
    for (uint32_t r = 0; r < batch; ++r) {
        const double* xr = &x.values[static_cast<size_t>(r) * in];
        double* yr = &y.values[static_cast<size_t>(r) * out];
        for (uint32_t j = 0; j < out; ++j) {
            const double* wj = &l.weight.values[static_cast<size_t>(j) * in];
            double acc = l.bias[j];
            for (uint32_t k = 0; k < in; ++k) acc += xr[k] * wj[k];
            yr[j] = acc;
        }
    }
    return y;
}

} // namespace

uint32_t Segment::input_dim() const {
    if (layers.empty()) throw std::logic_error("Segment: empty");
    return layers.front().in_dim();
}

uint32_t Segment::output_dim() const {
    if (layers.empty()) throw std::logic_error("Segment: empty");
    return layers.back().out_dim();
}

size_t Segment::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

void Segment::validate() const {
    if (layers.empty()) throw std::invalid_argument("Segment: no layers");
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.shape.size() != 2) throw std::invalid_argument("Segment: weight must be rank 2");
        if (l.bias.size() != l.out_dim())
            throw std::invalid_argument("Segment: layer " + std::to_string(i) + " bias/weight row mismatch");
        if (i > 0 && layers[i - 1].out_dim() != l.in_dim())
            throw std::invalid_argument("Segment: layer " + std::to_string(i - 1) + " out " +
                                        std::to_string(layers[i - 1].out_dim()) + " != layer " +
                                        std::to_string(i) + " in " + std::to_string(l.in_dim()));
    }
    if (!weight_vel.empty()) {
        if (weight_vel.size() != layers.size() || bias_vel.size() != layers.size())
            throw std::invalid_argument("Segment: velocity buffer count mismatch");
        for (size_t i = 0; i < layers.size(); ++i) {
            if (!weight_vel[i].same_shape(layers[i].weight) || bias_vel[i].size() != layers[i].bias.size())
                throw std::invalid_argument("Segment: velocity shape mismatch at layer " + std::to_string(i));
        }
    }
}

void Segment::reset_velocity() {
    weight_vel.clear();
    bias_vel.clear();
    for (const auto& l : layers) {
        weight_vel.push_back(TensorF64::zeros(l.weight.shape));
        bias_vel.emplace_back(l.bias.size(), 0.0);
    }
}

ParamGrads ParamGrads::zeros_like(const Segment& s) {
    ParamGrads g;
    for (const auto& l : s.layers) {
        g.weight.push_back(TensorF64::zeros(l.weight.shape));
        g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
}

std::pair<TensorF64, ForwardTrace> segment_forward(const Segment& s, const TensorF64& batch) {
    if (batch.shape.size() != 2)
        throw std::invalid_argument("segment_forward: batch must be rank 2, got " + batch.shape_str());
    if (batch.cols() != s.input_dim())
        throw std::invalid_argument("segment_forward: batch width " + std::to_string(batch.cols()) +
                                    " != segment input " + std::to_string(s.input_dim()));
    ForwardTrace trace;
    TensorF64 x = batch;
    for (const auto& l : s.layers) {
        trace.inputs.push_back(x);
        TensorF64 pre = affine(l, x);
        trace.pre_activations.push_back(pre);
        if (l.activation == Activation::Relu) {
            for (double& v : pre.values) v = v > 0.0 ? v : 0.0;
        }
        x = std::move(pre);
    }
    return {std::move(x), std::move(trace)};
}

TensorF64 segment_infer(const Segment& s, const TensorF64& batch) {
    return segment_forward(s, batch).first;
}

std::pair<ParamGrads, TensorF64> segment_backward(const Segment& s, const ForwardTrace& trace,
                                                  const TensorF64& upstream_grad) {
    if (trace.depth() != s.layers.size())
        throw std::invalid_argument("segment_backward: trace depth " + std::to_string(trace.depth()) +
                                    " != layer count " + std::to_string(s.layers.size()));
    if (upstream_grad.cols() != s.output_dim() || upstream_grad.rows() != trace.inputs[0].rows())
        throw std::invalid_argument("segment_backward: upstream grad shape " + upstream_grad.shape_str() +
                                    " does not match segment output");

    ParamGrads grads = ParamGrads::zeros_like(s);
    TensorF64 g = upstream_grad;
    for (size_t li = s.layers.size(); li-- > 0;) {
        const DenseLayer& l = s.layers[li];
        const TensorF64& x = trace.inputs[li];
        const TensorF64& pre = trace.pre_activations[li];
        const uint32_t batch = x.rows();
        const uint32_t in = l.in_dim();
        const uint32_t out = l.out_dim();

        // dL/dpre = upstream ∘ act'(pre)
        TensorF64 dpre = g;
        for (uint32_t r = 0; r < batch; ++r)
            for (uint32_t j = 0; j < out; ++j)
                dpre.at(r, j) *= act_grad(l.activation, pre.at(r, j));

        TensorF64& dW = grads.weight[li];
        std::vector<double>& db = grads.bias[li];
        TensorF64 gx = TensorF64::zeros({batch, in});
        for (uint32_t r = 0; r < batch; ++r) {
            const double* xr = &x.values[static_cast<size_t>(r) * in];
            const double* dr = &dpre.values[static_cast<size_t>(r) * out];
            double* gr = &gx.values[static_cast<size_t>(r) * in];
            for (uint32_t j = 0; j < out; ++j) {
                const double d = dr[j];
                db[j] += d;
                double* wgj = &dW.values[static_cast<size_t>(j) * in];
                const double* wj = &l.weight.values[static_cast<size_t>(j) * in];
                for (uint32_t k = 0; k < in; ++k) {
                    wgj[k] += d * xr[k];
                    gr[k] += d * wj[k];
                }
            }
        }
        g = std::move(gx);
    }
    return {std::move(grads), std::move(g)};
}

void sgd_step(Segment& s, const ParamGrads& grads, double lr, double momentum) {
    if (s.frozen) throw std::logic_error("sgd_step: segment is frozen");
    if (s.weight_vel.empty()) s.reset_velocity();
    if (grads.weight.size() != s.layers.size())
        throw std::invalid_argument("sgd_step: grad layer count mismatch");
    for (size_t li = 0; li < s.layers.size(); ++li) {
        DenseLayer& l = s.layers[li];
        TensorF64& vw = s.weight_vel[li];
        for (size_t i = 0; i < l.weight.values.size(); ++i) {
            vw.values[i] = momentum * vw.values[i] + grads.weight[li].values[i];
            l.weight.values[i] -= lr * vw.values[i];
        }
        std::vector<double>& vb = s.bias_vel[li];
        for (size_t i = 0; i < l.bias.size(); ++i) {
            vb[i] = momentum * vb[i] + grads.bias[li][i];
            l.bias[i] -= lr * vb[i];
        }
    }
}

XentResult softmax_xent(const TensorF64& logits, const std::vector<int32_t>& labels) {
    const uint32_t batch = logits.rows();
    const uint32_t classes = logits.cols();
    if (labels.size() != batch)
        throw std::invalid_argument("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                                    std::to_string(batch));
    for (int32_t y : labels)
        if (y < 0 || static_cast<uint32_t>(y) >= classes)
            throw std::out_of_range("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(classes) + ")");

    XentResult res;
    res.grad = TensorF64::zeros(logits.shape);
    double total = 0.0;
    for (uint32_t r = 0; r < batch; ++r) {
        const double* lr = &logits.values[static_cast<size_t>(r) * classes];
        double mx = lr[0];
        for (uint32_t c = 1; c < classes; ++c) mx = std::max(mx, lr[c]);
        double z = 0.0;
        for (uint32_t c = 0; c < classes; ++c) z += std::exp(lr[c] - mx);
        const double logz = std::log(z) + mx;
        total += logz - lr[labels[r]];
        double* gr = &res.grad.values[static_cast<size_t>(r) * classes];
        for (uint32_t c = 0; c < classes; ++c) gr[c] = std::exp(lr[c] - logz) / batch;
        gr[labels[r]] -= 1.0 / batch;
    }
    res.loss = total / batch;
    return res;
}

std::vector<double> flatten_params(const Segment& s) {
    std::vector<double> flat;
    flat.reserve(s.param_count());
    for (const auto& l : s.layers) {
        flat.insert(flat.end(), l.weight.values.begin(), l.weight.values.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void unflatten_params(Segment& s, const std::vector<double>& flat) {
    if (flat.size() != s.param_count())
        throw std::invalid_argument("unflatten_params: size " + std::to_string(flat.size()) + " != " +
                                    std::to_string(s.param_count()));
    size_t off = 0;
    for (auto& l : s.layers) {
        std::copy(flat.begin() + off, flat.begin() + off + l.weight.values.size(), l.weight.values.begin());
        off += l.weight.values.size();
        std::copy(flat.begin() + off, flat.begin() + off + l.bias.size(), l.bias.begin());
        off += l.bias.size();
    }
}

Segment merge_segments(std::span<const Segment> parts) {
    if (parts.empty()) throw std::invalid_argument("merge_segments: nothing to merge");
    Segment merged;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i > 0 && parts[i - 1].output_dim() != parts[i].input_dim())
            throw std::invalid_argument("merge_segments: segment " + std::to_string(i - 1) + " out " +
                                        std::to_string(parts[i - 1].output_dim()) + " != segment " +
                                        std::to_string(i) + " in " + std::to_string(parts[i].input_dim()));
        for (const auto& l : parts[i].layers) merged.layers.push_back(l);
        if (!parts[i].weight_vel.empty()) {
            for (const auto& v : parts[i].weight_vel) merged.weight_vel.push_back(v);
            for (const auto& v : parts[i].bias_vel) merged.bias_vel.push_back(v);
        }
    }
    if (!merged.weight_vel.empty() && merged.weight_vel.size() != merged.layers.size())
        merged.reset_velocity();
    merged.validate();
    return merged;
}

Segment init_segment(const std::vector<uint32_t>& widths, Activation hidden, Activation last,
                     uint64_t seed, InitStyle style) {
    if (widths.size() < 2) throw std::invalid_argument("init_segment: need at least {in, out}");
    CounterRng rng(seed);
    Segment s;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        const uint32_t in = widths[i];
        const uint32_t out = widths[i + 1];
        if (in == 0 || out == 0) throw std::invalid_argument("init_segment: zero width");
        DenseLayer l;
        l.weight = TensorF64::zeros({out, in});
        l.bias.assign(out, 0.0);
        l.activation = (i + 2 == widths.size()) ? last : hidden;
        if (style == InitStyle::NearIdentity) {
            if (in != out) throw std::invalid_argument("init_segment: NearIdentity needs square layers");
            const double scale = 0.05 / std::sqrt(static_cast<double>(in));
            for (uint32_t j = 0; j < out; ++j)
                for (uint32_t k = 0; k < in; ++k)
                    l.weight.at(j, k) = (j == k ? 1.0 : 0.0) + scale * rng.normal();
        } else {
            const double scale = std::sqrt(2.0 / static_cast<double>(in));
            for (double& w : l.weight.values) w = scale * rng.normal();
        }
        s.layers.push_back(std::move(l));
    }
    s.reset_velocity();
    s.validate();
    return s;
}

Activation activation_from_code(uint8_t code) {
    switch (code) {
        case 0: return Activation::Relu;
        case 1: return Activation::Identity;
        default: throw std::invalid_argument("unknown activation code " + std::to_string(code));
    }
}

} // namespace clicooper::nn
