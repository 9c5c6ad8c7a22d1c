#pragma once

// Reverse-mode differentiation over a linear tape of dense vector nodes.
// A scalar is a node of size one. Parameters live outside the tape; fused
// affine nodes read them in place and accumulate into their grad slots.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "evada/error.hpp"

namespace evada {

/// Floor applied inside every logarithm of the probability-space losses.
inline constexpr double kLogFloor = 1e-12;

struct Parameter {
    std::string name;
    std::vector<double> value;
    std::vector<double> grad;

    Parameter() = default;
    Parameter(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.0), grad(size, 0.0) {}

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

class Tape;

/// Handle to a node on a Tape.
class DiffValue {
public:
    DiffValue() = default;
    DiffValue(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    std::span<const double> value() const;
    std::size_t size() const;
    double scalar() const;
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives gradient.
    DiffValue constant(std::vector<double> v, std::string_view label = "constant") {
        return push(std::move(v), label, {}, false);
    }

    /// Leaf whose gradient is kept (inspect it with grad() after backward).
    DiffValue variable(std::vector<double> v, std::string_view label = "variable") {
        return push(std::move(v), label, {}, true);
    }

    /// Records an op result. The backward function is dropped when no parent
    /// needs gradients.
    DiffValue record(std::vector<double> v, std::string_view label, bool requires_grad, BackwardFn fn) {
        return push(std::move(v), label, requires_grad ? std::move(fn) : BackwardFn{}, requires_grad);
    }

    std::span<const double> value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::string_view label(std::size_t id) const { return nodes_.at(id).label; }

    /// Gradient of the last backward() target w.r.t. node id (zeros if unreached).
    std::span<const double> grad(std::size_t id) const {
        const Node& n = nodes_.at(id);
        if (n.grad.empty()) return zeros(n.value.size());
        return n.grad;
    }

    /// Mutable gradient slot of a parent, for use inside backward functions.
    std::vector<double>& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        n.touched = true;
        return n.grad;
    }

    void note_parameter(Parameter* p) {
        if (std::find(touched_params_.begin(), touched_params_.end(), p) == touched_params_.end()) {
            touched_params_.push_back(p);
        }
    }

    /// Propagates d(loss)/d(node) to every reachable node and trainable
    /// parameter, in reverse recording order. A tape supports a single
    /// backward pass.
    void backward(DiffValue loss) {
        if (consumed_) fail(ErrorCategory::State, "tape already consumed by a previous backward pass");
        if (loss.tape() != this) fail(ErrorCategory::State, "loss was not recorded on this tape");
        if (nodes_.at(loss.id()).value.size() != 1) fail(ErrorCategory::Structural, "backward needs a scalar loss");
        consumed_ = true;
        grad_slot(loss.id())[0] = 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.touched || !n.backward) continue;
            if (!all_finite(n.grad)) {
                fail(ErrorCategory::Numeric, "non-finite gradient at node '" + std::string(n.label) + "'");
            }
            n.backward(*this, i);
        }
        for (Parameter* p : touched_params_) {
            if (!all_finite(p->grad)) fail(ErrorCategory::Numeric, "non-finite gradient in layer '" + p->name + "'");
        }
    }

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::vector<double> value;
        std::vector<double> grad;
        std::string_view label;
        BackwardFn backward;
        bool requires_grad = false;
        bool touched = false;
    };

    DiffValue push(std::vector<double> v, std::string_view label, BackwardFn fn, bool requires_grad) {
        if (consumed_) fail(ErrorCategory::State, "cannot record on a consumed tape");
        if (!all_finite(v)) fail(ErrorCategory::Numeric, "non-finite value produced by '" + std::string(label) + "'");
        nodes_.push_back(Node{std::move(v), {}, label, std::move(fn), requires_grad, false});
        return {this, nodes_.size() - 1};
    }

    std::span<const double> zeros(std::size_t n) const {
        if (zero_buffer_.size() < n) zero_buffer_.assign(n, 0.0);
        return {zero_buffer_.data(), n};
    }

    std::vector<Node> nodes_;
    std::vector<Parameter*> touched_params_;
    mutable std::vector<double> zero_buffer_;
    bool consumed_ = false;
};

inline std::span<const double> DiffValue::value() const { return tape_->value(id_); }
inline std::size_t DiffValue::size() const { return tape_->value(id_).size(); }
inline bool DiffValue::requires_grad() const { return tape_->requires_grad(id_); }
inline double DiffValue::scalar() const {
    const auto v = value();
    if (v.size() != 1) fail(ErrorCategory::Structural, "value is not a scalar");
    return v[0];
}

// ---------------------------------------------------------------------------
// Value-level kernels shared by the tape ops and by inference code.

inline std::vector<double> softmax_values(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

inline double floored_log(double p) { return std::log(std::max(p, kLogFloor)); }

inline double entropy_value(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) h -= v * floored_log(v);
    return h;
}

inline double kl_value(std::span<const double> p, std::span<const double> q) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) d += p[i] * (floored_log(p[i]) - floored_log(q[i]));
    return d;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Tape ops.

/// Geometry of a 3x3 same-padding convolution over a C x H x W input.
struct ConvShape {
    std::size_t channels_in = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels_out = 0;

    std::size_t input_size() const noexcept { return channels_in * height * width; }
    std::size_t output_size() const noexcept { return channels_out * height * width; }
    std::size_t weight_size() const noexcept { return channels_out * channels_in * 9; }
};

/// y[o, y, x] = b[o] + sum_{c, dy, dx} w[o, c, dy+1, dx+1] * in[c, y+dy, x+dx], zero padding.
inline std::vector<double> conv3x3_values(std::span<const double> w, std::span<const double> b,
                                          std::span<const double> in, const ConvShape& s) {
    const std::size_t plane = s.height * s.width;
    std::vector<double> out(s.output_size());
    for (std::size_t o = 0; o < s.channels_out; ++o) {
        double* dst = out.data() + o * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = b[o];
        for (std::size_t c = 0; c < s.channels_in; ++c) {
            const double* src = in.data() + c * plane;
            const double* k = w.data() + (o * s.channels_in + c) * 9;
            for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                    const double kv = k[(ky + 1) * 3 + (kx + 1)];
                    for (std::size_t y = 0; y < s.height; ++y) {
                        const auto sy = static_cast<std::ptrdiff_t>(y) + ky;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(s.height)) continue;
                        const std::size_t x0 = kx < 0 ? 1 : 0;
                        const std::size_t x1 = kx > 0 ? s.width - 1 : s.width;
                        const double* row = src + static_cast<std::size_t>(sy) * s.width;
                        double* drow = dst + y * s.width;
                        for (std::size_t x = x0; x < x1; ++x) drow[x] += kv * row[x + kx];
                    }
                }
            }
        }
    }
    return out;
}

/// 2x2 average pooling with stride 2 over C x H x W (H and W even).
inline std::vector<double> avg_pool2_values(std::span<const double> in, std::size_t channels, std::size_t height,
                                            std::size_t width) {
    const std::size_t oh = height / 2;
    const std::size_t ow = width / 2;
    std::vector<double> out(channels * oh * ow);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* src = in.data() + c * height * width;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const double* p = src + 2 * y * width + 2 * x;
                out[(c * oh + y) * ow + x] = 0.25 * (p[0] + p[1] + p[width] + p[width + 1]);
            }
        }
    }
    return out;
}

namespace ad {

namespace detail {
inline void same_tape(DiffValue a, DiffValue b) {
    if (a.tape() != b.tape()) fail(ErrorCategory::State, "operands live on different tapes");
}
inline void same_size(DiffValue a, DiffValue b, std::string_view op) {
    if (a.size() != b.size()) {
        fail(ErrorCategory::Structural, std::string(op) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                                            std::to_string(b.size()));
    }
}
}  // namespace detail

/// y = W x + b with W stored row-major (out x in). When trainable is false
/// the parameters act as constants: gradient still flows to x but never
/// into W or b.
inline DiffValue affine(Parameter& weight, Parameter& bias, DiffValue x, bool trainable) {
    const std::size_t in = x.size();
    const std::size_t out = bias.size();
    if (weight.size() != in * out) {
        fail(ErrorCategory::Structural, "layer '" + weight.name + "' expects input of size " +
                                            std::to_string(weight.size() / (out == 0 ? 1 : out)) + ", got " +
                                            std::to_string(in));
    }
    const auto xv = x.value();
    std::vector<double> y(bias.value);
    const double* w = weight.value.data();
    for (std::size_t o = 0; o < out; ++o) {
        const double* row = w + o * in;
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * xv[i];
        y[o] += acc;
    }
    Tape& tape = *x.tape();
    const std::size_t xid = x.id();
    const bool x_grad = x.requires_grad();
    if (trainable) {
        tape.note_parameter(&weight);
        tape.note_parameter(&bias);
    }
    return tape.record(std::move(y), weight.name, trainable || x_grad,
                       [&weight, &bias, xid, x_grad, trainable, in, out](Tape& t, std::size_t self) {
                           const auto dy = t.grad(self);
                           const auto xv = t.value(xid);
                           const double* w = weight.value.data();
                           if (x_grad) {
                               auto& dx = t.grad_slot(xid);
                               for (std::size_t o = 0; o < out; ++o) {
                                   const double g = dy[o];
                                   if (g == 0.0) continue;
                                   const double* row = w + o * in;
                                   for (std::size_t i = 0; i < in; ++i) dx[i] += g * row[i];
                               }
                           }
                           if (trainable) {
                               double* dw = weight.grad.data();
                               for (std::size_t o = 0; o < out; ++o) {
                                   const double g = dy[o];
                                   bias.grad[o] += g;
                                   if (g == 0.0) continue;
                                   double* row = dw + o * in;
                                   for (std::size_t i = 0; i < in; ++i) row[i] += g * xv[i];
                               }
                           }
                       });
}

/// 3x3 same-padding convolution; parameters are read in place like affine().
inline DiffValue conv3x3(Parameter& weight, Parameter& bias, DiffValue x, const ConvShape& shape, bool trainable) {
    if (x.size() != shape.input_size() || weight.size() != shape.weight_size() || bias.size() != shape.channels_out) {
        fail(ErrorCategory::Structural, "layer '" + weight.name + "' expects input of size " +
                                            std::to_string(shape.input_size()) + ", got " + std::to_string(x.size()));
    }
    auto y = conv3x3_values(weight.value, bias.value, x.value(), shape);
    Tape& tape = *x.tape();
    const std::size_t xid = x.id();
    const bool x_grad = x.requires_grad();
    if (trainable) {
        tape.note_parameter(&weight);
        tape.note_parameter(&bias);
    }
    return tape.record(std::move(y), weight.name, trainable || x_grad,
                       [&weight, &bias, xid, x_grad, trainable, shape](Tape& t, std::size_t self) {
                           const auto dy = t.grad(self);
                           const auto xv = t.value(xid);
                           const std::size_t plane = shape.height * shape.width;
                           std::vector<double>* dx = x_grad ? &t.grad_slot(xid) : nullptr;
                           for (std::size_t o = 0; o < shape.channels_out; ++o) {
                               const double* g = dy.data() + o * plane;
                               if (trainable) {
                                   for (std::size_t i = 0; i < plane; ++i) bias.grad[o] += g[i];
                               }
                               for (std::size_t c = 0; c < shape.channels_in; ++c) {
                                   const double* src = xv.data() + c * plane;
                                   const std::size_t kbase = (o * shape.channels_in + c) * 9;
                                   for (int ky = -1; ky <= 1; ++ky) {
                                       for (int kx = -1; kx <= 1; ++kx) {
                                           const std::size_t k = kbase + static_cast<std::size_t>((ky + 1) * 3 + kx + 1);
                                           const double kv = weight.value[k];
                                           double acc = 0.0;
                                           for (std::size_t y = 0; y < shape.height; ++y) {
                                               const auto sy = static_cast<std::ptrdiff_t>(y) + ky;
                                               if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(shape.height)) continue;
                                               const std::size_t x0 = kx < 0 ? 1 : 0;
                                               const std::size_t x1 = kx > 0 ? shape.width - 1 : shape.width;
                                               const std::size_t srow = static_cast<std::size_t>(sy) * shape.width;
                                               const double* grow = g + y * shape.width;
                                               for (std::size_t xx = x0; xx < x1; ++xx) {
                                                   acc += grow[xx] * src[srow + xx + kx];
                                                   if (dx) (*dx)[c * plane + srow + xx + kx] += grow[xx] * kv;
                                               }
                                           }
                                           if (trainable) weight.grad[k] += acc;
                                       }
                                   }
                               }
                           }
                       });
}

inline DiffValue avg_pool2(DiffValue x, std::size_t channels, std::size_t height, std::size_t width) {
    if (x.size() != channels * height * width || height % 2 != 0 || width % 2 != 0) {
        fail(ErrorCategory::Structural, "avg_pool2 needs an input of even height and width");
    }
    auto y = avg_pool2_values(x.value(), channels, height, width);
    const std::size_t xid = x.id();
    return x.tape()->record(std::move(y), "avg_pool2", x.requires_grad(),
                            [xid, channels, height, width](Tape& t, std::size_t self) {
                                const auto dy = t.grad(self);
                                auto& dx = t.grad_slot(xid);
                                const std::size_t oh = height / 2;
                                const std::size_t ow = width / 2;
                                for (std::size_t c = 0; c < channels; ++c) {
                                    for (std::size_t y = 0; y < oh; ++y) {
                                        for (std::size_t xx = 0; xx < ow; ++xx) {
                                            const double g = 0.25 * dy[(c * oh + y) * ow + xx];
                                            const std::size_t p = c * height * width + 2 * y * width + 2 * xx;
                                            dx[p] += g;
                                            dx[p + 1] += g;
                                            dx[p + width] += g;
                                            dx[p + width + 1] += g;
                                        }
                                    }
                                }
                            });
}

inline DiffValue relu(DiffValue x) {
    std::vector<double> y(x.value().begin(), x.value().end());
    for (double& v : y) v = v > 0.0 ? v : 0.0;
    const std::size_t xid = x.id();
    return x.tape()->record(std::move(y), "relu", x.requires_grad(), [xid](Tape& t, std::size_t self) {
        const auto dy = t.grad(self);
        const auto xv = t.value(xid);
        auto& dx = t.grad_slot(xid);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            if (xv[i] > 0.0) dx[i] += dy[i];
        }
    });
}

inline DiffValue sigmoid(DiffValue x) {
    std::vector<double> y(x.value().begin(), x.value().end());
    for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
    const std::size_t xid = x.id();
    return x.tape()->record(std::move(y), "sigmoid", x.requires_grad(), [xid](Tape& t, std::size_t self) {
        const auto dy = t.grad(self);
        const auto yv = t.value(self);
        auto& dx = t.grad_slot(xid);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
    });
}

/// Shift-by-max softmax; the result is a probability vector.
inline DiffValue softmax(DiffValue logits) {
    auto y = softmax_values(logits.value());
    const std::size_t xid = logits.id();
    return logits.tape()->record(std::move(y), "softmax", logits.requires_grad(), [xid](Tape& t, std::size_t self) {
        const auto dy = t.grad(self);
        const auto yv = t.value(self);
        double dot = 0.0;
        for (std::size_t i = 0; i < yv.size(); ++i) dot += dy[i] * yv[i];
        auto& dx = t.grad_slot(xid);
        for (std::size_t i = 0; i < yv.size(); ++i) dx[i] += yv[i] * (dy[i] - dot);
    });
}

/// Barrier: same value, no gradient flows back through it.
inline DiffValue stop_gradient(DiffValue x) {
    return x.tape()->record(std::vector<double>(x.value().begin(), x.value().end()), "stop_gradient", false, {});
}

/// H(p) = -sum p log p.
inline DiffValue entropy(DiffValue p) {
    const std::size_t pid = p.id();
    return p.tape()->record({entropy_value(p.value())}, "entropy", p.requires_grad(), [pid](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const auto pv = t.value(pid);
        auto& dp = t.grad_slot(pid);
        for (std::size_t i = 0; i < pv.size(); ++i) {
            dp[i] += g * (pv[i] > kLogFloor ? -(std::log(pv[i]) + 1.0) : -std::log(kLogFloor));
        }
    });
}

/// KL(p || q) = sum p (log p - log q). Gradient flows into both arguments.
inline DiffValue kl_div(DiffValue p, DiffValue q) {
    detail::same_tape(p, q);
    detail::same_size(p, q, "kl_div");
    const std::size_t pid = p.id();
    const std::size_t qid = q.id();
    const bool pg = p.requires_grad();
    const bool qg = q.requires_grad();
    return p.tape()->record({kl_value(p.value(), q.value())}, "kl_div", pg || qg,
                            [pid, qid, pg, qg](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                const auto pv = t.value(pid);
                                const auto qv = t.value(qid);
                                if (pg) {
                                    auto& dp = t.grad_slot(pid);
                                    for (std::size_t i = 0; i < pv.size(); ++i) {
                                        const double own = pv[i] > kLogFloor ? 1.0 : 0.0;
                                        dp[i] += g * (floored_log(pv[i]) - floored_log(qv[i]) + own);
                                    }
                                }
                                if (qg) {
                                    auto& dq = t.grad_slot(qid);
                                    for (std::size_t i = 0; i < qv.size(); ++i) {
                                        if (qv[i] > kLogFloor) dq[i] -= g * pv[i] / qv[i];
                                    }
                                }
                            });
}

/// -log p[label].
inline DiffValue cross_entropy(DiffValue p, std::size_t label) {
    if (label >= p.size()) {
        fail(ErrorCategory::Range, "label " + std::to_string(label) + " outside " + std::to_string(p.size()) + " classes");
    }
    const std::size_t pid = p.id();
    return p.tape()->record({-floored_log(p.value()[label])}, "cross_entropy", p.requires_grad(),
                            [pid, label](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                const double pl = t.value(pid)[label];
                                if (pl > kLogFloor) t.grad_slot(pid)[label] -= g / pl;
                            });
}

/// Mean squared error against a fixed target.
inline DiffValue mse(DiffValue a, std::span<const double> target) {
    if (a.size() != target.size()) fail(ErrorCategory::Structural, "mse: size mismatch");
    const auto av = a.value();
    const double n = static_cast<double>(av.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - target[i]) * (av[i] - target[i]);
    const std::size_t aid = a.id();
    std::vector<double> tgt(target.begin(), target.end());
    return a.tape()->record({acc / n}, "mse", a.requires_grad(), [aid, tgt = std::move(tgt), n](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        const auto av = t.value(aid);
        auto& da = t.grad_slot(aid);
        for (std::size_t i = 0; i < av.size(); ++i) da[i] += g * 2.0 * (av[i] - tgt[i]) / n;
    });
}

/// Elementwise weighted sum of equally sized nodes: sum_k w_k x_k.
inline DiffValue weighted_sum(std::span<const DiffValue> xs, std::span<const double> weights) {
    if (xs.empty()) fail(ErrorCategory::EmptyInput, "weighted_sum of no operands");
    if (xs.size() != weights.size()) fail(ErrorCategory::Structural, "weighted_sum: weight count mismatch");
    std::vector<double> y(xs[0].size(), 0.0);
    bool rg = false;
    std::vector<std::size_t> ids;
    std::vector<double> ws(weights.begin(), weights.end());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        detail::same_tape(xs[0], xs[k]);
        detail::same_size(xs[0], xs[k], "weighted_sum");
        const auto v = xs[k].value();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += ws[k] * v[i];
        rg = rg || xs[k].requires_grad();
        ids.push_back(xs[k].id());
    }
    return xs[0].tape()->record(std::move(y), "weighted_sum", rg, [ids = std::move(ids), ws](Tape& t, std::size_t self) {
        const auto dy = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k]) || ws[k] == 0.0) continue;
            auto& dx = t.grad_slot(ids[k]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ws[k] * dy[i];
        }
    });
}

inline DiffValue sum(std::span<const DiffValue> xs) {
    return weighted_sum(xs, std::vector<double>(xs.size(), 1.0));
}

inline DiffValue mean(std::span<const DiffValue> xs) {
    return weighted_sum(xs, std::vector<double>(xs.size(), 1.0 / static_cast<double>(xs.size())));
}

inline DiffValue add(DiffValue a, DiffValue b) {
    const DiffValue xs[2] = {a, b};
    return sum(xs);
}

inline DiffValue scale(DiffValue a, double c) {
    const DiffValue xs[1] = {a};
    const double w[1] = {c};
    return weighted_sum(xs, w);
}

}  // namespace ad
}  // namespace evada
