#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "evada/autodiff.hpp"
#include "evada/error.hpp"
#include "evada/events.hpp"
#include "evada/nn.hpp"
#include "evada/optim.hpp"
#include "evada/representations.hpp"
#include "evada/rng.hpp"

namespace evada {

struct SurrogateConfig {
    std::size_t frames = 4;  // K, frames per stream (anchor + K-1 others)
    int recon_bins = 3;      // voxel bins fed to the reconstructor per segment
    double leak = 0.8;       // per-window decay of the integrated state
    double neutral = 0.5;    // gray level of "no change"
    double theta = 0.15;     // log-intensity increment per event
    bool normalize = true;   // max-abs normalize the reconstructor input
};

/// Maps a signed integrated state to [0, 1] around the neutral level using
/// the frame's largest magnitude; an all-zero state gives a flat neutral frame.
inline IntensityFrame state_to_frame(std::span<const double> state, int width, int height, double neutral,
                                     std::int64_t timestamp) {
    IntensityFrame f(width, height, neutral, timestamp);
    double m = 0.0;
    for (double s : state) m = std::max(m, std::abs(s));
    if (m == 0.0) return f;
    const double half = std::min(neutral, 1.0 - neutral);
    for (std::size_t i = 0; i < state.size(); ++i) f.pixels[i] = neutral + half * state[i] / m;
    return f;
}

/// Direct-integration reconstruction: per-pixel leaky accumulation of
/// theta * p over k equal time windows. Deterministic and non-trainable.
inline std::vector<IntensityFrame> integrate_reconstruct(const EventStream& stream, std::size_t k,
                                                         const SurrogateConfig& cfg = {}) {
    if (k < 2) fail(ErrorCategory::Config, "integrate_reconstruct needs k >= 2");
    if (stream.empty()) {
        return std::vector<IntensityFrame>(k, IntensityFrame(stream.width, stream.height, cfg.neutral, 0));
    }
    const auto segments = slice_stream(stream, k);
    const std::int64_t t0 = stream.t_first();
    const std::int64_t span = stream.t_last() - t0;
    std::vector<double> state(static_cast<std::size_t>(stream.width) * stream.height, 0.0);
    std::vector<IntensityFrame> frames;
    frames.reserve(k);
    for (std::size_t w = 0; w < k; ++w) {
        for (double& s : state) s *= cfg.leak;
        for (const Event& e : segments[w].events) {
            state[static_cast<std::size_t>(e.y) * stream.width + e.x] += cfg.theta * e.p;
        }
        const auto mid = t0 + static_cast<std::int64_t>((static_cast<__int128>(span) * (2 * w + 1)) / (2 * k));
        frames.push_back(state_to_frame(state, stream.width, stream.height, cfg.neutral, mid));
    }
    return frames;
}

/// Regression network from one voxel-grid segment to an intensity frame in
/// [0, 1] (sigmoid output).
class Reconstructor {
public:
    Reconstructor() = default;
    Reconstructor(int width, int height, int bins, std::size_t hidden, std::uint64_t seed)
        : width_(width), height_(height), bins_(bins) {
        const std::size_t pix = static_cast<std::size_t>(width) * height;
        const std::size_t sizes[] = {pix * static_cast<std::size_t>(bins), hidden, pix};
        net_ = Mlp("reconstructor", sizes, Activation::Sigmoid, seed);
    }

    static Reconstructor from_net(Mlp net, int width, int height, int bins) {
        const std::size_t pix = static_cast<std::size_t>(width) * height;
        if (net.input_size() != pix * static_cast<std::size_t>(bins) || net.output_size() != pix ||
            net.layers().back().activation != Activation::Sigmoid) {
            fail(ErrorCategory::Structural, "reconstructor checkpoint does not match " + std::to_string(width) + "x" +
                                                std::to_string(height) + " with " + std::to_string(bins) + " bins");
        }
        Reconstructor r;
        r.net_ = std::move(net);
        r.width_ = width;
        r.height_ = height;
        r.bins_ = bins;
        return r;
    }

    Mlp& net() noexcept { return net_; }
    const Mlp& net() const noexcept { return net_; }
    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int bins() const noexcept { return bins_; }

    DiffValue reconstruct(Tape& tape, const RepTensor& segment, ParamMode mode = ParamMode::Trainable) {
        return net_.forward(tape.constant(segment.data, "segment"), mode);
    }

    IntensityFrame predict(const RepTensor& segment, std::int64_t timestamp = 0) const {
        IntensityFrame f(width_, height_, 0.0, timestamp);
        f.pixels = net_.predict(segment.data);
        return f;
    }

    friend bool operator==(const Reconstructor& a, const Reconstructor& b) {
        return a.width_ == b.width_ && a.height_ == b.height_ && a.bins_ == b.bins_ && a.net_ == b.net_;
    }

private:
    Mlp net_;
    int width_ = 0;
    int height_ = 0;
    int bins_ = 0;
};

/// Per-stream inputs of the bridging stage: the voxel-grid encoding of each
/// of the K segments and the integration proxy frames.
struct SurrogateInputs {
    std::vector<RepTensor> segment_voxels;
    std::vector<IntensityFrame> integrated;
};

inline SurrogateInputs prepare_surrogate_inputs(const EventStream& stream, const SurrogateConfig& cfg) {
    if (cfg.frames < 2) fail(ErrorCategory::Config, "surrogate batches need K >= 2 frames");
    SurrogateInputs in;
    for (const auto& seg : slice_stream(stream, cfg.frames)) {
        in.segment_voxels.push_back(encode_voxel_grid(seg, cfg.recon_bins, cfg.normalize));
    }
    in.integrated = integrate_reconstruct(stream, cfg.frames, cfg);
    return in;
}

/// Surrogate frames of one stream. Frame 0 (first temporal segment) is the
/// anchor; the remaining K-1 frames are its temporal augmentations.
struct SurrogateBatch {
    std::size_t stream_id = 0;
    std::vector<std::size_t> segment_ids;  // segment_ids[0] is the anchor's
    IntensityFrame anchor;
    std::vector<IntensityFrame> others;
    DiffValue anchor_node;
    std::vector<DiffValue> other_nodes;
};

inline SurrogateBatch build_surrogate_from_segments(Reconstructor& recon, Tape& tape,
                                                    std::span<const RepTensor> segment_voxels, std::size_t stream_id,
                                                    ParamMode mode = ParamMode::Trainable) {
    if (segment_voxels.size() < 2) fail(ErrorCategory::Config, "surrogate batches need K >= 2 frames");
    SurrogateBatch b;
    b.stream_id = stream_id;
    for (std::size_t w = 0; w < segment_voxels.size(); ++w) {
        DiffValue node = recon.reconstruct(tape, segment_voxels[w], mode);
        IntensityFrame f(recon.width(), recon.height(), 0.0, 0);
        f.pixels.assign(node.value().begin(), node.value().end());
        b.segment_ids.push_back(w);
        if (w == 0) {
            b.anchor = std::move(f);
            b.anchor_node = node;
        } else {
            b.others.push_back(std::move(f));
            b.other_nodes.push_back(node);
        }
    }
    return b;
}

/// Slices the stream into k segments, encodes each as a voxel grid and runs
/// the reconstructor on the tape so that losses can reach its parameters.
inline SurrogateBatch build_surrogate(Reconstructor& recon, Tape& tape, const EventStream& stream, std::size_t k,
                                      std::size_t stream_id, bool normalize = true,
                                      ParamMode mode = ParamMode::Trainable) {
    if (k < 2) fail(ErrorCategory::Config, "surrogate batches need K >= 2 frames");
    std::vector<RepTensor> voxels;
    for (const auto& seg : slice_stream(stream, k)) voxels.push_back(encode_voxel_grid(seg, recon.bins(), normalize));
    return build_surrogate_from_segments(recon, tape, voxels, stream_id, mode);
}

struct RmbTerms {
    DiffValue entropy;         // L_EN: reaches the reconstructor only
    DiffValue temporal;        // L_TC: reaches the source model only
    DiffValue source_probs;    // softmax(F_S(anchor)) with the anchor detached
};

/// Entropy and temporal-consistency terms for one surrogate batch.
///   L_EN = H(softmax(F_S(x_a)))       F_S parameters frozen, x_a live
///   L_TC = mean_o KL(sg(softmax(F_S(x_a))) || softmax(F_S(x_o)))
///          with every frame detached from the reconstructor
inline RmbTerms rmb_losses(Mlp& source, const SurrogateBatch& batch) {
    Tape& tape = *batch.anchor_node.tape();
    RmbTerms t;
    t.entropy = ad::entropy(ad::softmax(source.forward(batch.anchor_node, ParamMode::Frozen)));

    t.source_probs = ad::softmax(source.forward(ad::stop_gradient(batch.anchor_node), ParamMode::Trainable));
    const DiffValue teacher = ad::stop_gradient(t.source_probs);
    std::vector<DiffValue> terms;
    for (const DiffValue& other : batch.other_nodes) {
        const DiffValue q = ad::softmax(source.forward(ad::stop_gradient(other), ParamMode::Trainable));
        terms.push_back(ad::kl_div(teacher, q));
    }
    t.temporal = terms.empty() ? tape.constant({0.0}) : ad::mean(terms);
    return t;
}

struct ReconPretrainConfig {
    std::size_t steps = 600;
    std::size_t batch = 32;  // (stream, segment) pairs per step
    AdamWConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.0};
    std::uint64_t seed = 0;
};

struct ReconPretrainReport {
    double initial_loss = 0.0;  // mean per-pixel MSE over the whole training set
    double final_loss = 0.0;
};

/// Mean per-pixel MSE of reconstructions against the integration proxy,
/// over all frames (anchors_only = false) or anchor frames only.
inline double reconstruction_mse(const Reconstructor& recon, std::span<const SurrogateInputs> data,
                                 bool anchors_only) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& in : data) {
        const std::size_t frames = anchors_only ? 1 : in.segment_voxels.size();
        for (std::size_t w = 0; w < frames; ++w) {
            const auto pred = recon.net().predict(in.segment_voxels[w].data);
            const auto& target = in.integrated[w].pixels;
            for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
            count += pred.size();
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

/// Trains the reconstructor to regress the integration proxy from voxel
/// segments (no labels involved). on_step receives (step, batch_loss, lr).
inline ReconPretrainReport pretrain_reconstructor(
    Reconstructor& recon, std::span<const SurrogateInputs> data, const ReconPretrainConfig& cfg,
    const std::function<void(std::size_t, double, double)>& on_step = {}) {
    if (data.empty()) fail(ErrorCategory::EmptyInput, "reconstructor pretraining needs at least one stream");
    if (cfg.batch == 0) fail(ErrorCategory::Config, "batch size must be >= 1");
    ReconPretrainReport report;
    report.initial_loss = reconstruction_mse(recon, data, false);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t s = 0; s < data.size(); ++s) {
        for (std::size_t w = 0; w < data[s].segment_voxels.size(); ++w) pairs.emplace_back(s, w);
    }
    auto params = recon.net().parameters();
    AdamW opt(params, cfg.optimizer);
    Rng rng(derive_seed(cfg.seed, "recon-shuffle"));
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        recon.net().zero_grad();
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                order.resize(pairs.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                shuffle(order, rng);
                cursor = 0;
            }
            const auto [s, w] = pairs[order[cursor++]];
            Tape tape;
            const DiffValue frame = recon.reconstruct(tape, data[s].segment_voxels[w]);
            const DiffValue loss = ad::scale(ad::mse(frame, data[s].integrated[w].pixels),
                                             1.0 / static_cast<double>(cfg.batch));
            batch_loss += loss.scalar();
            tape.backward(loss);
        }
        const double lr = linear_decay_lr(cfg.optimizer.lr, step, cfg.steps);
        check_finite_grads(params);
        opt.step(params, lr);
        if (on_step) on_step(step, batch_loss, lr);
    }
    report.final_loss = reconstruction_mse(recon, data, false);
    return report;
}

}  // namespace evada
