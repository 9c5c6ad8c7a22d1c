#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "evada/autodiff.hpp"
#include "evada/error.hpp"
#include "evada/events.hpp"
#include "evada/nn.hpp"
#include "evada/optim.hpp"
#include "evada/representations.hpp"
#include "evada/rng.hpp"
#include "evada/surrogate.hpp"

namespace evada {

// ---------------------------------------------------------------------------
// Source model pretraining on the labeled image modality.

/// Rotates by quarter_turns * 90 degrees (counter-clockwise) and optionally
/// mirrors horizontally afterwards. Non-square frames only accept even turns.
inline IntensityFrame augment_frame(const IntensityFrame& f, int quarter_turns, bool flip) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (f.width != f.height && quarter_turns % 2 != 0) {
        fail(ErrorCategory::Config, "quarter-turn rotation needs a square frame");
    }
    const int w = f.width;
    const int h = f.height;
    IntensityFrame out(w, h, 0.0, f.timestamp);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int fx = flip ? w - 1 - x : x;
            int sx = fx;
            int sy = y;
            switch (quarter_turns) {
                case 1: sx = w - 1 - y; sy = fx; break;
                case 2: sx = w - 1 - fx; sy = h - 1 - y; break;
                case 3: sx = y; sy = h - 1 - fx; break;
                default: break;
            }
            out.at(x, y) = f.at(sx, sy);
        }
    }
    return out;
}

/// Classifier architecture: [conv front] -> affine(hidden) -> ReLU -> affine(classes).
struct ClassifierSpec {
    std::size_t hidden = 256;
    std::size_t conv_channels = 0;  // 0: no convolution front
    bool conv_pool = true;
};

struct SourceConfig {
    ClassifierSpec model;
    std::size_t steps = 1500;
    std::size_t batch = 32;
    AdamWConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.01};
    bool augment = true;  // random quarter-turn rotations and flips
    std::uint64_t seed = 0;
};

struct LabeledFrames {
    std::vector<IntensityFrame> frames;
    std::vector<int> labels;
};

/// Classifier over a flattened channels x height x width input.
inline Mlp make_classifier(std::string name, std::size_t channels, std::size_t height, std::size_t width,
                           const ClassifierSpec& spec, std::size_t classes, std::uint64_t seed) {
    const std::size_t sizes[] = {channels * height * width, spec.hidden, classes};
    std::optional<ConvFront> front;
    if (spec.conv_channels > 0) front = ConvFront{{channels, height, width, spec.conv_channels}, spec.conv_pool};
    return Mlp(std::move(name), sizes, Activation::Identity, seed, front);
}

inline double classifier_accuracy(const Mlp& model, const LabeledFrames& data) {
    if (data.frames.empty()) fail(ErrorCategory::Config, "accuracy over an empty set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.frames.size(); ++i) {
        correct += argmax(model.predict(data.frames[i].pixels)) == static_cast<std::size_t>(data.labels[i]) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.frames.size());
}

/// Supervised cross-entropy training of the source classifier. The model is
/// initialized from derive_seed(seed, "init"); on_step gets (step, loss, lr).
inline Mlp pretrain_source(const LabeledFrames& data, std::size_t classes, const SourceConfig& cfg,
                           const std::function<void(std::size_t, double, double)>& on_step = {}) {
    if (data.frames.empty() || data.frames.size() != data.labels.size()) {
        fail(ErrorCategory::Config, "source pretraining needs labeled frames");
    }
    const std::set<int> present(data.labels.begin(), data.labels.end());
    if (present.size() < 2) fail(ErrorCategory::Config, "source pretraining needs at least two classes");
    if (*present.begin() < 0 || *present.rbegin() >= static_cast<int>(classes)) {
        fail(ErrorCategory::Config, "source label outside the class range");
    }
    const IntensityFrame& first = data.frames.front();
    for (const auto& f : data.frames) {
        if (f.width != first.width || f.height != first.height) {
            fail(ErrorCategory::Structural, "source frames have mixed geometry");
        }
    }
    Mlp model = make_classifier("source", 1, static_cast<std::size_t>(first.height),
                                static_cast<std::size_t>(first.width), cfg.model, classes,
                                derive_seed(cfg.seed, "init"));
    auto params = model.parameters();
    AdamW opt(params, cfg.optimizer);
    Rng rng(derive_seed(cfg.seed, "shuffle"));
    Rng aug(derive_seed(cfg.seed, "augment"));
    const bool square = data.frames.front().width == data.frames.front().height;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        model.zero_grad();
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                order.resize(data.frames.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                shuffle(order, rng);
                cursor = 0;
            }
            const std::size_t i = order[cursor++];
            Tape tape;
            DiffValue x;
            if (cfg.augment) {
                const int turns = static_cast<int>(aug.index(4));
                const bool flip = aug.coin();
                x = tape.constant(augment_frame(data.frames[i], square ? turns : (turns & 2), flip).pixels);
            } else {
                x = tape.constant(data.frames[i].pixels);
            }
            const DiffValue loss =
                ad::scale(ad::cross_entropy(ad::softmax(model.forward(x)), static_cast<std::size_t>(data.labels[i])),
                          1.0 / static_cast<double>(cfg.batch));
            batch_loss += loss.scalar();
            tape.backward(loss);
        }
        const double lr = linear_decay_lr(cfg.optimizer.lr, step, cfg.steps);
        check_finite_grads(params);
        opt.step(params, lr);
        if (on_step) on_step(step, batch_loss, lr);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Pseudo-labels.

struct PseudoLabel {
    std::size_t label = 0;
    double confidence = 0.0;
    std::size_t stream_id = 0;
};

/// argmax of softmax(F_S(anchor)); ties go to the lowest class index.
inline PseudoLabel pseudo_label(const Mlp& source, const IntensityFrame& anchor, std::size_t stream_id = 0) {
    const auto p = softmax_values(source.predict(anchor.pixels));
    const std::size_t k = argmax(p);
    return {k, p[k], stream_id};
}

// ---------------------------------------------------------------------------
// Loss assembly.

struct LossBreakdown {
    double en = 0.0, tc = 0.0, sup = 0.0, pc = 0.0, cm = 0.0, all = 0.0;

    friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

struct MkaTerms {
    DiffValue supervised;      // L_Sup
    DiffValue consistency;     // L_PC
    DiffValue cross_modal;     // L_CM
    std::array<DiffValue, kNumTargets> target_probs;
};

/// Target-side terms for one stream.
///   L_Sup = sum_i CE(p_i, P)
///   L_PC  = sum_{k != l} KL(p_k || p_l)                    (6 ordered pairs)
///   L_CM  = KL(ens || sg(q_S)) + KL(q_S || sg(ens)),  ens = mean_i p_i
/// where p_i = softmax(F_T^i(r^i)) and q_S = softmax(F_S(x_a)).
/// The first L_CM term updates the targets, the second the source model.
inline MkaTerms mka_losses(std::array<Mlp, kNumTargets>& targets, const RepTriple& reps, DiffValue source_probs,
                           std::size_t pseudo) {
    Tape& tape = *source_probs.tape();
    MkaTerms m;
    std::vector<DiffValue> ce;
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        m.target_probs[i] = ad::softmax(targets[i].forward(tape.constant(reps[i].data, "representation")));
        ce.push_back(ad::cross_entropy(m.target_probs[i], pseudo));
    }
    m.supervised = ad::sum(ce);

    std::vector<DiffValue> pairs;
    for (std::size_t k = 0; k < kNumTargets; ++k) {
        for (std::size_t l = 0; l < kNumTargets; ++l) {
            if (k != l) pairs.push_back(ad::kl_div(m.target_probs[k], m.target_probs[l]));
        }
    }
    m.consistency = ad::sum(pairs);

    const DiffValue ensemble = ad::mean(m.target_probs);
    const DiffValue term_targets = ad::kl_div(ensemble, ad::stop_gradient(source_probs));
    const DiffValue term_source = ad::kl_div(source_probs, ad::stop_gradient(ensemble));
    m.cross_modal = ad::add(term_targets, term_source);
    return m;
}

// ---------------------------------------------------------------------------
// Training state and loop.

/// A target stream with every deterministic encoding precomputed.
struct PreparedStream {
    std::size_t id = 0;
    std::optional<int> label;
    RepTriple reps;
    SurrogateInputs surrogate;
};

inline PreparedStream prepare_stream(const EventStream& s, std::size_t id, const EncoderConfig& enc,
                                     const SurrogateConfig& sur) {
    return {id, s.label, encode_all(s, enc), prepare_surrogate_inputs(s, sur)};
}

struct LossFlags {
    bool en = true, tc = true, sup = true, pc = true, cm = true;
    bool finetune_fr = true;

    bool updates_reconstructor() const noexcept { return en && finetune_fr; }
    bool updates_source() const noexcept { return tc || cm; }
    bool updates_targets() const noexcept { return sup || pc || cm; }
    bool any() const noexcept { return en || tc || sup || pc || cm; }
};

struct LossWeights {
    double en = 1.0, tc = 1.0, sup = 1.0, pc = 1.0, cm = 1.0;
};

/// Per-group multipliers on the shared learning rate.
struct LrScale {
    double source = 1.0, reconstructor = 1.0, targets = 1.0;
};

struct AdaptConfig {
    std::size_t steps = 100;
    std::size_t batch = 64;
    AdamWConfig optimizer{1e-5, 0.9, 0.999, 1e-8, 0.01};
    LrScale lr_scale;
    LossFlags flags;
    LossWeights weights;
};

struct AdaptationState {
    Mlp source;
    Reconstructor reconstructor;
    std::array<Mlp, kNumTargets> targets;
    AdamW source_opt;
    AdamW reconstructor_opt;
    std::array<AdamW, kNumTargets> target_opts;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;

    static AdaptationState create(Mlp source, Reconstructor recon, std::array<Mlp, kNumTargets> targets,
                                  const AdamWConfig& opt, std::uint64_t seed) {
        AdaptationState s;
        s.source = std::move(source);
        s.reconstructor = std::move(recon);
        s.targets = std::move(targets);
        s.seed = seed;
        s.reset_optimizers(opt);
        return s;
    }

    void reset_optimizers(const AdamWConfig& opt) {
        source_opt = AdamW(source.parameters(), opt);
        reconstructor_opt = AdamW(reconstructor.net().parameters(), opt);
        for (std::size_t i = 0; i < kNumTargets; ++i) target_opts[i] = AdamW(targets[i].parameters(), opt);
    }

    void zero_grad() {
        source.zero_grad();
        reconstructor.net().zero_grad();
        for (auto& t : targets) t.zero_grad();
    }
};

/// Target classifiers for stack, voxel and EST inputs.
inline std::array<Mlp, kNumTargets> make_targets(int width, int height, const EncoderConfig& enc,
                                                const ClassifierSpec& spec, std::size_t classes, std::uint64_t seed) {
    std::array<Mlp, kNumTargets> t;
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        t[i] = make_classifier("target_" + std::string(rep_name(kTargetKinds[i])), rep_channels(kTargetKinds[i], enc),
                               static_cast<std::size_t>(height), static_cast<std::size_t>(width), spec, classes,
                               derive_seed(seed, i));
    }
    return t;
}

/// Stream indices of batch number `step`: consecutive windows over an endless
/// sequence of per-epoch permutations drawn from the shuffle seed.
class BatchSchedule {
public:
    BatchSchedule(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
        if (n == 0) fail(ErrorCategory::EmptyInput, "no training streams");
        if (batch == 0) fail(ErrorCategory::Config, "batch size must be >= 1");
    }

    std::vector<std::size_t> batch(std::uint64_t step) {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < batch_; ++b) {
            const std::uint64_t pos = step * batch_ + b;
            out.push_back(permutation(pos / n_)[pos % n_]);
        }
        return out;
    }

private:
    const std::vector<std::size_t>& permutation(std::uint64_t epoch) {
        if (epoch != cached_epoch_ || perm_.empty()) {
            perm_.resize(n_);
            for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
            Rng rng(derive_seed(seed_, epoch));
            shuffle(perm_, rng);
            cached_epoch_ = epoch;
        }
        return perm_;
    }

    std::size_t n_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::uint64_t cached_epoch_ = 0;
    std::vector<std::size_t> perm_;
};

/// One end-to-end step over a batch of streams. Every enabled term is built
/// with its routing barriers, averaged over the batch and backpropagated;
/// then each parameter group that some enabled term reaches takes one AdamW
/// step. Any error leaves the state untouched.
inline LossBreakdown train_step(AdaptationState& state, std::span<const PreparedStream> data,
                                std::span<const std::size_t> batch, const AdaptConfig& cfg) {
    if (batch.empty()) fail(ErrorCategory::EmptyInput, "train_step needs at least one stream");
    const LossFlags& f = cfg.flags;
    const LossWeights& w = cfg.weights;
    LossBreakdown out;
    if (!f.any()) return out;

    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    const ParamMode recon_mode = f.updates_reconstructor() ? ParamMode::Trainable : ParamMode::Frozen;
    const bool need_targets = f.sup || f.pc || f.cm;
    state.zero_grad();
    try {
        for (const std::size_t idx : batch) {
            const PreparedStream& ps = data[idx];
            Tape tape;
            const SurrogateBatch sb =
                build_surrogate_from_segments(state.reconstructor, tape, ps.surrogate.segment_voxels, ps.id, recon_mode);
            const RmbTerms rmb = rmb_losses(state.source, sb);
            const std::size_t pseudo = argmax(rmb.source_probs.value());

            std::vector<DiffValue> terms;
            std::vector<double> weights;
            auto use = [&](bool on, double weight, DiffValue term, double& acc) {
                if (!on) return;
                acc += weight * term.scalar() * inv_batch;
                terms.push_back(term);
                weights.push_back(weight * inv_batch);
            };
            use(f.en, w.en, rmb.entropy, out.en);
            use(f.tc, w.tc, rmb.temporal, out.tc);
            if (need_targets) {
                const MkaTerms mka = mka_losses(state.targets, ps.reps, rmb.source_probs, pseudo);
                use(f.sup, w.sup, mka.supervised, out.sup);
                use(f.pc, w.pc, mka.consistency, out.pc);
                use(f.cm, w.cm, mka.cross_modal, out.cm);
            }
            tape.backward(ad::weighted_sum(terms, weights));
        }
        check_finite_grads(state.source.parameters());
        check_finite_grads(state.reconstructor.net().parameters());
        for (auto& t : state.targets) check_finite_grads(t.parameters());
    } catch (...) {
        state.zero_grad();
        throw;
    }
    out.all = out.en + out.tc + out.sup + out.pc + out.cm;

    const double lr = linear_decay_lr(cfg.optimizer.lr, state.step, cfg.steps);
    const LrScale& k = cfg.lr_scale;
    if (f.updates_reconstructor()) {
        state.reconstructor_opt.step(state.reconstructor.net().parameters(), lr * k.reconstructor);
    }
    if (f.updates_source()) state.source_opt.step(state.source.parameters(), lr * k.source);
    if (f.updates_targets()) {
        for (std::size_t i = 0; i < kNumTargets; ++i) {
            state.target_opts[i].step(state.targets[i].parameters(), lr * k.targets);
        }
    }
    ++state.step;
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

inline void require_labels(std::span<const PreparedStream> data) {
    if (data.empty()) fail(ErrorCategory::Config, "evaluation set is empty");
    for (const auto& ps : data) {
        if (!ps.label) fail(ErrorCategory::Config, "evaluation stream " + std::to_string(ps.id) + " has no label");
    }
}

template <typename Predict>
double accuracy_of(std::span<const PreparedStream> data, Predict&& predict) {
    require_labels(data);
    std::size_t correct = 0;
    for (const auto& ps : data) correct += predict(ps) == static_cast<std::size_t>(*ps.label) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Accuracy of one target model on its representation kind.
inline double evaluate(const Mlp& target, std::span<const PreparedStream> data, RepKind kind) {
    const auto i = static_cast<std::size_t>(kind);
    return accuracy_of(data, [&](const PreparedStream& ps) { return argmax(target.predict(ps.reps[i].data)); });
}

/// Accuracy of the mean of the three target probability vectors.
inline double evaluate_ensemble(const std::array<Mlp, kNumTargets>& targets, std::span<const PreparedStream> data) {
    return accuracy_of(data, [&](const PreparedStream& ps) {
        std::vector<double> mean;
        for (std::size_t i = 0; i < kNumTargets; ++i) {
            const auto p = softmax_values(targets[i].predict(ps.reps[i].data));
            if (mean.empty()) mean.assign(p.size(), 0.0);
            for (std::size_t c = 0; c < p.size(); ++c) mean[c] += p[c] / static_cast<double>(kNumTargets);
        }
        return argmax(mean);
    });
}

/// Source-transfer baseline: frozen source model on integration-proxy anchors.
inline double evaluate_source_on_integrated(const Mlp& source, std::span<const PreparedStream> data) {
    return accuracy_of(data, [&](const PreparedStream& ps) {
        return argmax(source.predict(ps.surrogate.integrated.front().pixels));
    });
}

/// Source model on reconstructor anchors (the pseudo-label accuracy).
inline double evaluate_source_on_surrogate(const Mlp& source, const Reconstructor& recon,
                                           std::span<const PreparedStream> data) {
    return accuracy_of(data, [&](const PreparedStream& ps) {
        return argmax(source.predict(recon.net().predict(ps.surrogate.segment_voxels.front().data)));
    });
}

}  // namespace evada
