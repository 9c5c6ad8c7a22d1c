#pragma once

// Pipeline commands behind the CLI: gen, pretrain, adapt, eval, inspect.
//
// Run directory layout:
//   config.json                 config used by the last command
//   source.ckpt                 pretrained source classifier
//   reconstructor.ckpt          pretrained reconstructor
//   pretrain_metrics.csv
//   bundle/                     adaptation checkpoint bundle
//     manifest.txt              config hash and completed step count
//     <model>.ckpt, <model>.opt
//   adapt_metrics.csv
//   eval_metrics.csv

#include <algorithm>
#include <array>
#include <fstream>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "evada/adaptation.hpp"
#include "evada/config.hpp"
#include "evada/dataset.hpp"
#include "evada/error.hpp"
#include "evada/metrics.hpp"
#include "evada/nn.hpp"
#include "evada/optim.hpp"
#include "evada/surrogate.hpp"

namespace evada::cmd {

namespace fs = std::filesystem;

inline void check_geometry(const RunConfig& cfg, const Dataset& ds) {
    if (ds.manifest.width != cfg.width() || ds.manifest.height != cfg.height() ||
        ds.manifest.classes != cfg.dataset.classes) {
        fail(ErrorCategory::Structural,
             "dataset is " + std::to_string(ds.manifest.width) + "x" + std::to_string(ds.manifest.height) + " with " +
                 std::to_string(ds.manifest.classes) + " classes but the config expects " +
                 std::to_string(cfg.width()) + "x" + std::to_string(cfg.height()) + " with " +
                 std::to_string(cfg.dataset.classes));
    }
}

inline std::vector<PreparedStream> prepare_all(const std::vector<EventStream>& streams, const RunConfig& cfg) {
    std::vector<PreparedStream> out;
    out.reserve(streams.size());
    for (std::size_t i = 0; i < streams.size(); ++i) {
        out.push_back(prepare_stream(streams[i], i, cfg.encoder, cfg.surrogate));
    }
    return out;
}

// ---------------------------------------------------------------------------

inline GenCounts cmd_gen(const RunConfig& cfg, const fs::path& out, bool force, std::ostream& log) {
    validate(cfg);
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!force) fail(ErrorCategory::Refusal, out.string() + " exists and is not empty (use --force)");
        fs::remove_all(out);
    }
    fs::create_directories(out);
    write_text(out / "config.json", dump_config(cfg));
    const GenCounts c = generate_dataset(cfg, out);
    log << kSourceTrain << " " << c.source_train << "\n"
        << kSourceVal << " " << c.source_val << "\n"
        << kTarget << " " << c.target << "\n"
        << kEval << " " << c.eval << "\n";
    return c;
}

// ---------------------------------------------------------------------------

struct PretrainSummary {
    double source_val_accuracy = 0.0;
    double recon_initial_mse = 0.0;
    double recon_final_mse = 0.0;
    double recon_holdout_anchor_mse = 0.0;
    std::size_t metric_rows = 0;
};

inline PretrainSummary cmd_pretrain(const RunConfig& cfg, const fs::path& data, const fs::path& run,
                                    std::ostream& log) {
    validate(cfg);
    const Dataset ds = Dataset::open(data);
    check_geometry(cfg, ds);
    fs::create_directories(run);
    write_text(run / "config.json", dump_config(cfg));
    MetricsLog metrics(run / "pretrain_metrics.csv");
    PretrainSummary sum;

    const LabeledFrames train = ds.frames(kSourceTrain);
    const LabeledFrames val = ds.frames(kSourceVal);
    SourceConfig sc;
    sc.model = cfg.model.source();
    sc.steps = cfg.pretrain.source_steps;
    sc.batch = cfg.pretrain.source_batch;
    sc.optimizer = AdamWConfig{cfg.pretrain.source_lr, 0.9, 0.999, 1e-8, cfg.pretrain.weight_decay};
    sc.augment = cfg.pretrain.augment;
    sc.seed = derive_seed(cfg.seed, "source");
    const Mlp source = pretrain_source(train, static_cast<std::size_t>(cfg.dataset.classes), sc,
                                       [&](std::size_t s, double loss, double lr) {
                                           metrics.pretrain_step("source", s, loss, lr);
                                       });
    sum.source_val_accuracy = classifier_accuracy(source, val);
    metrics.eval(sc.steps, kSourceVal, "source", sum.source_val_accuracy);
    save_model(run / "source.ckpt", source);
    log << "source held-out accuracy " << format_double(sum.source_val_accuracy) << "\n";

    const auto targets = prepare_all(ds.streams(kTarget), cfg);
    std::vector<SurrogateInputs> inputs;
    for (const auto& ps : targets) inputs.push_back(ps.surrogate);
    Reconstructor recon(cfg.width(), cfg.height(), cfg.surrogate.recon_bins, cfg.model.recon_hidden,
                        derive_seed(cfg.seed, "init-recon"));
    ReconPretrainConfig rc;
    rc.steps = cfg.pretrain.recon_steps;
    rc.batch = cfg.pretrain.recon_batch;
    rc.optimizer = AdamWConfig{cfg.pretrain.recon_lr, 0.9, 0.999, 1e-8, 0.0};
    rc.seed = derive_seed(cfg.seed, "recon");
    const auto report = pretrain_reconstructor(recon, inputs, rc, [&](std::size_t s, double loss, double lr) {
        metrics.pretrain_step("reconstructor", s, loss, lr);
    });
    sum.recon_initial_mse = report.initial_loss;
    sum.recon_final_mse = report.final_loss;

    std::vector<SurrogateInputs> holdout;
    for (const auto& ps : prepare_all(ds.streams(kEval), cfg)) holdout.push_back(ps.surrogate);
    sum.recon_holdout_anchor_mse = reconstruction_mse(recon, holdout, true);
    metrics.eval(rc.steps, kEval, "reconstructor", sum.recon_holdout_anchor_mse);
    save_model(run / "reconstructor.ckpt", recon.net());
    log << "reconstructor training mse " << format_double(sum.recon_initial_mse) << " -> "
        << format_double(sum.recon_final_mse) << "\n"
        << "reconstructor held-out anchor mse " << format_double(sum.recon_holdout_anchor_mse) << "\n";
    sum.metric_rows = metrics.rows();
    return sum;
}

// ---------------------------------------------------------------------------

inline Mlp load_classifier(const fs::path& path, const std::string& name, std::size_t inputs, std::size_t classes) {
    Mlp m = load_model(path, name);
    if (m.input_size() != inputs || m.output_size() != classes) {
        fail(ErrorCategory::Structural, path.string() + ": model maps " + std::to_string(m.input_size()) + " -> " +
                                            std::to_string(m.output_size()) + " but the config needs " +
                                            std::to_string(inputs) + " -> " + std::to_string(classes));
    }
    return m;
}

inline constexpr const char* kTargetFiles[kNumTargets] = {"target_stack", "target_voxel", "target_est"};

inline void save_bundle(const fs::path& dir, AdaptationState& st, const RunConfig& cfg) {
    fs::create_directories(dir);
    save_model(dir / "source.ckpt", st.source);
    save_model(dir / "reconstructor.ckpt", st.reconstructor.net());
    write_file_bytes(dir / "source.opt", st.source_opt.serialize());
    write_file_bytes(dir / "reconstructor.opt", st.reconstructor_opt.serialize());
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        save_model(dir / (std::string(kTargetFiles[i]) + ".ckpt"), st.targets[i]);
        write_file_bytes(dir / (std::string(kTargetFiles[i]) + ".opt"), st.target_opts[i].serialize());
    }
    write_text(dir / "manifest.txt", "config_hash " + config_hash(cfg) + "\nstep " + std::to_string(st.step) + "\n");
}

inline AdaptationState load_bundle(const fs::path& dir, const RunConfig& cfg) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) fail(ErrorCategory::Path, "no bundle manifest in " + dir.string());
    std::string key, hash;
    std::uint64_t step = 0;
    in >> key >> hash;
    if (key != "config_hash") fail(ErrorCategory::Format, "bundle manifest: expected config_hash");
    in >> key >> step;
    if (key != "step") fail(ErrorCategory::Format, "bundle manifest: expected step");
    if (hash != config_hash(cfg)) {
        fail(ErrorCategory::Config, "bundle was written with a different config (hash " + hash + ")");
    }
    const std::size_t pix = static_cast<std::size_t>(cfg.width()) * cfg.height();
    const auto classes = static_cast<std::size_t>(cfg.dataset.classes);
    const AdamWConfig opt = cfg.adapt_config().optimizer;
    AdaptationState st;
    st.seed = cfg.seed;
    st.step = step;
    st.source = load_classifier(dir / "source.ckpt", "source", pix, classes);
    st.reconstructor = Reconstructor::from_net(load_model(dir / "reconstructor.ckpt", "reconstructor"), cfg.width(),
                                               cfg.height(), cfg.surrogate.recon_bins);
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        st.targets[i] = load_classifier(dir / (std::string(kTargetFiles[i]) + ".ckpt"), kTargetFiles[i],
                                        pix * rep_channels(kTargetKinds[i], cfg.encoder), classes);
    }
    auto read_opt = [&](const std::string& file, std::span<Parameter* const> params) {
        AdamW o = AdamW::deserialize(read_file_bytes(dir / file), opt);
        o.check_shapes(params);
        return o;
    };
    st.source_opt = read_opt("source.opt", st.source.parameters());
    st.reconstructor_opt = read_opt("reconstructor.opt", st.reconstructor.net().parameters());
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        st.target_opts[i] = read_opt(std::string(kTargetFiles[i]) + ".opt", st.targets[i].parameters());
    }
    return st;
}

/// Fresh adaptation state from the pretrained checkpoints in run.
inline AdaptationState initial_state(const RunConfig& cfg, const fs::path& run) {
    const std::size_t pix = static_cast<std::size_t>(cfg.width()) * cfg.height();
    const auto classes = static_cast<std::size_t>(cfg.dataset.classes);
    Mlp source = load_classifier(run / "source.ckpt", "source", pix, classes);
    Reconstructor recon = Reconstructor::from_net(load_model(run / "reconstructor.ckpt", "reconstructor"),
                                                  cfg.width(), cfg.height(), cfg.surrogate.recon_bins);
    auto targets = make_targets(cfg.width(), cfg.height(), cfg.encoder, cfg.model.target(), classes,
                                derive_seed(cfg.seed, "init-targets"));
    return AdaptationState::create(std::move(source), std::move(recon), std::move(targets),
                                   cfg.adapt_config().optimizer, cfg.seed);
}

using Accuracies = std::map<std::string, double>;

/// Every accuracy reported for a state: the three target kinds, their
/// ensemble, and the source model on integration-proxy and reconstructor anchors.
inline Accuracies evaluate_all(const AdaptationState& st, std::span<const PreparedStream> eval) {
    Accuracies a;
    for (std::size_t i = 0; i < kNumTargets; ++i) {
        a[std::string(rep_name(kTargetKinds[i]))] = evaluate(st.targets[i], eval, kTargetKinds[i]);
    }
    a["ensemble"] = evaluate_ensemble(st.targets, eval);
    a["source_integrated"] = evaluate_source_on_integrated(st.source, eval);
    a["source_surrogate"] = evaluate_source_on_surrogate(st.source, st.reconstructor, eval);
    return a;
}

inline void log_accuracies(MetricsLog& metrics, std::uint64_t step, const Accuracies& a) {
    static constexpr const char* order[] = {"stack", "voxel", "est", "ensemble", "source_integrated",
                                            "source_surrogate"};
    for (const char* k : order) metrics.eval(step, kEval, k, a.at(k));
}

struct AdaptOptions {
    bool resume = false;
    std::optional<std::uint64_t> stop_after;  // simulate an interruption after this many total steps
};

struct AdaptSummary {
    Accuracies initial;  // empty when resumed past step 0
    Accuracies final;
    std::uint64_t steps_done = 0;
    std::vector<LossBreakdown> losses;  // steps run by this invocation
};

inline AdaptSummary cmd_adapt(const RunConfig& cfg, const fs::path& data, const fs::path& run,
                              const AdaptOptions& opts, std::ostream& log) {
    validate(cfg);
    const Dataset ds = Dataset::open(data);
    check_geometry(cfg, ds);
    const fs::path bundle = run / "bundle";
    const bool resuming = opts.resume && fs::exists(bundle / "manifest.txt");
    AdaptationState st = resuming ? load_bundle(bundle, cfg) : initial_state(cfg, run);
    write_text(run / "config.json", dump_config(cfg));

    const auto train = prepare_all(ds.streams(kTarget), cfg);
    const auto eval = prepare_all(ds.streams(kEval), cfg);
    MetricsLog metrics(run / "adapt_metrics.csv",
                       resuming ? std::optional<std::uint64_t>(st.step) : std::nullopt);
    AdaptSummary sum;
    if (st.step == 0) {
        sum.initial = evaluate_all(st, eval);
        log_accuracies(metrics, 0, sum.initial);
        log << "step 0 voxel " << format_double(sum.initial.at("voxel")) << " source_integrated "
            << format_double(sum.initial.at("source_integrated")) << "\n";
    }
    const AdaptConfig ac = cfg.adapt_config();
    BatchSchedule schedule(train.size(), ac.batch, derive_seed(cfg.seed, "shuffle"));
    while (st.step < ac.steps) {
        const std::uint64_t step = st.step;
        const double lr = linear_decay_lr(ac.optimizer.lr, step, ac.steps);
        const auto losses = train_step(st, train, schedule.batch(step), ac);
        metrics.adapt_step(step, losses, lr);
        sum.losses.push_back(losses);
        const bool last = st.step == ac.steps;
        if (st.step % cfg.adapt.eval_every == 0 || last) {
            const auto acc = evaluate_all(st, eval);
            log_accuracies(metrics, st.step, acc);
            log << "step " << st.step << " l_all " << format_double(losses.all) << " voxel "
                << format_double(acc.at("voxel")) << " ensemble " << format_double(acc.at("ensemble")) << "\n";
        }
        const bool interrupted = opts.stop_after && st.step >= *opts.stop_after;
        if (st.step % cfg.adapt.checkpoint_every == 0 || last || interrupted) save_bundle(bundle, st, cfg);
        if (interrupted && !last) {
            sum.steps_done = st.step;
            log << "stopped after step " << st.step << "\n";
            return sum;
        }
    }
    if (ac.steps == 0) save_bundle(bundle, st, cfg);
    sum.final = evaluate_all(st, eval);
    sum.steps_done = st.step;
    return sum;
}

// ---------------------------------------------------------------------------

inline Accuracies cmd_eval(const RunConfig& cfg, const fs::path& data, const fs::path& run, std::ostream& log) {
    validate(cfg);
    const Dataset ds = Dataset::open(data);
    check_geometry(cfg, ds);
    const fs::path bundle = run / "bundle";
    const AdaptationState st = fs::exists(bundle / "manifest.txt") ? load_bundle(bundle, cfg) : initial_state(cfg, run);
    const auto eval = prepare_all(ds.streams(kEval), cfg);
    const Accuracies acc = evaluate_all(st, eval);
    MetricsLog metrics(run / "eval_metrics.csv");
    log_accuracies(metrics, st.step, acc);
    for (const auto& [k, v] : acc) log << k << " " << format_double(v) << "\n";
    return acc;
}

// ---------------------------------------------------------------------------

struct InspectOptions {
    int width = 0;   // 0: take geometry from a surrounding dataset manifest, else 34x34
    int height = 0;
    std::optional<fs::path> images;         // write per-channel encodings and proxy frames
    std::optional<fs::path> reconstructor;  // also write surrogate frames from this checkpoint
    RunConfig config;
};

inline IntensityFrame channel_image(const RepTensor& r, int c) {
    IntensityFrame f(r.width, r.height);
    for (std::size_t i = 0; i < r.plane(); ++i) {
        f.pixels[i] = std::clamp(0.5 + 0.5 * r.data[static_cast<std::size_t>(c) * r.plane() + i], 0.0, 1.0);
    }
    return f;
}

inline StreamStats cmd_inspect(const fs::path& path, const InspectOptions& opts, std::ostream& log) {
    int w = opts.width;
    int h = opts.height;
    if (w == 0 || h == 0) {
        w = h = kNmnistSensorSize;
        const fs::path manifest = fs::absolute(path).parent_path().parent_path() / "manifest.txt";
        if (fs::exists(manifest)) {
            const Manifest m = load_manifest(manifest.parent_path());
            w = m.width;
            h = m.height;
        }
    }
    const EventStream s = load_event_file(path, w, h);
    const StreamStats st = stream_stats(s);
    log << st.count << " events\n";
    log << "geometry " << w << "x" << h << "\n";
    log << "duration_us " << st.duration() << "\n";
    log << "positive " << st.positive << " negative " << st.negative << " positive_ratio "
        << format_double(st.positive_ratio()) << "\n";
    if (opts.images && !s.empty()) {
        fs::create_directories(*opts.images);
        const RunConfig& cfg = opts.config;
        const RepTriple reps = encode_all(s, cfg.encoder);
        for (std::size_t i = 0; i < kNumTargets; ++i) {
            for (int c = 0; c < reps[i].channels; ++c) {
                const auto name = std::string(rep_name(kTargetKinds[i])) + "_c" + std::to_string(c) + ".pgm";
                write_file_bytes(*opts.images / name, encode_pgm(channel_image(reps[i], c), false));
            }
        }
        const auto inputs = prepare_surrogate_inputs(s, cfg.surrogate);
        for (std::size_t k = 0; k < inputs.integrated.size(); ++k) {
            write_file_bytes(*opts.images / ("integrated_" + std::to_string(k) + ".pgm"),
                             encode_pgm(inputs.integrated[k], false));
        }
        if (opts.reconstructor) {
            const Reconstructor recon = Reconstructor::from_net(load_model(*opts.reconstructor, "reconstructor"), w, h,
                                                                cfg.surrogate.recon_bins);
            for (std::size_t k = 0; k < inputs.segment_voxels.size(); ++k) {
                write_file_bytes(*opts.images / ("surrogate_" + std::to_string(k) + ".pgm"),
                                 encode_pgm(recon.predict(inputs.segment_voxels[k]), false));
            }
        }
        log << "images written to " << opts.images->string() << "\n";
    }
    return st;
}

}  // namespace evada::cmd
