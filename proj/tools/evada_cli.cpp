// evada: command-line front end for the adaptation pipeline.
//
//   evada gen      --out DIR
//   evada pretrain --data DIR --run DIR
//   evada adapt    --data DIR --run DIR [--resume] [--no-en ...]
//   evada eval     --data DIR --run DIR
//   evada inspect  FILE [--images DIR] [--reconstructor CKPT]

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evada/evada.hpp"

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file (defaults are used for missing keys)");
    app->add_option("--set", c.overrides, "override a config value, e.g. adapt.lr=1e-4")->expected(1)->take_all();
    app->add_option("--seed", c.seed, "master seed");
}

evada::RunConfig resolve(const Common& c) {
    evada::RunConfig cfg = c.config.empty() ? evada::RunConfig{} : evada::load_config(c.config);
    for (const auto& o : c.overrides) cfg = evada::apply_override(cfg, o);
    if (c.seed) cfg.seed = *c.seed;
    evada::validate(cfg);
    return cfg;
}

// Config to use for a run directory: an explicit --config wins, otherwise the
// config.json stored by an earlier command.
evada::RunConfig resolve_for_run(Common c, const std::string& run) {
    if (c.config.empty() && std::filesystem::exists(std::filesystem::path(run) / "config.json")) {
        c.config = (std::filesystem::path(run) / "config.json").string();
    }
    return resolve(c);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source-free adaptation of image classifiers to event streams"};
    app.require_subcommand(1);

    Common gen_c, pre_c, ad_c, ev_c, in_c;
    std::string out, data, run, inspect_path, images, recon_ckpt;
    bool force = false, resume = false;
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> stop_after;
    bool no_en = false, no_tc = false, no_sup = false, no_pc = false, no_cm = false, freeze_fr = false;
    int width = 0, height = 0;

    auto* gen = app.add_subcommand("gen", "generate a synthetic paired dataset");
    add_common(gen, gen_c);
    gen->add_option("--out", out, "output directory")->required();
    gen->add_flag("--force", force, "overwrite a non-empty output directory");

    auto* pre = app.add_subcommand("pretrain", "train the source classifier and the reconstructor");
    add_common(pre, pre_c);
    pre->add_option("--data", data, "dataset directory")->required();
    pre->add_option("--run", run, "run directory")->required();
    pre->add_option("--steps", steps, "optimizer steps for both models");

    auto* ad = app.add_subcommand("adapt", "adapt target classifiers on unlabeled streams");
    add_common(ad, ad_c);
    ad->add_option("--data", data, "dataset directory")->required();
    ad->add_option("--run", run, "run directory with pretrained checkpoints")->required();
    ad->add_option("--steps", steps, "adaptation steps");
    ad->add_flag("--resume", resume, "continue from the checkpoint bundle");
    ad->add_option("--stop-after", stop_after, "stop (as if interrupted) after this many steps");
    ad->add_flag("--no-en", no_en, "disable the entropy term");
    ad->add_flag("--no-tc", no_tc, "disable the temporal consistency term");
    ad->add_flag("--no-sup", no_sup, "disable the pseudo-label term");
    ad->add_flag("--no-pc", no_pc, "disable the prediction consistency term");
    ad->add_flag("--no-cm", no_cm, "disable the cross-modal term");
    ad->add_flag("--freeze-reconstructor", freeze_fr, "keep the reconstructor fixed");

    auto* ev = app.add_subcommand("eval", "report accuracies on the eval split");
    add_common(ev, ev_c);
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--run", run, "run directory")->required();

    auto* in = app.add_subcommand("inspect", "print statistics of an event file");
    add_common(in, in_c);
    in->add_option("file", inspect_path, "event file")->required();
    in->add_option("--width", width, "sensor width (default: dataset manifest, else 34)");
    in->add_option("--height", height, "sensor height");
    in->add_option("--images", images, "write representation and frame images here");
    in->add_option("--reconstructor", recon_ckpt, "reconstructor checkpoint for surrogate frames");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        namespace cmd = evada::cmd;
        if (gen->parsed()) {
            cmd::cmd_gen(resolve(gen_c), out, force, std::cout);
        } else if (pre->parsed()) {
            auto cfg = resolve(pre_c);
            if (steps) cfg.pretrain.source_steps = cfg.pretrain.recon_steps = *steps;
            cmd::cmd_pretrain(cfg, data, run, std::cout);
        } else if (ad->parsed()) {
            auto cfg = resolve_for_run(ad_c, run);
            if (steps) cfg.adapt.steps = *steps;
            auto& f = cfg.adapt.ablation;
            f.en = f.en && !no_en;
            f.tc = f.tc && !no_tc;
            f.sup = f.sup && !no_sup;
            f.pc = f.pc && !no_pc;
            f.cm = f.cm && !no_cm;
            f.finetune_fr = f.finetune_fr && !freeze_fr;
            cmd::AdaptOptions opts;
            opts.resume = resume;
            opts.stop_after = stop_after;
            const auto sum = cmd::cmd_adapt(cfg, data, run, opts, std::cout);
            for (const auto& [k, v] : sum.final) std::cout << k << " " << evada::format_double(v) << "\n";
        } else if (ev->parsed()) {
            cmd::cmd_eval(resolve_for_run(ev_c, run), data, run, std::cout);
        } else if (in->parsed()) {
            cmd::InspectOptions opts;
            opts.width = width;
            opts.height = height;
            opts.config = resolve(in_c);
            if (!images.empty()) opts.images = images;
            if (!recon_ckpt.empty()) opts.reconstructor = recon_ckpt;
            cmd::cmd_inspect(inspect_path, opts, std::cout);
        }
    } catch (const evada::Error& e) {
        std::cerr << "error: " << evada::category_name(e.category()) << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
