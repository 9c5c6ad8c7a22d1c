#include "test_util.hpp"

#include <sstream>

using namespace evada;
using testutil::expect_error;
using testutil::slurp;
using testutil::TempDir;

namespace {

std::size_t line_count(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::size_t rows_with_prefix(const fs::path& p, const std::string& prefix) {
    std::istringstream in(slurp(p));
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
    return n;
}

/// Dataset and pretrained run shared by the tests below.
struct Shared {
    RunConfig cfg = testutil::tiny_config();
    TempDir data{"cmd_data"};
    TempDir run{"cmd_run"};
    cmd::PretrainSummary pre;

    Shared() {
        std::ostringstream log;
        cmd::cmd_gen(cfg, data.path() / "ds", false, log);
        pre = cmd::cmd_pretrain(cfg, ds(), run.path(), log);
    }
    fs::path ds() const { return data.path() / "ds"; }

    static Shared& get() {
        static Shared s;
        return s;
    }
};

}  // namespace

TEST(Commands, GenRefusesNonEmptyDirectory) {
    const RunConfig cfg = testutil::tiny_config();
    TempDir tmp("gen_refuse");
    std::ostringstream log;
    write_text(tmp.path() / "keep.txt", "x");
    expect_error(ErrorCategory::Refusal, [&] { cmd::cmd_gen(cfg, tmp.path(), false, log); });
    EXPECT_TRUE(fs::exists(tmp.path() / "keep.txt"));
    const GenCounts c = cmd::cmd_gen(cfg, tmp.path(), true, log);
    EXPECT_FALSE(fs::exists(tmp.path() / "keep.txt"));
    EXPECT_EQ(c.target, 20u);
    EXPECT_TRUE(fs::exists(tmp.path() / "manifest.txt"));
    EXPECT_EQ(config_hash(load_config(tmp.path() / "config.json")), config_hash(cfg));
}

TEST(Commands, PretrainOutputs) {
    auto& s = Shared::get();
    const auto& cfg = s.cfg;
    EXPECT_TRUE(fs::exists(s.run.path() / "source.ckpt"));
    EXPECT_TRUE(fs::exists(s.run.path() / "reconstructor.ckpt"));
    const fs::path csv = s.run.path() / "pretrain_metrics.csv";
    EXPECT_EQ(slurp(csv).substr(0, slurp(csv).find('\n')), kMetricsHeader);
    EXPECT_EQ(rows_with_prefix(csv, "source,"), cfg.pretrain.source_steps);
    EXPECT_EQ(rows_with_prefix(csv, "reconstructor,"), cfg.pretrain.recon_steps);
    EXPECT_EQ(rows_with_prefix(csv, "eval,"), 2u);
    EXPECT_EQ(line_count(csv), 1 + s.pre.metric_rows);
    EXPECT_GE(s.pre.source_val_accuracy, 0.0);
    EXPECT_LE(s.pre.source_val_accuracy, 1.0);
    EXPECT_LT(s.pre.recon_final_mse, s.pre.recon_initial_mse);
    EXPECT_TRUE(std::isfinite(s.pre.recon_holdout_anchor_mse));
}

TEST(Commands, PretrainZeroStepsKeepsInitialization) {
    auto& s = Shared::get();
    RunConfig cfg = apply_override(s.cfg, "pretrain.source_steps=0");
    cfg = apply_override(cfg, "pretrain.recon_steps=0");
    TempDir a("pre0_a"), b("pre0_b");
    std::ostringstream log;
    cmd::cmd_pretrain(cfg, s.ds(), a.path(), log);
    cmd::cmd_pretrain(cfg, s.ds(), b.path(), log);
    EXPECT_EQ(slurp(a.path() / "source.ckpt"), slurp(b.path() / "source.ckpt"));
    EXPECT_EQ(rows_with_prefix(a.path() / "pretrain_metrics.csv", "source,"), 0u);

    const Reconstructor init(cfg.width(), cfg.height(), cfg.surrogate.recon_bins, cfg.model.recon_hidden,
                             derive_seed(cfg.seed, "init-recon"));
    TempDir c("pre0_c");
    save_model(c.path() / "r.ckpt", init.net());
    EXPECT_EQ(slurp(a.path() / "reconstructor.ckpt"), slurp(c.path() / "r.ckpt"));
}

TEST(Commands, AdaptWritesMetricsAndBundle) {
    auto& s = Shared::get();
    TempDir run("adapt");
    fs::copy(s.run.path(), run.path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    std::ostringstream log;
    const auto sum = cmd::cmd_adapt(s.cfg, s.ds(), run.path(), {}, log);
    EXPECT_EQ(sum.steps_done, 6u);
    EXPECT_EQ(sum.losses.size(), 6u);
    EXPECT_EQ(sum.initial.size(), 6u);
    EXPECT_EQ(sum.final.size(), 6u);
    for (const auto& l : sum.losses) EXPECT_TRUE(std::isfinite(l.all));
    const fs::path csv = run.path() / "adapt_metrics.csv";
    EXPECT_EQ(rows_with_prefix(csv, "adapt,"), 6u);
    // evaluations at steps 0, 2, 4, 6
    EXPECT_EQ(rows_with_prefix(csv, "eval,"), 4u * 6);
    EXPECT_NE(slurp(run.path() / "bundle" / "manifest.txt").find("step 6"), std::string::npos);

    const auto acc = cmd::cmd_eval(s.cfg, s.ds(), run.path(), log);
    EXPECT_EQ(acc, sum.final);
    EXPECT_EQ(rows_with_prefix(run.path() / "eval_metrics.csv", "eval,6,"), 6u);
}

TEST(Commands, ResumeMatchesUninterruptedRun) {
    auto& s = Shared::get();
    TempDir full("full"), part("part");
    for (const auto* d : {&full, &part}) {
        fs::copy(s.run.path(), d->path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    }
    std::ostringstream log;
    cmd::cmd_adapt(s.cfg, s.ds(), full.path(), {}, log);

    cmd::AdaptOptions stop;
    stop.stop_after = 3;
    const auto first = cmd::cmd_adapt(s.cfg, s.ds(), part.path(), stop, log);
    EXPECT_EQ(first.steps_done, 3u);
    EXPECT_TRUE(first.final.empty());
    cmd::AdaptOptions resume;
    resume.resume = true;
    const auto second = cmd::cmd_adapt(s.cfg, s.ds(), part.path(), resume, log);
    EXPECT_EQ(second.steps_done, 6u);
    EXPECT_EQ(second.losses.size(), 3u);
    EXPECT_TRUE(second.initial.empty());

    EXPECT_EQ(slurp(full.path() / "adapt_metrics.csv"), slurp(part.path() / "adapt_metrics.csv"));
    EXPECT_EQ(testutil::tree_bytes(full.path() / "bundle"), testutil::tree_bytes(part.path() / "bundle"));
}

TEST(Commands, RepeatedRunsAreIdentical) {
    auto& s = Shared::get();
    TempDir a("rep_a"), b("rep_b");
    std::ostringstream log;
    for (const auto* d : {&a, &b}) {
        cmd::cmd_pretrain(s.cfg, s.ds(), d->path(), log);
        cmd::cmd_adapt(s.cfg, s.ds(), d->path(), {}, log);
    }
    EXPECT_EQ(slurp(a.path() / "pretrain_metrics.csv"), slurp(b.path() / "pretrain_metrics.csv"));
    EXPECT_EQ(slurp(a.path() / "adapt_metrics.csv"), slurp(b.path() / "adapt_metrics.csv"));
    EXPECT_EQ(testutil::tree_bytes(a.path() / "bundle"), testutil::tree_bytes(b.path() / "bundle"));
}

TEST(Commands, BundleRejectsDifferentConfig) {
    auto& s = Shared::get();
    TempDir run("bundle");
    fs::copy(s.run.path(), run.path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    std::ostringstream log;
    cmd::cmd_adapt(s.cfg, s.ds(), run.path(), {}, log);
    const RunConfig other = apply_override(s.cfg, "adapt.lr=0.5");
    expect_error(ErrorCategory::Config, [&] { cmd::load_bundle(run.path() / "bundle", other); });
    const AdaptationState st = cmd::load_bundle(run.path() / "bundle", s.cfg);
    EXPECT_EQ(st.step, 6u);
    expect_error(ErrorCategory::Path, [&] { cmd::load_bundle(run.path() / "nothing", s.cfg); });
}

TEST(Commands, GeometryMismatch) {
    auto& s = Shared::get();
    TempDir run("geom");
    std::ostringstream log;
    const RunConfig wide = apply_override(s.cfg, "dataset.width=10");
    expect_error(ErrorCategory::Structural, [&] { cmd::cmd_pretrain(wide, s.ds(), run.path(), log); });
    const RunConfig more = apply_override(s.cfg, "dataset.classes=5");
    expect_error(ErrorCategory::Structural, [&] { cmd::cmd_adapt(more, s.ds(), s.run.path(), {}, log); });
    expect_error(ErrorCategory::Path, [&] { cmd::cmd_eval(s.cfg, run.path() / "none", s.run.path(), log); });
}

TEST(Commands, ClassifierShapeMismatch) {
    auto& s = Shared::get();
    const RunConfig cfg = apply_override(s.cfg, "dataset.classes=3");
    expect_error(ErrorCategory::Structural, [&] { cmd::initial_state(cfg, s.run.path()); });
}

TEST(Commands, Inspect) {
    auto& s = Shared::get();
    const Dataset ds = Dataset::open(s.ds());
    const auto entry = ds.manifest.split(kEval).front();
    const EventStream stream = load_event_file(s.ds() / entry.path, 8, 8);

    TempDir img("inspect");
    cmd::InspectOptions opts;
    opts.images = img.path();
    opts.reconstructor = s.run.path() / "reconstructor.ckpt";
    opts.config = s.cfg;
    std::ostringstream log;
    const StreamStats st = cmd::cmd_inspect(s.ds() / entry.path, opts, log);
    EXPECT_EQ(st.count, stream.size());
    EXPECT_EQ(st.positive + st.negative, st.count);
    EXPECT_NE(log.str().find("geometry 8x8"), std::string::npos);
    EXPECT_TRUE(fs::exists(img.path() / "voxel_c0.pgm"));
    EXPECT_TRUE(fs::exists(img.path() / "integrated_0.pgm"));
    EXPECT_TRUE(fs::exists(img.path() / "surrogate_0.pgm"));
    const IntensityFrame f = decode_pgm(read_file_bytes(img.path() / "integrated_0.pgm"));
    EXPECT_EQ(f.width, 8);

    expect_error(ErrorCategory::Path, [&] { cmd::cmd_inspect(img.path() / "missing.bin", {}, log); });
}
