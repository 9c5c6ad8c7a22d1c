// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any of them fails.
//
//   evada_acceptance [--config PATH] [--work DIR] [--keep]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "evada/evada.hpp"

using namespace evada;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kGradRel = 1e-4;
constexpr double kGradAbs = 1e-8;
constexpr double kFdStep = 1e-5;
constexpr std::size_t kMaxParams = 500;
constexpr double kIdentityTol = 1e-12;
constexpr double kUniformEntropyTol = 1e-9;
constexpr double kVoxelMarginThreshold = 0.0;  // margin must be strictly greater
constexpr double kAnchorMseBound = 0.015;
constexpr double kGradSeconds = 30, kRoutingSeconds = 10, kEncoderSeconds = 30, kParserSeconds = 10;
constexpr double kEndToEndSeconds = 15 * 60;

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

EventStream random_stream(Rng& rng, std::size_t n, int w, int h) {
    EventStream s;
    s.width = w;
    s.height = h;
    std::int64_t t = static_cast<std::int64_t>(rng.index(100));
    for (std::size_t i = 0; i < n; ++i) {
        t += static_cast<std::int64_t>(rng.index(50));
        s.events.push_back({static_cast<std::uint16_t>(rng.index(static_cast<std::uint64_t>(w))),
                            static_cast<std::uint16_t>(rng.index(static_cast<std::uint64_t>(h))), t,
                            static_cast<std::int8_t>(rng.coin() ? 1 : -1)});
    }
    return s;
}

std::size_t param_count(Mlp& m) {
    std::size_t n = 0;
    for (auto* p : m.parameters()) n += p->value.size();
    return n;
}

double grad_norm(const std::vector<Parameter*>& ps) {
    double s = 0.0;
    for (auto* p : ps) {
        for (double g : p->grad) s += g * g;
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Small models shared by criteria 2 and 3: 4x4 sensor, 4 classes, one hidden
// layer everywhere.

struct Small {
    static constexpr int kW = 4, kH = 4;
    static constexpr std::size_t kClasses = 4;
    EncoderConfig enc;
    SurrogateConfig sur;
    Mlp source;
    Reconstructor recon;
    std::array<Mlp, kNumTargets> targets;
    PreparedStream stream;

    explicit Small(std::uint64_t seed) {
        enc.stack_events = 40;
        enc.voxel_bins = 2;
        enc.est_bins = 2;
        sur.frames = 3;
        sur.recon_bins = 2;
        source = make_classifier("source", 1, kH, kW, ClassifierSpec{8, 0, true}, kClasses, seed + 1);
        recon = Reconstructor(kW, kH, sur.recon_bins, 8, seed + 2);
        targets = make_targets(kW, kH, enc, ClassifierSpec{6, 0, true}, kClasses, seed + 3);
        Rng rng(seed);
        stream = prepare_stream(random_stream(rng, 60, kW, kH), 0, enc, sur);
    }

    const std::vector<RepTensor>& segments() const { return stream.surrogate.segment_voxels; }

    std::vector<double> anchor_pixels() const { return recon.predict(segments()[0]).pixels; }
    std::vector<double> source_probs_on(const std::vector<double>& frame) const {
        return softmax_values(source.predict(frame));
    }
    std::vector<double> target_probs(std::size_t i) const {
        return softmax_values(targets[i].predict(stream.reps[i].data));
    }
    std::vector<double> ensemble() const {
        std::vector<double> e(kClasses, 0.0);
        for (std::size_t i = 0; i < kNumTargets; ++i) {
            const auto p = target_probs(i);
            for (std::size_t c = 0; c < kClasses; ++c) e[c] += p[c] / kNumTargets;
        }
        return e;
    }

    void zero_grad() {
        source.zero_grad();
        recon.net().zero_grad();
        for (auto& t : targets) t.zero_grad();
    }

    // All five terms for the current parameters, on one tape.
    struct Terms {
        RmbTerms rmb;
        MkaTerms mka;
        std::size_t pseudo = 0;
    };
    Terms terms(Tape& tape) {
        const SurrogateBatch b = build_surrogate_from_segments(recon, tape, segments(), 0);
        Terms t;
        t.rmb = rmb_losses(source, b);
        t.pseudo = argmax(t.rmb.source_probs.value());
        t.mka = mka_losses(targets, stream.reps, t.rmb.source_probs, t.pseudo);
        return t;
    }
};

struct GradStats {
    std::size_t entries = 0;
    std::size_t bad = 0;
    double worst_rel = 0.0;
};

// Central differences of loss() over every entry of ps against p->grad.
void fd_check(const std::vector<Parameter*>& ps, const std::function<double()>& loss, GradStats& st) {
    for (auto* p : ps) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + kFdStep;
            const double up = loss();
            p->value[i] = keep - kFdStep;
            const double down = loss();
            p->value[i] = keep;
            const double numeric = (up - down) / (2 * kFdStep);
            const double analytic = p->grad[i];
            const double scale = std::max(std::abs(analytic), std::abs(numeric));
            ++st.entries;
            const double err = std::abs(analytic - numeric);
            if (err > kGradRel * scale + kGradAbs) ++st.bad;
            if (scale > kGradAbs) st.worst_rel = std::max(st.worst_rel, err / scale);
        }
    }
}

std::vector<Parameter*> target_params(Small& m) {
    std::vector<Parameter*> out;
    for (auto& t : m.targets) {
        for (auto* p : t.parameters()) out.push_back(p);
    }
    return out;
}

Outcome criterion_gradients() {
    Clock clock;
    std::ostringstream detail;
    bool ok = true;
    std::size_t largest = 0;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        Small m(seed);
        largest = std::max({largest, param_count(m.source), param_count(m.recon.net())});
        for (auto& t : m.targets) largest = std::max(largest, param_count(t));

        // pseudo label and the stop-gradient operands are fixed values for the oracles
        const auto teacher = m.source_probs_on(m.anchor_pixels());
        const std::size_t pseudo = argmax(teacher);
        const auto ens_fixed = m.ensemble();
        const auto anchor_fixed = m.anchor_pixels();

        auto backward_of = [&](auto pick) {
            m.zero_grad();
            Tape tape;
            auto t = m.terms(tape);
            tape.backward(pick(t));
        };
        const std::pair<const char*, std::function<void(GradStats&)>> checks[] = {
            {"L_EN",
             [&](GradStats& st) {
                 backward_of([](Small::Terms& t) { return t.rmb.entropy; });
                 fd_check(m.recon.net().parameters(),
                          [&] { return entropy_value(m.source_probs_on(m.anchor_pixels())); }, st);
             }},
            {"L_TC",
             [&](GradStats& st) {
                 backward_of([](Small::Terms& t) { return t.rmb.temporal; });
                 fd_check(m.source.parameters(),
                          [&] {
                              double acc = 0.0;
                              for (std::size_t o = 1; o < m.segments().size(); ++o) {
                                  acc += kl_value(teacher, m.source_probs_on(m.recon.predict(m.segments()[o]).pixels));
                              }
                              return acc / static_cast<double>(m.segments().size() - 1);
                          },
                          st);
             }},
            {"L_Sup",
             [&](GradStats& st) {
                 backward_of([](Small::Terms& t) { return t.mka.supervised; });
                 fd_check(target_params(m),
                          [&] {
                              double acc = 0.0;
                              for (std::size_t i = 0; i < kNumTargets; ++i) {
                                  acc -= std::log(std::max(m.target_probs(i)[pseudo], kLogFloor));
                              }
                              return acc;
                          },
                          st);
             }},
            {"L_PC",
             [&](GradStats& st) {
                 backward_of([](Small::Terms& t) { return t.mka.consistency; });
                 fd_check(target_params(m),
                          [&] {
                              double acc = 0.0;
                              for (std::size_t k = 0; k < kNumTargets; ++k) {
                                  for (std::size_t l = 0; l < kNumTargets; ++l) {
                                      if (k != l) acc += kl_value(m.target_probs(k), m.target_probs(l));
                                  }
                              }
                              return acc;
                          },
                          st);
             }},
            {"L_CM",
             [&](GradStats& st) {
                 backward_of([](Small::Terms& t) { return t.mka.cross_modal; });
                 fd_check(target_params(m), [&] { return kl_value(m.ensemble(), teacher); }, st);
                 fd_check(m.source.parameters(),
                          [&] { return kl_value(m.source_probs_on(anchor_fixed), ens_fixed); }, st);
             }},
        };
        for (const auto& [name, run] : checks) {
            GradStats st;
            run(st);
            if (st.bad > 0 || st.entries == 0) {
                ok = false;
                detail << name << " seed " << seed << ": " << st.bad << "/" << st.entries << " entries off; ";
            }
            if (seed == 11) detail << name << " worst rel " << fmt("%.2e", st.worst_rel) << ", ";
        }
    }
    const double secs = clock.seconds();
    ok = ok && largest <= kMaxParams && secs < kGradSeconds;
    detail << "largest model " << largest << " params, " << fmt("%.2f", secs) << " s";
    return {ok, detail.str()};
}

// ---------------------------------------------------------------------------

Outcome criterion_routing() {
    Clock clock;
    // rows: loss; columns: source, reconstructor, targets
    const char* names[] = {"L_EN", "L_TC", "L_Sup", "L_PC", "L_CM"};
    const bool expected[5][3] = {
        {false, true, false}, {true, false, false}, {false, false, true}, {false, false, true}, {true, false, true}};
    bool ok = true;
    std::ostringstream detail;
    constexpr int kTrials = 50;
    for (int trial = 0; trial < kTrials; ++trial) {
        Small m(1000 + static_cast<std::uint64_t>(trial));
        for (int l = 0; l < 5; ++l) {
            m.zero_grad();
            Tape tape;
            auto t = m.terms(tape);
            const DiffValue picks[] = {t.rmb.entropy, t.rmb.temporal, t.mka.supervised, t.mka.consistency,
                                       t.mka.cross_modal};
            tape.backward(picks[l]);
            const double norms[3] = {grad_norm(m.source.parameters()), grad_norm(m.recon.net().parameters()),
                                     grad_norm(target_params(m))};
            for (int g = 0; g < 3; ++g) {
                const bool reached = norms[g] != 0.0;
                if (reached != expected[l][g]) {
                    ok = false;
                    detail << names[l] << " group " << g << " norm " << norms[g] << " trial " << trial << "; ";
                }
            }
        }
    }
    const double secs = clock.seconds();
    ok = ok && secs < kRoutingSeconds;
    detail << kTrials << " random batches x 5 losses, " << fmt("%.2f", secs) << " s";
    return {ok, detail.str()};
}

// ---------------------------------------------------------------------------

EventStream flipped(EventStream s) {
    for (auto& e : s.events) e.p = static_cast<std::int8_t>(-e.p);
    return s;
}

Outcome criterion_encoders() {
    Clock clock;
    Rng rng(2024);
    std::size_t failures = 0;
    std::ostringstream detail;
    auto check = [&](bool cond, const char* what) {
        if (!cond) {
            if (failures < 5) detail << what << "; ";
            ++failures;
        }
    };
    constexpr int kStreams = 1000;
    for (int s = 0; s < kStreams; ++s) {
        const int w = 3 + static_cast<int>(rng.index(6));
        const int h = 3 + static_cast<int>(rng.index(6));
        const int bins = 1 + static_cast<int>(rng.index(6));
        const EventStream ev = random_stream(rng, 1 + rng.index(80), w, h);

        // per-event temporal weights sum to 1
        bool sums = true;
        for (const auto& e : ev.events) {
            double total = 0.0;
            temporal_kernel(normalized_time(e.t, ev.t_first(), ev.t_last(), bins), bins,
                            [&](int, double wt) { total += wt; });
            sums = sums && std::abs(total - 1.0) <= kIdentityTol;
        }
        check(sums, "temporal weights do not sum to 1");
        EventStream positive = ev;
        for (auto& e : positive.events) e.p = 1;
        const auto vp = encode_voxel_grid(positive, bins, false);
        const double mass = std::accumulate(vp.data.begin(), vp.data.end(), 0.0);
        check(std::abs(mass - static_cast<double>(ev.size())) <= 1e-9 * static_cast<double>(ev.size()),
              "voxel mass differs from event count");

        // polarity antisymmetry
        const EventStream neg = flipped(ev);
        for (bool norm : {false, true}) {
            const auto v = encode_voxel_grid(ev, bins, norm);
            const auto vn = encode_voxel_grid(neg, bins, norm);
            bool anti = true;
            for (std::size_t i = 0; i < v.data.size(); ++i) anti = anti && v.data[i] == -vn.data[i];
            check(anti, "voxel polarity antisymmetry");
        }
        const std::size_t n_fixed = 1 + rng.index(100);
        const auto st = encode_stack(ev, n_fixed, true);
        const auto stn = encode_stack(neg, n_fixed, true);
        bool anti = true;
        for (std::size_t i = 0; i < st.data.size(); ++i) anti = anti && st.data[i] == -stn.data[i];
        check(anti, "stack polarity antisymmetry");
        const auto est = encode_est(ev, bins, false);
        const auto estn = encode_est(neg, bins, false);
        bool swapped = true;
        const std::size_t half = est.data.size() / 2;
        for (std::size_t i = 0; i < half; ++i) {
            swapped = swapped && est.data[i] == estn.data[half + i] && est.data[half + i] == estn.data[i];
        }
        check(swapped, "EST polarity groups do not swap");

        // spatial equivariance: shift into a larger sensor
        const int dx = 1 + static_cast<int>(rng.index(3));
        const int dy = static_cast<int>(rng.index(3));
        EventStream shifted = ev;
        shifted.width = w + dx;
        shifted.height = h + dy;
        for (auto& e : shifted.events) {
            e.x = static_cast<std::uint16_t>(e.x + dx);
            e.y = static_cast<std::uint16_t>(e.y + dy);
        }
        auto equivariant = [&](const RepTensor& a, const RepTensor& b) {
            for (int c = 0; c < a.channels; ++c) {
                for (int y = 0; y < b.height; ++y) {
                    for (int x = 0; x < b.width; ++x) {
                        const bool inside = x >= dx && y >= dy;
                        const double want = inside ? a.at(c, x - dx, y - dy) : 0.0;
                        if (b.at(c, x, y) != want) return false;
                    }
                }
            }
            return true;
        };
        check(equivariant(encode_voxel_grid(ev, bins), encode_voxel_grid(shifted, bins)), "voxel equivariance");
        check(equivariant(encode_est(ev, bins), encode_est(shifted, bins)), "EST equivariance");
        check(equivariant(encode_stack(ev, n_fixed), encode_stack(shifted, n_fixed)), "stack equivariance");

        // EST with unit measurement: positive minus negative groups is the voxel grid
        const auto unit = encode_est(ev, bins, false, EstMeasurement::Unit);
        const auto vox = encode_voxel_grid(ev, bins, false);
        bool same = true;
        for (std::size_t i = 0; i < vox.data.size(); ++i) {
            same = same && std::abs(unit.data[i] - unit.data[half + i] - vox.data[i]) <= kIdentityTol;
        }
        check(same, "EST/voxel identity");
    }
    // empty streams encode to zeros
    EventStream empty;
    empty.width = 5;
    empty.height = 4;
    bool zeros = true;
    for (bool norm : {false, true}) {
        for (const auto& r : {encode_stack(empty, 10, norm), encode_voxel_grid(empty, 3, norm),
                              encode_est(empty, 3, norm), encode_est(empty, 3, norm, EstMeasurement::Unit)}) {
            zeros = zeros && !r.data.empty() &&
                    std::all_of(r.data.begin(), r.data.end(), [](double v) { return v == 0.0; });
        }
    }
    check(zeros, "empty stream not all zero");
    const double secs = clock.seconds();
    detail << kStreams << " random streams, " << failures << " violations, " << fmt("%.2f", secs) << " s";
    return {failures == 0 && secs < kEncoderSeconds, detail.str()};
}

// ---------------------------------------------------------------------------

Outcome criterion_parser() {
    Clock clock;
    std::ostringstream detail;
    bool ok = true;
    Rng rng(5);

    constexpr std::size_t kRecords = 100000;
    EventStream s;
    s.width = s.height = kNmnistSensorSize;
    std::int64_t t = 0;
    for (std::size_t i = 0; i < kRecords; ++i) {
        t = std::min<std::int64_t>(kNmnistMaxTimestamp, t + static_cast<std::int64_t>(rng.index(160)));
        s.events.push_back({static_cast<std::uint16_t>(rng.index(kNmnistSensorSize)),
                            static_cast<std::uint16_t>(rng.index(kNmnistSensorSize)), t,
                            static_cast<std::int8_t>(rng.coin() ? 1 : -1)});
    }
    const auto bytes = write_nmnist_bin(s);
    const EventStream back = read_nmnist_bin(bytes);
    const bool round = bytes.size() == kRecords * kNmnistRecordBytes && back.events == s.events &&
                       write_nmnist_bin(back) == bytes;
    if (!round) detail << "round trip mismatch; ";
    ok = ok && round;
    detail << kRecords << " records round-tripped (last t " << t << "), ";

    constexpr int kFuzz = 10000;
    std::size_t accepted = 0, rejected = 0, other = 0;
    for (int i = 0; i < kFuzz; ++i) {
        std::vector<std::uint8_t> junk(rng.index(64));
        for (auto& b : junk) b = static_cast<std::uint8_t>(rng.index(256));
        try {
            const EventStream e = read_nmnist_bin(junk);
            validate(e);
            ++accepted;
        } catch (const Error&) {
            ++rejected;
        } catch (...) {
            ++other;
        }
    }
    ok = ok && other == 0;
    detail << kFuzz << " fuzz inputs (" << accepted << " accepted, " << rejected << " rejected, " << other
           << " unexpected), ";

    const std::vector<std::uint8_t> worked = {0x21, 0x10, 0x80, 0x00, 0x0A};
    const EventStream w = read_nmnist_bin(worked);
    const bool example = w.size() == 1 && w.events[0].x == 33 && w.events[0].y == 16 && w.events[0].p == 1 &&
                         w.events[0].t == 10;
    ok = ok && example;
    detail << "worked example " << (example ? "{33,16,+1,10}" : "WRONG");
    const double secs = clock.seconds();
    detail << ", " << fmt("%.2f", secs) << " s";
    return {ok && secs < kParserSeconds, detail.str()};
}

// ---------------------------------------------------------------------------

std::vector<double> random_distribution(Rng& rng, std::size_t c) {
    std::vector<double> logits(c);
    const double spread = rng.uniform(0.1, 8.0);
    for (auto& z : logits) z = rng.uniform(-spread, spread);
    return softmax_values(logits);
}

Outcome criterion_loss_identities() {
    Rng rng(6);
    std::size_t bad = 0;
    double worst_self = 0.0, min_kl = INFINITY;
    constexpr int kPairs = 10000;
    for (int i = 0; i < kPairs; ++i) {
        const std::size_t c = 2 + rng.index(9);
        const auto p = random_distribution(rng, c);
        const auto q = random_distribution(rng, c);
        Tape tape;
        const DiffValue pn = tape.constant(p);
        const DiffValue qn = tape.constant(q);
        const double self = ad::kl_div(pn, pn).scalar();
        const double kl = ad::kl_div(pn, qn).scalar();
        const double h = ad::entropy(pn).scalar();
        worst_self = std::max(worst_self, std::abs(self));
        min_kl = std::min(min_kl, kl);
        bad += std::abs(self) > kIdentityTol;
        bad += kl < 0.0;
        bad += h < 0.0 || h > std::log(static_cast<double>(c)) + kIdentityTol;
        bad += std::abs(kl - kl_value(p, q)) > 1e-12 * std::max(1.0, kl);
    }
    Tape tape;
    const double uniform = ad::entropy(tape.constant({0.25, 0.25, 0.25, 0.25})).scalar();
    const bool ln4 = std::abs(uniform - std::log(4.0)) <= kUniformEntropyTol;

    // pseudo-label argmax under positive temperatures
    constexpr int kSamples = 1000, kTemps = 50;
    std::size_t flips = 0;
    Mlp source = make_classifier("source", 1, 3, 3, ClassifierSpec{6, 0, true}, 5, 77);
    for (int s = 0; s < kSamples; ++s) {
        IntensityFrame f(3, 3);
        for (auto& v : f.pixels) v = rng.uniform();
        const std::size_t label = pseudo_label(source, f).label;
        const auto logits = source.predict(f.pixels);
        for (int k = 0; k < kTemps; ++k) {
            const double temp = std::exp(rng.uniform(-4.0, 4.0));
            std::vector<double> scaled(logits);
            for (auto& z : scaled) z /= temp;
            flips += argmax(softmax_values(scaled)) != label;
        }
    }
    std::ostringstream detail;
    detail << kPairs << " pairs: max |KL(p,p)| " << fmt("%.1e", worst_self) << ", min KL " << fmt("%.2e", min_kl)
           << ", " << bad << " violations; H(uniform4) - ln4 = " << fmt("%.1e", uniform - std::log(4.0)) << "; "
           << kSamples << "x" << kTemps << " temperatures, " << flips << " argmax changes";
    return {bad == 0 && ln4 && flips == 0, detail.str()};
}

// ---------------------------------------------------------------------------
// End-to-end runs on the reference config (criteria 7, 8, 9).

struct Pipeline {
    cmd::PretrainSummary pretrain;
    cmd::AdaptSummary adapt;
    cmd::Accuracies eval;
};

Pipeline full_pipeline(const RunConfig& cfg, const fs::path& data, const fs::path& run, std::ostream& log) {
    Pipeline p;
    cmd::cmd_gen(cfg, data, true, log);
    p.pretrain = cmd::cmd_pretrain(cfg, data, run, log);
    p.adapt = cmd::cmd_adapt(cfg, data, run, {}, log);
    p.eval = cmd::cmd_eval(cfg, data, run, log);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct EndToEnd {
    RunConfig cfg;
    fs::path work;
    std::ostream& log;
    std::optional<Pipeline> first;
    double first_seconds = 0.0;
    std::string setup_error;

    void run_first() {
        try {
            Clock clock;
            first = full_pipeline(cfg, work / "data_a", work / "run_a", log);
            first_seconds = clock.seconds();
        } catch (const std::exception& e) {
            setup_error = e.what();
        }
    }
};

Outcome criterion_end_to_end(EndToEnd& e2e, Outcome& a, Outcome& b, Outcome& c) {
    Clock clock;
    e2e.run_first();
    if (!e2e.first) {
        a = b = c = {false, "pipeline failed: " + e2e.setup_error};
        return {false, a.detail};
    }
    const Pipeline& full = *e2e.first;
    const double baseline = full.adapt.initial.at("source_integrated");
    const double voxel0 = full.adapt.initial.at("voxel");
    const double voxel = full.adapt.final.at("voxel");
    a = {true, "source on integrated anchors " + fmt("%.4f", baseline) + " (source on surrogate " +
                   fmt("%.4f", full.adapt.initial.at("source_surrogate")) + ", untrained voxel target " +
                   fmt("%.4f", voxel0) + ")"};

    const double margin = voxel - baseline;
    b = {margin > kVoxelMarginThreshold, "voxel after " + std::to_string(full.adapt.steps_done) + " steps " +
                                             fmt("%.4f", voxel) + ", margin " + fmt("%+.4f", margin) +
                                             " (threshold > " + fmt("%.2f", kVoxelMarginThreshold) + ")"};

    RunConfig sup = e2e.cfg;
    for (const char* kv : {"adapt.ablation.en=false", "adapt.ablation.tc=false", "adapt.ablation.pc=false",
                           "adapt.ablation.cm=false"}) {
        sup = apply_override(sup, kv);
    }
    const fs::path sup_run = e2e.work / "run_sup";
    fs::create_directories(sup_run);
    for (const char* f : {"source.ckpt", "reconstructor.ckpt"}) {
        fs::copy_file(e2e.work / "run_a" / f, sup_run / f, fs::copy_options::overwrite_existing);
    }
    const auto sup_sum = cmd::cmd_adapt(sup, e2e.work / "data_a", sup_run, {}, e2e.log);
    const double sup_voxel = sup_sum.final.at("voxel");
    const double full_ens = full.adapt.final.at("ensemble");
    const double sup_ens = sup_sum.final.at("ensemble");
    c = {voxel >= sup_voxel, "all losses voxel " + fmt("%.4f", voxel) + " vs L_Sup only " + fmt("%.4f", sup_voxel) +
                                 " (ensemble " + fmt("%.4f", full_ens) + " vs " + fmt("%.4f", sup_ens) + ")"};
    const double secs = clock.seconds();
    return {secs < kEndToEndSeconds, "pipeline + ablation run " + fmt("%.1f", secs) + " s (budget " +
                                         fmt("%.0f", kEndToEndSeconds) + " s)"};
}

Outcome criterion_determinism(EndToEnd& e2e) {
    if (!e2e.first) return {false, "first pipeline did not complete"};
    full_pipeline(e2e.cfg, e2e.work / "data_b", e2e.work / "run_b", e2e.log);
    std::ostringstream detail;
    bool ok = true;
    for (const char* f : {"pretrain_metrics.csv", "adapt_metrics.csv", "eval_metrics.csv"}) {
        const std::string x = slurp(e2e.work / "run_a" / f);
        const std::string y = slurp(e2e.work / "run_b" / f);
        const bool same = !x.empty() && x == y;
        ok = ok && same;
        detail << f << " " << (same ? "identical" : "DIFFERS") << " (" << x.size() << " bytes); ";
    }
    const bool bundle = slurp(e2e.work / "run_a" / "bundle" / "target_voxel.ckpt") ==
                        slurp(e2e.work / "run_b" / "bundle" / "target_voxel.ckpt");
    ok = ok && bundle;
    detail << "voxel checkpoint " << (bundle ? "identical" : "DIFFERS");
    return {ok, detail.str()};
}

Outcome criterion_reconstructor(EndToEnd& e2e) {
    if (!e2e.first) return {false, "first pipeline did not complete"};
    const RunConfig& cfg = e2e.cfg;
    const double mse = e2e.first->pretrain.recon_holdout_anchor_mse;
    bool ok = mse < kAnchorMseBound;

    // every surrogate batch an adapt step builds: anchor = segment 0 of the raw stream
    const Dataset ds = Dataset::open(e2e.work / "data_a");
    const auto raw = ds.streams(kTarget);
    const auto prepared = cmd::prepare_all(raw, cfg);
    AdaptationState st = cmd::load_bundle(e2e.work / "run_a" / "bundle", cfg);
    std::size_t checked = 0, wrong = 0;
    for (std::size_t i = 0; i < prepared.size(); ++i) {
        Tape tape;
        const SurrogateBatch b =
            build_surrogate_from_segments(st.reconstructor, tape, prepared[i].surrogate.segment_voxels, prepared[i].id);
        const auto first = encode_voxel_grid(slice_stream(raw[i], cfg.surrogate.frames).front(),
                                             cfg.surrogate.recon_bins, cfg.surrogate.normalize);
        std::vector<std::size_t> order(cfg.surrogate.frames);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const bool good = b.segment_ids == order && b.anchor.pixels == st.reconstructor.predict(first).pixels &&
                          b.others.size() + 1 == cfg.surrogate.frames;
        wrong += !good;
        ++checked;
    }
    ok = ok && wrong == 0 && checked > 0;
    return {ok, "held-out anchor MSE " + fmt("%.5f", mse) + " (bound " + fmt("%.3f", kAnchorMseBound) + "); " +
                    std::to_string(checked) + " surrogate batches, " + std::to_string(wrong) +
                    " with an anchor other than segment 0"};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path config = fs::path(EVADA_SOURCE_DIR) / "configs" / "reference.json";
    fs::path work;
    bool keep = false;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--config") && i + 1 < argc) {
            config = argv[++i];
        } else if (!std::strcmp(argv[i], "--work") && i + 1 < argc) {
            work = argv[++i];
        } else if (!std::strcmp(argv[i], "--keep")) {
            keep = true;
        } else {
            std::cerr << "usage: " << argv[0] << " [--config PATH] [--work DIR] [--keep]\n";
            return 2;
        }
    }
    if (work.empty()) work = fs::temp_directory_path() / ("evada_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(work);

    int failed = 0;
    auto report = [&](const char* id, const Outcome& o) {
        std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
        failed += !o.pass;
    };
    auto guarded = [](const std::function<Outcome()>& f) -> Outcome {
        try {
            return f();
        } catch (const std::exception& e) {
            return {false, std::string("exception: ") + e.what()};
        }
    };

    report("1 full-scale benchmark results", {true, "not reproducible at desk scale; replaced by criteria 2-9"});
    report("2 gradient suite", guarded(criterion_gradients));
    report("3 routing suite", guarded(criterion_routing));
    report("4 encoder suite", guarded(criterion_encoders));
    report("5 parser suite", guarded(criterion_parser));
    report("6 loss identities", guarded(criterion_loss_identities));

    std::ofstream log_file(work / "pipeline.log");
    RunConfig cfg;
    try {
        cfg = load_config(config);
    } catch (const std::exception& e) {
        report("7-9 end to end", {false, std::string("cannot load config: ") + e.what()});
        return 1;
    }
    EndToEnd e2e{cfg, work, log_file, std::nullopt, 0.0, {}};
    Outcome a, b, c;
    const Outcome runtime = guarded([&] { return criterion_end_to_end(e2e, a, b, c); });
    report("7a source-transfer baseline", a);
    report("7b full run beats baseline", b);
    report("7c all losses >= L_Sup only", c);
    report("7d end-to-end runtime", runtime);
    report("8 determinism", guarded([&] { return criterion_determinism(e2e); }));
    report("9 reconstructor pretraining", guarded([&] { return criterion_reconstructor(e2e); }));

    if (!keep) {
        std::error_code ec;
        fs::remove_all(work, ec);
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
