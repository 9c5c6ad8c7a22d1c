#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "evada/config.hpp"
#include "evada/error.hpp"
#include "evada/events.hpp"
#include "evada/nmnist.hpp"
#include "evada/rng.hpp"
#include "evada/scene.hpp"

namespace evada {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Portable graymap (binary P5). 16-bit for dataset frames, 8-bit for debug dumps.

inline std::vector<std::uint8_t> encode_pgm(const IntensityFrame& f, bool sixteen_bit) {
    const int maxval = sixteen_bit ? 65535 : 255;
    const std::string header =
        "P5\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n" + std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (double v : f.pixels) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (sixteen_bit) out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
    return out;
}

inline IntensityFrame decode_pgm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "P5") fail(ErrorCategory::Format, "not a binary PGM");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        fail(ErrorCategory::Format, "bad PGM header");
    }
    ++pos;  // single whitespace after maxval
    if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535)) fail(ErrorCategory::Format, "unsupported PGM header");
    const std::size_t bpp = maxval == 65535 ? 2 : 1;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() - std::min(pos, bytes.size()) != n * bpp) fail(ErrorCategory::Format, "PGM payload size mismatch");
    IntensityFrame f(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned q = bpp == 2 ? (unsigned{bytes[pos + 2 * i]} << 8) | bytes[pos + 2 * i + 1] : bytes[pos + i];
        f.pixels[i] = static_cast<double>(q) / maxval;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Manifest: a header comment with the geometry, then one record per line:
//   <relative path> <class index, -1 when unlabeled> <split>

struct ManifestEntry {
    std::string path;
    int label = -1;
    std::string split;
};

struct Manifest {
    int width = 0;
    int height = 0;
    int classes = 0;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& name) const {
        std::vector<ManifestEntry> out;
        std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                     [&](const ManifestEntry& e) { return e.split == name; });
        return out;
    }
};

inline std::string format_manifest(const Manifest& m) {
    std::ostringstream os;
    os << "# evada-dataset v1 width=" << m.width << " height=" << m.height << " classes=" << m.classes << "\n";
    for (const auto& e : m.entries) os << e.path << " " << e.label << " " << e.split << "\n";
    return os.str();
}

inline Manifest parse_manifest(const std::string& text) {
    Manifest m;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) ||
        std::sscanf(line.c_str(), "# evada-dataset v1 width=%d height=%d classes=%d", &m.width, &m.height,
                    &m.classes) != 3) {
        fail(ErrorCategory::Format, "manifest: missing or malformed header line");
    }
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.path >> e.label >> e.split)) {
            fail(ErrorCategory::Format, "manifest: malformed record on line " + std::to_string(lineno));
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

inline Manifest load_manifest(const fs::path& dataset_dir) {
    const fs::path p = dataset_dir / "manifest.txt";
    if (!fs::exists(p)) fail(ErrorCategory::Path, "no dataset manifest at " + p.string());
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::Path, "cannot write " + p.string());
    out << text;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation.

inline const char* kSourceTrain = "source_train";
inline const char* kSourceVal = "source_val";
inline const char* kTarget = "target";
inline const char* kEval = "eval";

/// Draws scenes for (split, class, index) until the stream is non-empty.
/// Event splits may contain inverted-contrast scenes; source frames never do.
inline SceneRender draw_sample(const RunConfig& cfg, std::uint64_t split_seed, int cls, std::size_t index,
                               bool event_split) {
    SceneRanges ranges = cfg.dataset.scene;
    if (!event_split) ranges.inverted_fraction = 0.0;
    const std::uint64_t base = derive_seed(derive_seed(split_seed, static_cast<std::uint64_t>(cls)), index);
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        Rng rng(derive_seed(base, attempt));
        const SceneSpec spec = random_scene(cls, ranges, rng);
        SceneRender r = generate_scene(spec, rng.next());
        if (!r.stream.empty()) return r;
    }
    fail(ErrorCategory::Config, "scene parameters produce no events");
}

struct GenCounts {
    std::size_t source_train = 0, source_val = 0, target = 0, eval = 0;
};

/// Writes the four splits and the manifest under dir (which must exist).
/// Source splits are ground-truth frames (16-bit PGM) captured at a random
/// instant after the onset; target and eval splits are event files. Target entries are
/// shuffled and stored without labels.
inline GenCounts generate_dataset(const RunConfig& cfg, const fs::path& dir) {
    validate(cfg);
    if (cfg.dataset.classes < 1) fail(ErrorCategory::Config, "dataset needs at least one class");
    const std::uint64_t gen = derive_seed(cfg.seed, "gen");
    Manifest m;
    m.width = cfg.width();
    m.height = cfg.height();
    m.classes = cfg.dataset.classes;
    GenCounts counts;

    auto frames_split = [&](const char* split, std::size_t per_class, std::size_t& count) {
        fs::create_directories(dir / split);
        const std::uint64_t split_seed = derive_seed(gen, split);
        Rng pick(derive_seed(split_seed, "instant"));
        for (int c = 0; c < cfg.dataset.classes; ++c) {
            for (std::size_t i = 0; i < per_class; ++i) {
                const SceneRender r = draw_sample(cfg, split_seed, c, i, false);
                // any instant after the shape has fully appeared
                const auto& sc = cfg.dataset.scene;
                const auto first = static_cast<std::size_t>((sc.onset_delay_max_us + sc.onset_us) / sc.step_us);
                const auto& frame = r.frames[first + static_cast<std::size_t>(pick.index(r.frames.size() - first))];
                char name[64];
                std::snprintf(name, sizeof name, "%s/c%d_%05zu.pgm", split, c, i);
                write_file_bytes(dir / name, encode_pgm(frame, true));
                m.entries.push_back({name, c, split});
                ++count;
            }
        }
    };
    auto stream_split = [&](const char* split, std::size_t per_class, bool labeled, std::size_t& count) {
        fs::create_directories(dir / split);
        const std::uint64_t split_seed = derive_seed(gen, split);
        std::vector<std::pair<int, std::size_t>> items;
        for (int c = 0; c < cfg.dataset.classes; ++c) {
            for (std::size_t i = 0; i < per_class; ++i) items.emplace_back(c, i);
        }
        Rng order(derive_seed(split_seed, "order"));
        shuffle(items, order);
        for (std::size_t k = 0; k < items.size(); ++k) {
            const auto [c, i] = items[k];
            const SceneRender r = draw_sample(cfg, split_seed, c, i, true);
            char name[64];
            std::snprintf(name, sizeof name, "%s/%s%05zu.bin", split, split, k);
            save_event_file(dir / name, r.stream);
            m.entries.push_back({name, labeled ? c : -1, split});
            ++count;
        }
    };
    frames_split(kSourceTrain, cfg.dataset.source_per_class, counts.source_train);
    frames_split(kSourceVal, cfg.dataset.source_val_per_class, counts.source_val);
    stream_split(kTarget, cfg.dataset.target_per_class, false, counts.target);
    stream_split(kEval, cfg.dataset.eval_per_class, true, counts.eval);
    write_text(dir / "manifest.txt", format_manifest(m));
    return counts;
}

/// Loaded dataset; geometry comes from the manifest header.
struct Dataset {
    fs::path dir;
    Manifest manifest;

    static Dataset open(const fs::path& dir) { return {dir, load_manifest(dir)}; }

    LabeledFrames frames(const std::string& split) const {
        LabeledFrames out;
        for (const auto& e : manifest.split(split)) {
            const auto f = decode_pgm(read_file_bytes(dir / e.path));
            if (f.width != manifest.width || f.height != manifest.height) {
                fail(ErrorCategory::Structural, e.path + ": frame geometry differs from the manifest");
            }
            out.frames.push_back(f);
            out.labels.push_back(e.label);
        }
        return out;
    }

    std::vector<EventStream> streams(const std::string& split) const {
        std::vector<EventStream> out;
        for (const auto& e : manifest.split(split)) {
            EventStream s = load_event_file(dir / e.path, manifest.width, manifest.height);
            if (e.label >= 0) s.label = e.label;
            out.push_back(std::move(s));
        }
        return out;
    }
};

}  // namespace evada
