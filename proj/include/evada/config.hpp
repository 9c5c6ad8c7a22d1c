#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "evada/adaptation.hpp"
#include "evada/error.hpp"
#include "evada/representations.hpp"
#include "evada/rng.hpp"
#include "evada/scene.hpp"
#include "evada/surrogate.hpp"

namespace evada {

struct DatasetConfig {
    int classes = 4;
    std::size_t source_per_class = 200;
    std::size_t source_val_per_class = 50;
    std::size_t target_per_class = 100;
    std::size_t eval_per_class = 50;
    SceneRanges scene;
};

struct ModelConfig {
    std::size_t source_hidden = 256;
    std::size_t target_hidden = 256;
    std::size_t recon_hidden = 128;
    std::size_t source_conv_channels = 0;  // 3x3 convolution front; 0 disables it
    std::size_t target_conv_channels = 0;
    bool conv_pool = true;

    ClassifierSpec source() const { return {source_hidden, source_conv_channels, conv_pool}; }
    ClassifierSpec target() const { return {target_hidden, target_conv_channels, conv_pool}; }
};

struct PretrainConfig {
    std::size_t source_steps = 1500;
    std::size_t source_batch = 32;
    double source_lr = 1e-3;
    bool augment = true;
    std::size_t recon_steps = 600;
    std::size_t recon_batch = 32;
    double recon_lr = 1e-3;
    double weight_decay = 0.01;
};

struct AdaptRunConfig {
    std::size_t steps = 100;
    std::size_t batch = 64;
    double lr = 1e-5;
    double weight_decay = 0.01;
    std::size_t eval_every = 25;
    std::size_t checkpoint_every = 25;
    LossWeights weights;
    LrScale lr_scale;
    LossFlags ablation;
};

/// Everything a command needs. Defaults for adaptation track the published
/// recipe (AdamW, lr 1e-5 with linear decay, batch 64); the desk-scale
/// reference config in configs/ overrides them.
struct RunConfig {
    std::uint64_t seed = 7;
    DatasetConfig dataset;
    EncoderConfig encoder;
    SurrogateConfig surrogate;
    ModelConfig model;
    PretrainConfig pretrain;
    AdaptRunConfig adapt;

    int width() const noexcept { return dataset.scene.width; }
    int height() const noexcept { return dataset.scene.height; }

    AdaptConfig adapt_config() const {
        AdaptConfig a;
        a.steps = adapt.steps;
        a.batch = adapt.batch;
        a.optimizer = AdamWConfig{adapt.lr, 0.9, 0.999, 1e-8, adapt.weight_decay};
        a.flags = adapt.ablation;
        a.weights = adapt.weights;
        a.lr_scale = adapt.lr_scale;
        return a;
    }
};

using Json = nlohmann::ordered_json;

inline Json to_json(const RunConfig& c) {
    const auto& s = c.dataset.scene;
    Json j;
    j["seed"] = c.seed;
    j["dataset"] = {
        {"classes", c.dataset.classes},
        {"width", s.width},
        {"height", s.height},
        {"source_per_class", c.dataset.source_per_class},
        {"source_val_per_class", c.dataset.source_val_per_class},
        {"target_per_class", c.dataset.target_per_class},
        {"eval_per_class", c.dataset.eval_per_class},
        {"size_min", s.size_min},
        {"size_max", s.size_max},
        {"speed_min", s.speed_min},
        {"speed_max", s.speed_max},
        {"foreground_min", s.foreground_min},
        {"foreground_max", s.foreground_max},
        {"background_min", s.background_min},
        {"background_max", s.background_max},
        {"theta", s.theta},
        {"duration_us", s.duration_us},
        {"step_us", s.step_us},
        {"noise_rate", s.noise_rate},
        {"onset_delay_min_us", s.onset_delay_min_us},
        {"onset_delay_max_us", s.onset_delay_max_us},
        {"onset_us", s.onset_us},
        {"inverted_fraction", s.inverted_fraction},
    };
    j["representation"] = {
        {"stack_events", c.encoder.stack_events},
        {"voxel_bins", c.encoder.voxel_bins},
        {"est_bins", c.encoder.est_bins},
        {"normalize", c.encoder.normalize},
        {"est_measurement", c.encoder.est_measurement == EstMeasurement::Unit ? "unit" : "timestamp"},
        {"surrogate_frames", c.surrogate.frames},
        {"recon_bins", c.surrogate.recon_bins},
        {"leak", c.surrogate.leak},
        {"neutral", c.surrogate.neutral},
        {"integration_theta", c.surrogate.theta},
    };
    j["model"] = {
        {"source_hidden", c.model.source_hidden},
        {"target_hidden", c.model.target_hidden},
        {"source_conv_channels", c.model.source_conv_channels},
        {"target_conv_channels", c.model.target_conv_channels},
        {"conv_pool", c.model.conv_pool},
        {"recon_hidden", c.model.recon_hidden},
    };
    j["pretrain"] = {
        {"source_steps", c.pretrain.source_steps},
        {"source_batch", c.pretrain.source_batch},
        {"source_lr", c.pretrain.source_lr},
        {"augment", c.pretrain.augment},
        {"recon_steps", c.pretrain.recon_steps},
        {"recon_batch", c.pretrain.recon_batch},
        {"recon_lr", c.pretrain.recon_lr},
        {"weight_decay", c.pretrain.weight_decay},
    };
    const auto& a = c.adapt;
    j["adapt"] = {
        {"steps", a.steps},
        {"batch", a.batch},
        {"lr", a.lr},
        {"weight_decay", a.weight_decay},
        {"eval_every", a.eval_every},
        {"checkpoint_every", a.checkpoint_every},
        {"weights", {{"en", a.weights.en}, {"tc", a.weights.tc}, {"sup", a.weights.sup}, {"pc", a.weights.pc},
                     {"cm", a.weights.cm}}},
        {"lr_scale",
         {{"source", a.lr_scale.source}, {"reconstructor", a.lr_scale.reconstructor}, {"targets", a.lr_scale.targets}}},
        {"ablation", {{"en", a.ablation.en}, {"tc", a.ablation.tc}, {"sup", a.ablation.sup}, {"pc", a.ablation.pc},
                      {"cm", a.ablation.cm}, {"finetune_fr", a.ablation.finetune_fr}}},
    };
    return j;
}

namespace detail {

/// Every key of `given` must exist in `schema` with a compatible JSON type.
inline void check_keys(const Json& given, const Json& schema, const std::string& path) {
    if (!given.is_object()) fail(ErrorCategory::Config, "'" + path + "' must be an object");
    for (const auto& [key, value] : given.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!schema.contains(key)) fail(ErrorCategory::Config, "unknown config key '" + where + "'");
        const Json& expect = schema.at(key);
        if (expect.is_object()) {
            check_keys(value, expect, where);
        } else if (expect.is_boolean() != value.is_boolean() || expect.is_string() != value.is_string() ||
                   expect.is_number() != value.is_number()) {
            fail(ErrorCategory::Config, "config key '" + where + "' has the wrong type");
        } else if (expect.is_number_integer() && !value.is_number_integer()) {
            fail(ErrorCategory::Config, "config key '" + where + "' must be an integer");
        } else if (expect.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
            fail(ErrorCategory::Config, "config key '" + where + "' must be non-negative");
        }
    }
}

inline void merge(Json& base, const Json& patch) {
    for (const auto& [key, value] : patch.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object()) {
            merge(base[key], value);
        } else {
            base[key] = value;
        }
    }
}

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorCategory::Config, what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
    using detail::require;
    const auto& s = c.dataset.scene;
    require(c.dataset.classes >= 1, "dataset.classes must be >= 1");
    require(c.dataset.classes <= static_cast<int>(kShapeClasses.size()),
            "dataset.classes must be <= " + std::to_string(kShapeClasses.size()));
    require(s.width >= 2 && s.width <= 255 && s.height >= 2 && s.height <= 255, "sensor geometry must be 2..255");
    require(s.size_min > 0 && s.size_max >= s.size_min, "shape size range invalid");
    require(s.speed_min >= 0 && s.speed_max >= s.speed_min, "speed range invalid");
    require(s.foreground_min > 0 && s.foreground_max <= 1 && s.foreground_max >= s.foreground_min,
            "foreground range must lie in (0, 1]");
    require(s.background_min > 0 && s.background_max <= 1 && s.background_max >= s.background_min,
            "background range must lie in (0, 1]");
    require(s.theta > 0, "dataset.theta must be > 0");
    require(s.duration_us > 0 && s.duration_us <= kNmnistMaxTimestamp, "dataset.duration_us must fit in 23 bits");
    require(s.step_us > 0 && s.step_us <= s.duration_us, "dataset.step_us must be in (0, duration]");
    require(s.noise_rate >= 0, "dataset.noise_rate must be >= 0");
    require(s.inverted_fraction >= 0 && s.inverted_fraction <= 1, "dataset.inverted_fraction must be in [0, 1]");
    require(s.onset_delay_min_us >= 0 && s.onset_delay_min_us <= s.onset_delay_max_us,
            "dataset.onset_delay_min_us must lie in [0, onset_delay_max_us]");
    require(s.onset_us >= 0 && s.onset_delay_max_us + s.onset_us < s.duration_us,
            "dataset.onset_delay_max_us + onset_us must be < duration_us");
    require(c.encoder.stack_events >= 1, "representation.stack_events must be >= 1");
    require(c.encoder.voxel_bins >= 1 && c.encoder.voxel_bins <= 64, "representation.voxel_bins must be 1..64");
    require(c.encoder.est_bins >= 1 && c.encoder.est_bins <= 64, "representation.est_bins must be 1..64");
    require(c.surrogate.frames >= 2 && c.surrogate.frames <= 64, "representation.surrogate_frames must be 2..64");
    require(c.surrogate.recon_bins >= 1 && c.surrogate.recon_bins <= 64, "representation.recon_bins must be 1..64");
    require(c.surrogate.leak >= 0 && c.surrogate.leak <= 1, "representation.leak must be in [0, 1]");
    require(c.surrogate.neutral > 0 && c.surrogate.neutral < 1, "representation.neutral must be in (0, 1)");
    require(c.surrogate.theta > 0, "representation.integration_theta must be > 0");
    require(c.model.source_hidden >= 1 && c.model.target_hidden >= 1 && c.model.recon_hidden >= 1,
            "hidden sizes must be >= 1");
    require(c.model.source_conv_channels <= 64 && c.model.target_conv_channels <= 64,
            "model conv channels must be 0..64");
    const bool any_conv = c.model.source_conv_channels > 0 || c.model.target_conv_channels > 0;
    require(!any_conv || !c.model.conv_pool || (s.width % 2 == 0 && s.height % 2 == 0),
            "model.conv_pool needs even width and height");
    require(c.pretrain.source_batch >= 1 && c.pretrain.recon_batch >= 1, "pretrain batch sizes must be >= 1");
    require(c.pretrain.source_lr >= 0 && c.pretrain.recon_lr >= 0 && c.pretrain.weight_decay >= 0,
            "pretrain optimizer values must be >= 0");
    require(c.adapt.batch >= 1, "adapt.batch must be >= 1");
    require(c.adapt.lr >= 0 && c.adapt.weight_decay >= 0, "adapt optimizer values must be >= 0");
    require(c.adapt.eval_every >= 1 && c.adapt.checkpoint_every >= 1, "adapt intervals must be >= 1");
    const auto& w = c.adapt.weights;
    require(w.en >= 0 && w.tc >= 0 && w.sup >= 0 && w.pc >= 0 && w.cm >= 0, "loss weights must be >= 0");
    const auto& k = c.adapt.lr_scale;
    require(k.source >= 0 && k.reconstructor >= 0 && k.targets >= 0, "lr_scale values must be >= 0");
}

/// Parses a (possibly partial) config; missing keys keep their defaults,
/// unknown keys and out-of-range values are rejected.
inline RunConfig from_json(const Json& given) {
    const Json schema = to_json(RunConfig{});
    detail::check_keys(given, schema, "");
    Json j = schema;
    detail::merge(j, given);

    RunConfig c;
    auto& s = c.dataset.scene;
    c.seed = j["seed"].get<std::uint64_t>();
    const Json& d = j["dataset"];
    c.dataset.classes = d["classes"].get<int>();
    s.width = d["width"].get<int>();
    s.height = d["height"].get<int>();
    c.dataset.source_per_class = d["source_per_class"].get<std::size_t>();
    c.dataset.source_val_per_class = d["source_val_per_class"].get<std::size_t>();
    c.dataset.target_per_class = d["target_per_class"].get<std::size_t>();
    c.dataset.eval_per_class = d["eval_per_class"].get<std::size_t>();
    s.size_min = d["size_min"].get<double>();
    s.size_max = d["size_max"].get<double>();
    s.speed_min = d["speed_min"].get<double>();
    s.speed_max = d["speed_max"].get<double>();
    s.foreground_min = d["foreground_min"].get<double>();
    s.foreground_max = d["foreground_max"].get<double>();
    s.background_min = d["background_min"].get<double>();
    s.background_max = d["background_max"].get<double>();
    s.theta = d["theta"].get<double>();
    s.duration_us = d["duration_us"].get<std::int64_t>();
    s.step_us = d["step_us"].get<std::int64_t>();
    s.noise_rate = d["noise_rate"].get<double>();
    s.onset_delay_min_us = d["onset_delay_min_us"].get<std::int64_t>();
    s.onset_delay_max_us = d["onset_delay_max_us"].get<std::int64_t>();
    s.onset_us = d["onset_us"].get<std::int64_t>();
    s.inverted_fraction = d["inverted_fraction"].get<double>();

    const Json& r = j["representation"];
    c.encoder.stack_events = r["stack_events"].get<std::size_t>();
    c.encoder.voxel_bins = r["voxel_bins"].get<int>();
    c.encoder.est_bins = r["est_bins"].get<int>();
    c.encoder.normalize = r["normalize"].get<bool>();
    const auto meas = r["est_measurement"].get<std::string>();
    if (meas != "timestamp" && meas != "unit") {
        fail(ErrorCategory::Config, "representation.est_measurement must be 'timestamp' or 'unit'");
    }
    c.encoder.est_measurement = meas == "unit" ? EstMeasurement::Unit : EstMeasurement::Timestamp;
    c.surrogate.frames = r["surrogate_frames"].get<std::size_t>();
    c.surrogate.recon_bins = r["recon_bins"].get<int>();
    c.surrogate.leak = r["leak"].get<double>();
    c.surrogate.neutral = r["neutral"].get<double>();
    c.surrogate.theta = r["integration_theta"].get<double>();
    c.surrogate.normalize = c.encoder.normalize;

    const Json& m = j["model"];
    c.model.source_hidden = m["source_hidden"].get<std::size_t>();
    c.model.target_hidden = m["target_hidden"].get<std::size_t>();
    c.model.source_conv_channels = m["source_conv_channels"].get<std::size_t>();
    c.model.target_conv_channels = m["target_conv_channels"].get<std::size_t>();
    c.model.conv_pool = m["conv_pool"].get<bool>();
    c.model.recon_hidden = m["recon_hidden"].get<std::size_t>();

    const Json& p = j["pretrain"];
    c.pretrain.source_steps = p["source_steps"].get<std::size_t>();
    c.pretrain.source_batch = p["source_batch"].get<std::size_t>();
    c.pretrain.source_lr = p["source_lr"].get<double>();
    c.pretrain.augment = p["augment"].get<bool>();
    c.pretrain.recon_steps = p["recon_steps"].get<std::size_t>();
    c.pretrain.recon_batch = p["recon_batch"].get<std::size_t>();
    c.pretrain.recon_lr = p["recon_lr"].get<double>();
    c.pretrain.weight_decay = p["weight_decay"].get<double>();

    const Json& a = j["adapt"];
    c.adapt.steps = a["steps"].get<std::size_t>();
    c.adapt.batch = a["batch"].get<std::size_t>();
    c.adapt.lr = a["lr"].get<double>();
    c.adapt.weight_decay = a["weight_decay"].get<double>();
    c.adapt.eval_every = a["eval_every"].get<std::size_t>();
    c.adapt.checkpoint_every = a["checkpoint_every"].get<std::size_t>();
    const Json& w = a["weights"];
    c.adapt.weights = {w["en"].get<double>(), w["tc"].get<double>(), w["sup"].get<double>(), w["pc"].get<double>(),
                       w["cm"].get<double>()};
    const Json& k = a["lr_scale"];
    c.adapt.lr_scale = {k["source"].get<double>(), k["reconstructor"].get<double>(), k["targets"].get<double>()};
    const Json& f = a["ablation"];
    c.adapt.ablation = {f["en"].get<bool>(), f["tc"].get<bool>(),  f["sup"].get<bool>(),
                        f["pc"].get<bool>(), f["cm"].get<bool>(), f["finetune_fr"].get<bool>()};
    validate(c);
    return c;
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig parse_config(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::Config, std::string("config is not valid JSON: ") + e.what());
    }
    try {
        return from_json(j);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::Config, std::string("config value error: ") + e.what());
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCategory::Path, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Applies a "dotted.key=value" override; value is parsed as JSON, falling
/// back to a plain string.
inline RunConfig apply_override(const RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorCategory::Config, "override must look like key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    Json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
    Json j = to_json(c);
    const Json schema = to_json(RunConfig{});
    detail::check_keys(patch, schema, "");
    detail::merge(j, patch);
    try {
        return from_json(j);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::Config, std::string("config value error: ") + e.what());
    }
}

inline std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
    return buf;
}

}  // namespace evada
