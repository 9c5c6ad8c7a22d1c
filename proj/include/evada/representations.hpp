#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string_view>
#include <tuple>
#include <vector>

#include "evada/error.hpp"
#include "evada/events.hpp"

namespace evada {

enum class RepKind { StackImage, VoxelGrid, EST };

constexpr std::string_view rep_name(RepKind k) noexcept {
    switch (k) {
        case RepKind::StackImage: return "stack";
        case RepKind::VoxelGrid: return "voxel";
        case RepKind::EST: return "est";
    }
    return "?";
}

/// Dense C x H x W tensor, channel-major.
struct RepTensor {
    RepKind kind = RepKind::StackImage;
    int channels = 0;
    int height = 0;
    int width = 0;
    int bins = 1;
    std::vector<double> data;

    RepTensor() = default;
    RepTensor(RepKind k, int c, int h, int w, int b)
        : kind(k), channels(c), height(h), width(w), bins(b),
          data(static_cast<std::size_t>(c) * h * w, 0.0) {}

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int x, int y) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    double at(int c, int x, int y) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const RepTensor&, const RepTensor&) = default;
};

/// Divides by the largest magnitude over the whole tensor; zero tensors stay zero.
inline void normalize_max_abs(std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    if (m > 0.0) {
        for (double& x : v) x /= m;
    }
}

/// Normalized timestamp in [0, bins-1]; 0 for streams without a time span.
inline double normalized_time(std::int64_t t, std::int64_t t0, std::int64_t t1, int bins) {
    if (t1 <= t0) return 0.0;
    return static_cast<double>(bins - 1) * static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
}

/// Bilinear temporal kernel max(0, 1 - |bin - t*|); calls deposit(bin, weight)
/// for the (at most two) bins with non-zero weight.
template <typename Deposit>
void temporal_kernel(double t_star, int bins, Deposit&& deposit) {
    const int lo = static_cast<int>(std::floor(t_star));
    for (int b = std::max(0, lo); b <= std::min(bins - 1, lo + 1); ++b) {
        const double w = std::max(0.0, 1.0 - std::abs(static_cast<double>(b) - t_star));
        if (w > 0.0) deposit(b, w);
    }
}

/// Polarity-signed counts of the most recent n_fixed events in one channel.
inline RepTensor encode_stack(const EventStream& s, std::size_t n_fixed, bool normalize = true) {
    if (n_fixed == 0) fail(ErrorCategory::Config, "stack image needs n_fixed >= 1");
    RepTensor r(RepKind::StackImage, 1, s.height, s.width, 1);
    const std::size_t take = std::min(n_fixed, s.events.size());
    for (std::size_t i = s.events.size() - take; i < s.events.size(); ++i) {
        const Event& e = s.events[i];
        r.at(0, e.x, e.y) += e.p;
    }
    if (normalize) normalize_max_abs(r.data);
    return r;
}

inline RepTensor encode_voxel_grid(const EventStream& s, int bins, bool normalize = true) {
    if (bins < 1) fail(ErrorCategory::Config, "voxel grid needs at least one bin");
    RepTensor r(RepKind::VoxelGrid, bins, s.height, s.width, bins);
    if (s.empty()) return r;
    const std::int64_t t0 = s.t_first();
    const std::int64_t t1 = s.t_last();
    for (const Event& e : s.events) {
        temporal_kernel(normalized_time(e.t, t0, t1, bins), bins,
                        [&](int b, double w) { r.at(b, e.x, e.y) += e.p * w; });
    }
    if (normalize) normalize_max_abs(r.data);
    return r;
}

/// What an EST event deposits into its polarity group.
enum class EstMeasurement {
    Timestamp,  // normalized timestamp in [0, 1]
    Unit,       // constant 1
};

/// Event spike tensor with a fixed bilinear temporal kernel: positive events
/// fill channels [0, bins), negative events [bins, 2*bins).
inline RepTensor encode_est(const EventStream& s, int bins, bool normalize = true,
                            EstMeasurement measurement = EstMeasurement::Timestamp) {
    if (bins < 1) fail(ErrorCategory::Config, "EST needs at least one bin");
    RepTensor r(RepKind::EST, 2 * bins, s.height, s.width, bins);
    if (s.empty()) return r;
    const std::int64_t t0 = s.t_first();
    const std::int64_t t1 = s.t_last();
    for (const Event& e : s.events) {
        double value = 1.0;
        if (measurement == EstMeasurement::Timestamp) {
            value = t1 > t0 ? static_cast<double>(e.t - t0) / static_cast<double>(t1 - t0) : 0.0;
        }
        const int group = e.p > 0 ? 0 : bins;
        temporal_kernel(normalized_time(e.t, t0, t1, bins), bins,
                        [&](int b, double w) { r.at(group + b, e.x, e.y) += value * w; });
    }
    if (normalize) normalize_max_abs(r.data);
    return r;
}

struct EncoderConfig {
    std::size_t stack_events = 1500;
    int voxel_bins = 5;
    int est_bins = 5;
    bool normalize = true;
    EstMeasurement est_measurement = EstMeasurement::Timestamp;
};

struct RepTriple {
    RepTensor stack;
    RepTensor voxel;
    RepTensor est;

    const RepTensor& operator[](std::size_t i) const { return i == 0 ? stack : (i == 1 ? voxel : est); }
};

inline constexpr std::size_t kNumTargets = 3;
inline constexpr RepKind kTargetKinds[kNumTargets] = {RepKind::StackImage, RepKind::VoxelGrid, RepKind::EST};

/// The three target-model inputs in the fixed index order stack, voxel, EST.
inline RepTriple encode_all(const EventStream& s, const EncoderConfig& cfg) {
    return {encode_stack(s, cfg.stack_events, cfg.normalize), encode_voxel_grid(s, cfg.voxel_bins, cfg.normalize),
            encode_est(s, cfg.est_bins, cfg.normalize, cfg.est_measurement)};
}

inline std::size_t rep_channels(RepKind k, const EncoderConfig& cfg) {
    switch (k) {
        case RepKind::StackImage: return 1;
        case RepKind::VoxelGrid: return static_cast<std::size_t>(cfg.voxel_bins);
        case RepKind::EST: return 2 * static_cast<std::size_t>(cfg.est_bins);
    }
    return 0;
}

}  // namespace evada
