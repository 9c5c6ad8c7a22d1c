#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

#include "evada/error.hpp"
#include "evada/events.hpp"
#include "evada/rng.hpp"

namespace evada {

enum class ShapeKind { Bar, Disc, Cross, Ring, Square, Triangle };

inline constexpr std::array<ShapeKind, 6> kShapeClasses = {
    ShapeKind::Bar, ShapeKind::Disc, ShapeKind::Cross, ShapeKind::Ring, ShapeKind::Square, ShapeKind::Triangle};

constexpr std::string_view shape_name(ShapeKind k) noexcept {
    switch (k) {
        case ShapeKind::Bar: return "bar";
        case ShapeKind::Disc: return "disc";
        case ShapeKind::Cross: return "cross";
        case ShapeKind::Ring: return "ring";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    return "?";
}

/// A single moving shape seen by an ideal event camera.
struct SceneSpec {
    int class_index = 0;
    ShapeKind shape = ShapeKind::Disc;
    int width = 16;
    int height = 16;
    double size = 4.0;         // characteristic radius in pixels
    double angle = 0.0;        // orientation in radians
    double x0 = 8.0, y0 = 8.0; // shape center at t = 0, pixel units (pixel centers are integers)
    double vx = 0.0, vy = 0.0; // pixels per millisecond
    double foreground = 0.9;   // linear intensity inside the shape
    double background = 0.2;   // linear intensity outside
    double theta = 0.15;       // contrast threshold, log-intensity units
    std::int64_t duration_us = 100'000;
    std::int64_t step_us = 1'000;  // render micro-step
    double noise_rate = 0.0;       // background events per pixel per second
    std::int64_t onset_delay_us = 0;  // shape is invisible before this instant
    std::int64_t onset_us = 0;        // then its contrast ramps in linearly over this span
};

struct SceneRender {
    EventStream stream;
    std::vector<IntensityFrame> frames;  // one per micro-step, including t = 0
};

namespace detail {

inline bool inside_shape(ShapeKind kind, double size, double qx, double qy) {
    const double r = size;
    switch (kind) {
        case ShapeKind::Disc: return qx * qx + qy * qy <= r * r;
        case ShapeKind::Ring: {
            const double d2 = qx * qx + qy * qy;
            return d2 <= r * r && d2 >= 0.3 * r * r;
        }
        case ShapeKind::Bar: return std::abs(qx) <= r && std::abs(qy) <= 0.3 * r;
        case ShapeKind::Cross:
            return (std::abs(qx) <= r && std::abs(qy) <= 0.25 * r) ||
                   (std::abs(qy) <= r && std::abs(qx) <= 0.25 * r);
        case ShapeKind::Square: return std::abs(qx) <= r && std::abs(qy) <= r;
        case ShapeKind::Triangle: {
            // Equilateral, circumradius r, one vertex pointing along -y.
            const double h = 0.5 * r;
            if (qy > h) return false;
            const double slope = std::sqrt(3.0);
            return qy >= -r + slope * std::abs(qx);
        }
    }
    return false;
}

inline constexpr int kSuperSample = 4;

/// Fractional coverage of every pixel by the shape centered at (cx, cy).
inline std::vector<double> coverage(const SceneSpec& s, double cx, double cy) {
    std::vector<double> cov(static_cast<std::size_t>(s.width) * s.height, 0.0);
    const double ca = std::cos(s.angle);
    const double sa = std::sin(s.angle);
    const double reach = 1.5 * s.size + 1.0;
    const int xlo = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int xhi = std::min(s.width - 1, static_cast<int>(std::ceil(cx + reach)));
    const int ylo = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int yhi = std::min(s.height - 1, static_cast<int>(std::ceil(cy + reach)));
    constexpr double inv = 1.0 / (kSuperSample * kSuperSample);
    for (int py = ylo; py <= yhi; ++py) {
        for (int px = xlo; px <= xhi; ++px) {
            int hits = 0;
            for (int sy = 0; sy < kSuperSample; ++sy) {
                for (int sx = 0; sx < kSuperSample; ++sx) {
                    const double dx = px + (sx + 0.5) / kSuperSample - 0.5 - cx;
                    const double dy = py + (sy + 0.5) / kSuperSample - 0.5 - cy;
                    const double qx = ca * dx + sa * dy;
                    const double qy = -sa * dx + ca * dy;
                    hits += inside_shape(s.shape, s.size, qx, qy) ? 1 : 0;
                }
            }
            cov[static_cast<std::size_t>(py) * s.width + px] = hits * inv;
        }
    }
    return cov;
}

inline void check_spec(const SceneSpec& s) {
    if (s.width <= 0 || s.height <= 0 || s.width > 256 || s.height > 256) {
        fail(ErrorCategory::Config, "scene geometry must be within 1..256");
    }
    if (!(s.theta > 0.0)) fail(ErrorCategory::Config, "contrast threshold must be > 0");
    if (s.duration_us <= 0) fail(ErrorCategory::Config, "scene duration must be > 0");
    if (s.step_us <= 0) fail(ErrorCategory::Config, "render step must be > 0");
    if (!(s.noise_rate >= 0.0)) fail(ErrorCategory::Config, "noise rate must be >= 0");
    if (s.onset_us < 0 || s.onset_delay_us < 0) fail(ErrorCategory::Config, "onset times must be >= 0");
    if (!(s.size > 0.0)) fail(ErrorCategory::Range, "shape has zero area");
    if (!(s.foreground > 0.0 && s.foreground <= 1.0 && s.background > 0.0 && s.background <= 1.0)) {
        fail(ErrorCategory::Config, "scene intensities must lie in (0, 1]");
    }
}

}  // namespace detail

/// Renders the scene at every micro-step and runs an ideal event camera over
/// the log-intensity video: a pixel fires one event whenever its log intensity
/// differs from the level latched at its previous event by at least theta,
/// and the latch moves to the current level. Poisson background noise is
/// added on top. The seed only drives the noise process.
inline SceneRender generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    detail::check_spec(spec);
    const std::size_t npix = static_cast<std::size_t>(spec.width) * spec.height;
    const std::int64_t steps = spec.duration_us / spec.step_us;

    SceneRender out;
    out.stream.width = spec.width;
    out.stream.height = spec.height;
    out.stream.label = spec.class_index;

    std::vector<double> latched(npix);
    bool ever_visible = false;
    for (std::int64_t n = 0; n <= steps; ++n) {
        const std::int64_t t = n * spec.step_us;
        const double t_ms = static_cast<double>(t) / 1000.0;
        const auto cov = detail::coverage(spec, spec.x0 + spec.vx * t_ms, spec.y0 + spec.vy * t_ms);
        const double ramp = t < spec.onset_delay_us ? 0.0
                            : spec.onset_us > 0
                                ? std::min(1.0, static_cast<double>(t - spec.onset_delay_us) / spec.onset_us)
                                : 1.0;
        IntensityFrame frame(spec.width, spec.height, 0.0, t);
        for (std::size_t i = 0; i < npix; ++i) {
            frame.pixels[i] = spec.background + (spec.foreground - spec.background) * ramp * cov[i];
            ever_visible = ever_visible || cov[i] > 0.0;
            const double level = std::log(frame.pixels[i]);
            if (n == 0) {
                latched[i] = level;
                continue;
            }
            const double delta = level - latched[i];
            if (std::abs(delta) >= spec.theta) {
                Event e;
                e.x = static_cast<std::uint16_t>(i % spec.width);
                e.y = static_cast<std::uint16_t>(i / spec.width);
                e.t = t;
                e.p = delta > 0 ? 1 : -1;
                out.stream.events.push_back(e);
                latched[i] = level;
            }
        }
        out.frames.push_back(std::move(frame));
    }
    if (!ever_visible) {
        fail(ErrorCategory::Range, "shape never intersects the sensor during the scene");
    }

    if (spec.noise_rate > 0.0) {
        Rng rng(derive_seed(seed, "noise"));
        const double rate_per_us = spec.noise_rate * 1e-6;
        std::vector<Event> noise;
        for (std::size_t i = 0; i < npix; ++i) {
            double t = rng.exponential(rate_per_us);
            while (t <= static_cast<double>(spec.duration_us)) {
                Event e;
                e.x = static_cast<std::uint16_t>(i % spec.width);
                e.y = static_cast<std::uint16_t>(i / spec.width);
                e.t = static_cast<std::int64_t>(t);
                e.p = rng.coin() ? 1 : -1;
                noise.push_back(e);
                t += rng.exponential(rate_per_us);
            }
        }
        std::stable_sort(noise.begin(), noise.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
        std::vector<Event> merged;
        merged.reserve(out.stream.events.size() + noise.size());
        std::merge(out.stream.events.begin(), out.stream.events.end(), noise.begin(), noise.end(),
                   std::back_inserter(merged), [](const Event& a, const Event& b) { return a.t < b.t; });
        out.stream.events = std::move(merged);
    }
    return out;
}

/// Ranges used when drawing random scenes for the synthetic benchmark.
struct SceneRanges {
    int width = 16;
    int height = 16;
    double size_min = 3.5, size_max = 5.0;
    double speed_min = 0.04, speed_max = 0.08;  // px/ms
    double foreground_min = 0.6, foreground_max = 0.95;
    double background_min = 0.1, background_max = 0.35;
    double theta = 0.15;
    std::int64_t duration_us = 100'000;
    std::int64_t step_us = 1'000;
    double noise_rate = 0.5;
    std::int64_t onset_delay_min_us = 0, onset_delay_max_us = 0;
    std::int64_t onset_us = 10'000;
    double inverted_fraction = 0.0;  // chance of a dark shape on a bright background
};

/// Draws a random scene of the given class. The shape starts inside the sensor
/// and drifts in a random direction.
inline SceneSpec random_scene(int class_index, const SceneRanges& r, Rng& rng) {
    if (class_index < 0 || class_index >= static_cast<int>(kShapeClasses.size())) {
        fail(ErrorCategory::Config, "class index outside the synthetic shape set");
    }
    SceneSpec s;
    s.class_index = class_index;
    s.shape = kShapeClasses[static_cast<std::size_t>(class_index)];
    s.width = r.width;
    s.height = r.height;
    s.size = rng.uniform(r.size_min, r.size_max);
    s.angle = rng.uniform(0.0, std::numbers::pi);
    const double speed = rng.uniform(r.speed_min, r.speed_max);
    const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.vx = speed * std::cos(heading);
    s.vy = speed * std::sin(heading);
    // Keep the midpoint of the path near the sensor center.
    const double travel_ms = static_cast<double>(r.duration_us) / 1000.0;
    const double jitter = 0.15 * std::min(r.width, r.height);
    const double mx = 0.5 * (r.width - 1) + rng.uniform(-jitter, jitter);
    const double my = 0.5 * (r.height - 1) + rng.uniform(-jitter, jitter);
    s.x0 = mx - 0.5 * s.vx * travel_ms;
    s.y0 = my - 0.5 * s.vy * travel_ms;
    s.foreground = rng.uniform(r.foreground_min, r.foreground_max);
    s.background = rng.uniform(r.background_min, r.background_max);
    if (rng.uniform() < r.inverted_fraction) std::swap(s.foreground, s.background);
    s.theta = r.theta;
    s.duration_us = r.duration_us;
    s.step_us = r.step_us;
    s.noise_rate = r.noise_rate;
    s.onset_delay_us = r.onset_delay_min_us +
                       static_cast<std::int64_t>(rng.index(
                           static_cast<std::uint64_t>(r.onset_delay_max_us - r.onset_delay_min_us + 1)));
    s.onset_us = r.onset_us;
    return s;
}

}  // namespace evada
