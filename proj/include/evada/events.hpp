#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evada/error.hpp"

namespace evada {

/// One pixel change. Timestamps are integer microseconds throughout.
struct Event {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int64_t t = 0;
    std::int8_t p = 1;  // +1 brighter, -1 darker

    friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
    std::vector<Event> events;
    int width = 0;
    int height = 0;
    std::optional<int> label;

    bool empty() const noexcept { return events.empty(); }
    std::size_t size() const noexcept { return events.size(); }
    std::int64_t t_first() const { return events.front().t; }
    std::int64_t t_last() const { return events.back().t; }

    friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Checks the stream invariants: geometry, polarity domain and time order.
inline void validate(const EventStream& s) {
    if (s.width <= 0 || s.height <= 0) {
        fail(ErrorCategory::Structural, "event stream has empty sensor geometry");
    }
    std::int64_t prev = 0;
    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const Event& e = s.events[i];
        if (e.x >= s.width || e.y >= s.height) {
            fail(ErrorCategory::Range, "event " + std::to_string(i) + " lies outside the " +
                                           std::to_string(s.width) + "x" + std::to_string(s.height) +
                                           " sensor");
        }
        if (e.p != 1 && e.p != -1) {
            fail(ErrorCategory::Range, "event " + std::to_string(i) + " has polarity outside {+1,-1}");
        }
        if (e.t < 0 || (i > 0 && e.t < prev)) {
            fail(ErrorCategory::Range, "event " + std::to_string(i) + " breaks timestamp order");
        }
        prev = e.t;
    }
}

/// Grayscale frame with values in [0, 1], row-major height x width.
struct IntensityFrame {
    int width = 0;
    int height = 0;
    std::int64_t timestamp = 0;
    std::vector<double> pixels;

    IntensityFrame() = default;
    IntensityFrame(int w, int h, double fill = 0.0, std::int64_t ts = 0)
        : width(w), height(h), timestamp(ts), pixels(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    bool valid() const {
        if (pixels.size() != static_cast<std::size_t>(width) * height) return false;
        for (double v : pixels) {
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
        }
        return true;
    }

    friend bool operator==(const IntensityFrame&, const IntensityFrame&) = default;
};

/// Segment index for timestamp t when [t0, t1] is split into k equal windows.
/// Windows are half-open except the last, which also owns t1.
inline std::size_t segment_index(std::int64_t t, std::int64_t t0, std::int64_t t1, std::size_t k) {
    const std::int64_t span = t1 - t0;
    if (span <= 0) return 0;
    const auto scaled = static_cast<__int128>(t - t0) * static_cast<__int128>(k) / span;
    const auto idx = static_cast<std::size_t>(scaled);
    return idx >= k ? k - 1 : idx;
}

/// Splits a stream into k consecutive, non-overlapping, equal-duration windows
/// covering [t_first, t_last]. Streams with a single timestamp put every event
/// in segment 0.
inline std::vector<EventStream> slice_stream(const EventStream& stream, std::size_t k) {
    if (k == 0) fail(ErrorCategory::Config, "slice_stream needs k >= 1");
    if (stream.empty()) fail(ErrorCategory::EmptyInput, "cannot slice an empty event stream");
    std::vector<EventStream> segments(k);
    for (auto& seg : segments) {
        seg.width = stream.width;
        seg.height = stream.height;
        seg.label = stream.label;
    }
    const std::int64_t t0 = stream.t_first();
    const std::int64_t t1 = stream.t_last();
    for (const Event& e : stream.events) {
        segments[segment_index(e.t, t0, t1, k)].events.push_back(e);
    }
    return segments;
}

struct StreamStats {
    std::size_t count = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    std::int64_t t_first = 0;
    std::int64_t t_last = 0;

    std::int64_t duration() const noexcept { return count == 0 ? 0 : t_last - t_first; }
    double positive_ratio() const noexcept {
        return count == 0 ? 0.0 : static_cast<double>(positive) / static_cast<double>(count);
    }
};

inline StreamStats stream_stats(const EventStream& s) {
    StreamStats st;
    st.count = s.events.size();
    for (const Event& e : s.events) {
        (e.p > 0 ? st.positive : st.negative) += 1;
    }
    if (!s.empty()) {
        st.t_first = s.t_first();
        st.t_last = s.t_last();
    }
    return st;
}

}  // namespace evada
