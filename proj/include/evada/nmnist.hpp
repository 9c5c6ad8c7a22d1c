#pragma once

// N-MNIST style binary event files: a flat sequence of 5-byte records.
//   byte 0      x
//   byte 1      y
//   byte 2  b7  polarity (1 -> +1, 0 -> -1)
//   byte 2  b6..0, byte 3, byte 4   23-bit big-endian timestamp (us)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "evada/error.hpp"
#include "evada/events.hpp"

namespace evada {

inline constexpr int kNmnistSensorSize = 34;
inline constexpr std::size_t kNmnistRecordBytes = 5;
inline constexpr std::int64_t kNmnistMaxTimestamp = (std::int64_t{1} << 23) - 1;

/// Decodes records against a sensor of the given geometry (34x34 for N-MNIST).
inline EventStream read_nmnist_bin(std::span<const std::uint8_t> bytes,
                                   int width = kNmnistSensorSize,
                                   int height = kNmnistSensorSize) {
    if (bytes.size() % kNmnistRecordBytes != 0) {
        fail(ErrorCategory::Format, "trailing partial record at byte offset " +
                                        std::to_string(bytes.size() - bytes.size() % kNmnistRecordBytes));
    }
    EventStream stream;
    stream.width = width;
    stream.height = height;
    stream.events.reserve(bytes.size() / kNmnistRecordBytes);
    std::int64_t prev = 0;
    for (std::size_t off = 0; off < bytes.size(); off += kNmnistRecordBytes) {
        const std::uint8_t* r = bytes.data() + off;
        if (r[0] >= width || r[1] >= height) {
            fail(ErrorCategory::Format, "coordinate (" + std::to_string(r[0]) + ", " + std::to_string(r[1]) +
                                            ") outside sensor at byte offset " + std::to_string(off));
        }
        Event e;
        e.x = r[0];
        e.y = r[1];
        e.p = (r[2] & 0x80) ? 1 : -1;
        e.t = (static_cast<std::int64_t>(r[2] & 0x7f) << 16) | (static_cast<std::int64_t>(r[3]) << 8) | r[4];
        if (e.t < prev) {
            fail(ErrorCategory::Format, "timestamp decreases at byte offset " + std::to_string(off));
        }
        prev = e.t;
        stream.events.push_back(e);
    }
    return stream;
}

inline std::vector<std::uint8_t> write_nmnist_bin(const EventStream& stream) {
    if (stream.width > 256 || stream.height > 256) {
        fail(ErrorCategory::Range, "sensor geometry exceeds the 8-bit coordinate range");
    }
    std::vector<std::uint8_t> out;
    out.reserve(stream.events.size() * kNmnistRecordBytes);
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
        const Event& e = stream.events[i];
        if (e.t < 0 || e.t > kNmnistMaxTimestamp) {
            fail(ErrorCategory::Range, "event " + std::to_string(i) + " timestamp " + std::to_string(e.t) +
                                           " does not fit in 23 bits");
        }
        if (e.x > 255 || e.y > 255) {
            fail(ErrorCategory::Range, "event " + std::to_string(i) + " coordinate does not fit in 8 bits");
        }
        out.push_back(static_cast<std::uint8_t>(e.x));
        out.push_back(static_cast<std::uint8_t>(e.y));
        out.push_back(static_cast<std::uint8_t>((e.p > 0 ? 0x80 : 0x00) | ((e.t >> 16) & 0x7f)));
        out.push_back(static_cast<std::uint8_t>((e.t >> 8) & 0xff));
        out.push_back(static_cast<std::uint8_t>(e.t & 0xff));
    }
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::Path, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::Path, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCategory::Path, "short write to " + path.string());
}

inline EventStream load_event_file(const std::filesystem::path& path, int width = kNmnistSensorSize,
                                   int height = kNmnistSensorSize) {
    const auto bytes = read_file_bytes(path);
    try {
        return read_nmnist_bin(bytes, width, height);
    } catch (const Error& e) {
        throw Error(e.category(), path.string() + ": " + e.what());
    }
}

inline void save_event_file(const std::filesystem::path& path, const EventStream& stream) {
    write_file_bytes(path, write_nmnist_bin(stream));
}

}  // namespace evada
