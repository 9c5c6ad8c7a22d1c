#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evada/autodiff.hpp"
#include "evada/error.hpp"
#include "evada/nmnist.hpp"
#include "evada/rng.hpp"

namespace evada {

enum class Activation : std::uint32_t { Identity = 0, Relu = 1, Sigmoid = 2 };
enum class LayerKind : std::uint32_t { Affine = 0, Conv3x3 = 1 };

struct Layer {
    LayerKind kind = LayerKind::Affine;
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::Identity;
    ConvShape conv;     // Conv3x3 only
    bool pool = false;  // Conv3x3 only: 2x2 average pooling after the activation
    Parameter weight;   // affine: out x in, row-major; conv: C_out x C_in x 3 x 3
    Parameter bias;     // affine: out; conv: C_out
};

/// Optional convolutional front layer of a classifier: 3x3 convolution with
/// C_out channels, ReLU, then optional 2x2 average pooling.
struct ConvFront {
    ConvShape shape;
    bool pool = true;
};

/// Whether a forward pass lets gradients reach the model's own parameters.
enum class ParamMode { Trainable, Frozen };

/// Feed-forward stack: an optional 3x3 convolution front layer, then affine
/// layers. Hidden layers use ReLU; the last layer's activation is Identity for
/// classifiers and Sigmoid for the reconstruction network.
class Mlp {
public:
    Mlp() = default;

    /// sizes = {input, hidden..., output}. With a front layer, sizes[0] must
    /// equal the front's input size.
    Mlp(std::string name, std::span<const std::size_t> sizes, Activation output, std::uint64_t seed,
        const std::optional<ConvFront>& front = std::nullopt)
        : name_(std::move(name)) {
        if (sizes.size() < 2) fail(ErrorCategory::Config, "an MLP needs at least input and output sizes");
        Rng rng(seed);
        std::size_t in = sizes[0];
        if (front) {
            const ConvShape& c = front->shape;
            if (c.input_size() != sizes[0] || c.channels_out == 0) {
                fail(ErrorCategory::Config, "convolution front does not match the input size");
            }
            if (front->pool && (c.height % 2 != 0 || c.width % 2 != 0)) {
                fail(ErrorCategory::Config, "pooling needs even height and width");
            }
            Layer l;
            l.kind = LayerKind::Conv3x3;
            l.conv = c;
            l.pool = front->pool;
            l.in = c.input_size();
            l.out = front->pool ? c.output_size() / 4 : c.output_size();
            l.activation = Activation::Relu;
            l.weight = Parameter("", c.weight_size());
            l.bias = Parameter("", c.channels_out);
            const double bound = std::sqrt(6.0 / static_cast<double>(c.channels_in * 9));
            for (double& w : l.weight.value) w = rng.uniform(-bound, bound);
            in = l.out;
            layers_.push_back(std::move(l));
        }
        for (std::size_t k = 1; k < sizes.size(); ++k) {
            Layer d;
            d.in = in;
            d.out = sizes[k];
            if (d.in == 0 || d.out == 0) fail(ErrorCategory::Config, "layer sizes must be positive");
            d.activation = (k + 1 == sizes.size()) ? output : Activation::Relu;
            d.weight = Parameter("", d.in * d.out);
            d.bias = Parameter("", d.out);
            const double bound = std::sqrt(6.0 / static_cast<double>(d.in));  // He uniform
            for (double& w : d.weight.value) w = rng.uniform(-bound, bound);
            in = d.out;
            layers_.push_back(std::move(d));
        }
        rename();
    }

    const std::string& name() const noexcept { return name_; }
    std::size_t input_size() const noexcept { return layers_.empty() ? 0 : layers_.front().in; }
    std::size_t output_size() const noexcept { return layers_.empty() ? 0 : layers_.back().out; }
    std::span<Layer> layers() noexcept { return layers_; }
    std::span<const Layer> layers() const noexcept { return layers_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        for (auto& d : layers_) {
            ps.push_back(&d.weight);
            ps.push_back(&d.bias);
        }
        return ps;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& d : layers_) n += d.weight.size() + d.bias.size();
        return n;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    DiffValue forward(DiffValue x, ParamMode mode = ParamMode::Trainable) {
        check_input(x.size());
        const bool trainable = mode == ParamMode::Trainable;
        for (auto& d : layers_) {
            x = d.kind == LayerKind::Conv3x3 ? ad::conv3x3(d.weight, d.bias, x, d.conv, trainable)
                                             : ad::affine(d.weight, d.bias, x, trainable);
            if (d.activation == Activation::Relu) x = ad::relu(x);
            if (d.activation == Activation::Sigmoid) x = ad::sigmoid(x);
            if (d.pool) x = ad::avg_pool2(x, d.conv.channels_out, d.conv.height, d.conv.width);
        }
        return x;
    }

    /// Tape-free inference; agrees bit-for-bit with forward().
    std::vector<double> predict(std::span<const double> input) const {
        check_input(input.size());
        std::vector<double> x(input.begin(), input.end());
        for (const auto& d : layers_) {
            std::vector<double> y;
            if (d.kind == LayerKind::Conv3x3) {
                y = conv3x3_values(d.weight.value, d.bias.value, x, d.conv);
            } else {
                y = d.bias.value;
                for (std::size_t o = 0; o < d.out; ++o) {
                    const double* row = d.weight.value.data() + o * d.in;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d.in; ++i) acc += row[i] * x[i];
                    y[o] += acc;
                }
            }
            if (d.activation == Activation::Relu) {
                for (double& v : y) v = v > 0.0 ? v : 0.0;
            } else if (d.activation == Activation::Sigmoid) {
                for (double& v : y) v = 1.0 / (1.0 + std::exp(-v));
            }
            if (d.pool) y = avg_pool2_values(y, d.conv.channels_out, d.conv.height, d.conv.width);
            x = std::move(y);
        }
        return x;
    }

    friend bool operator==(const Mlp& a, const Mlp& b) {
        if (a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t l = 0; l < a.layers_.size(); ++l) {
            const auto& x = a.layers_[l];
            const auto& y = b.layers_[l];
            if (x.kind != y.kind || x.in != y.in || x.out != y.out || x.activation != y.activation ||
                x.pool != y.pool || x.conv.channels_in != y.conv.channels_in || x.conv.height != y.conv.height ||
                x.conv.width != y.conv.width || x.conv.channels_out != y.conv.channels_out) {
                return false;
            }
            if (std::memcmp(x.weight.value.data(), y.weight.value.data(), x.weight.size() * sizeof(double)) != 0 ||
                std::memcmp(x.bias.value.data(), y.bias.value.data(), x.bias.size() * sizeof(double)) != 0) {
                return false;
            }
        }
        return true;
    }

    static Mlp from_layers(std::string name, std::vector<Layer> layers) {
        Mlp m;
        m.name_ = std::move(name);
        m.layers_ = std::move(layers);
        m.rename();
        return m;
    }

private:
    // Parameter names: <model>.<conv|fc><index>.<weight|bias>
    void rename() {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const std::string prefix =
                name_ + (layers_[l].kind == LayerKind::Conv3x3 ? ".conv" : ".fc") + std::to_string(l);
            layers_[l].weight.name = prefix + ".weight";
            layers_[l].bias.name = prefix + ".bias";
        }
    }

    void check_input(std::size_t n) const {
        if (n != input_size()) {
            fail(ErrorCategory::Structural, "model '" + name_ + "' expects input of size " +
                                                std::to_string(input_size()) + ", got " + std::to_string(n));
        }
    }

    std::string name_;
    std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoint layout (all integers and floats little-endian):
//   8 bytes  magic "EVADACKP"
//   u32      version (1)
//   u32      layer count L
//   L x { u32 kind, u32 out, u32 in, u32 activation,
//         u32 channels_in, u32 height, u32 width, u32 channels_out, u32 pool }
//   L x { f64 weight[...], f64 bias[...] }
// The convolution fields are zero for affine layers.

namespace io {

inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'A', 'D', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            fail(ErrorCategory::Format, what_ + ": truncated at byte offset " + std::to_string(pos_));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    void magic(const char (&m)[8]) {
        need(8);
        if (std::memcmp(bytes_.data() + pos_, m, 8) != 0) fail(ErrorCategory::Format, what_ + ": bad magic");
        pos_ += 8;
    }
    std::size_t position() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }
    const std::string& what() const noexcept { return what_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace io

inline std::vector<std::uint8_t> serialize_model(const Mlp& m) {
    std::vector<std::uint8_t> b(std::begin(io::kCheckpointMagic), std::end(io::kCheckpointMagic));
    io::put_u32(b, io::kCheckpointVersion);
    io::put_u32(b, static_cast<std::uint32_t>(m.layers().size()));
    for (const auto& d : m.layers()) {
        io::put_u32(b, static_cast<std::uint32_t>(d.kind));
        io::put_u32(b, static_cast<std::uint32_t>(d.out));
        io::put_u32(b, static_cast<std::uint32_t>(d.in));
        io::put_u32(b, static_cast<std::uint32_t>(d.activation));
        io::put_u32(b, static_cast<std::uint32_t>(d.conv.channels_in));
        io::put_u32(b, static_cast<std::uint32_t>(d.conv.height));
        io::put_u32(b, static_cast<std::uint32_t>(d.conv.width));
        io::put_u32(b, static_cast<std::uint32_t>(d.conv.channels_out));
        io::put_u32(b, d.pool ? 1 : 0);
    }
    for (const auto& d : m.layers()) {
        for (double w : d.weight.value) io::put_f64(b, w);
        for (double v : d.bias.value) io::put_f64(b, v);
    }
    return b;
}

inline Mlp deserialize_model(std::span<const std::uint8_t> bytes, std::string name) {
    io::Reader r(bytes, "checkpoint");
    r.magic(io::kCheckpointMagic);
    if (const auto v = r.u32(); v != io::kCheckpointVersion) {
        fail(ErrorCategory::Format, "checkpoint: unsupported version " + std::to_string(v));
    }
    const std::uint32_t count = r.u32();
    if (count == 0 || count > 64) fail(ErrorCategory::Format, "checkpoint: implausible layer count");
    std::vector<Layer> layers(count);
    for (auto& d : layers) {
        const std::uint32_t kind = r.u32();
        if (kind > 1) fail(ErrorCategory::Format, "checkpoint: unknown layer kind");
        d.kind = static_cast<LayerKind>(kind);
        d.out = r.u32();
        d.in = r.u32();
        const std::uint32_t act = r.u32();
        if (act > 2) fail(ErrorCategory::Format, "checkpoint: unknown activation code");
        d.activation = static_cast<Activation>(act);
        d.conv.channels_in = r.u32();
        d.conv.height = r.u32();
        d.conv.width = r.u32();
        d.conv.channels_out = r.u32();
        const std::uint32_t pool = r.u32();
        if (pool > 1) fail(ErrorCategory::Format, "checkpoint: bad pool flag");
        d.pool = pool == 1;
        if (d.in == 0 || d.out == 0) fail(ErrorCategory::Format, "checkpoint: empty layer");
        if (d.kind == LayerKind::Conv3x3) {
            const bool even = d.conv.height % 2 == 0 && d.conv.width % 2 == 0;
            if (d.conv.input_size() != d.in || d.conv.channels_out == 0 || (d.pool && !even) ||
                d.out != (d.pool ? d.conv.output_size() / 4 : d.conv.output_size())) {
                fail(ErrorCategory::Format, "checkpoint: inconsistent convolution header");
            }
        } else if (d.pool || d.conv.channels_in || d.conv.height || d.conv.width || d.conv.channels_out) {
            fail(ErrorCategory::Format, "checkpoint: convolution fields set on an affine layer");
        }
    }
    for (std::size_t l = 1; l < layers.size(); ++l) {
        if (layers[l].in != layers[l - 1].out) fail(ErrorCategory::Format, "checkpoint: layer shapes do not chain");
    }
    for (auto& d : layers) {
        const bool conv = d.kind == LayerKind::Conv3x3;
        const std::size_t nw = conv ? d.conv.weight_size() : d.in * d.out;
        const std::size_t nb = conv ? d.conv.channels_out : d.out;
        r.need((nw + nb) * 8);
        d.weight = Parameter("", nw);
        d.bias = Parameter("", nb);
        for (double& w : d.weight.value) w = r.f64();
        for (double& v : d.bias.value) v = r.f64();
    }
    if (!r.done()) fail(ErrorCategory::Format, "checkpoint: trailing bytes at offset " + std::to_string(r.position()));
    return Mlp::from_layers(std::move(name), std::move(layers));
}

inline void save_model(const std::filesystem::path& path, const Mlp& m) { write_file_bytes(path, serialize_model(m)); }

inline Mlp load_model(const std::filesystem::path& path, std::string name) {
    const auto bytes = read_file_bytes(path);
    try {
        return deserialize_model(bytes, std::move(name));
    } catch (const Error& e) {
        throw Error(e.category(), path.string() + ": " + e.what());
    }
}

}  // namespace evada
