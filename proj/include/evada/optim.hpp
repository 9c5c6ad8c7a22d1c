#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evada/autodiff.hpp"
#include "evada/error.hpp"
#include "evada/nn.hpp"

namespace evada {

struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * (wd * p + m_hat / (sqrt(v_hat) + eps))
class AdamW {
public:
    AdamW() = default;
    AdamW(std::span<Parameter* const> params, AdamWConfig cfg) : cfg_(cfg) {
        for (const Parameter* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    const AdamWConfig& config() const noexcept { return cfg_; }
    std::uint64_t steps() const noexcept { return step_; }

    /// Throws a structural error unless the moment buffers fit params.
    void check_shapes(std::span<Parameter* const> params) const {
        if (params.size() != m_.size()) fail(ErrorCategory::Structural, "optimizer state does not match parameters");
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (params[k]->size() != m_[k].size()) {
                fail(ErrorCategory::Structural, "optimizer state shape mismatch for '" + params[k]->name + "'");
            }
        }
    }

    /// Applies one update using each parameter's grad slot.
    void step(std::span<Parameter* const> params, double lr) {
        check_shapes(params);
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Parameter& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= lr * (cfg_.weight_decay * p.value[i] + mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    // State file: "EVADAOPT", u32 version, u64 step, u32 tensor count,
    // then per tensor u64 length, f64 m[length], f64 v[length]; little-endian.
    std::vector<std::uint8_t> serialize() const {
        static constexpr char magic[8] = {'E', 'V', 'A', 'D', 'A', 'O', 'P', 'T'};
        std::vector<std::uint8_t> b(std::begin(magic), std::end(magic));
        io::put_u32(b, 1);
        io::put_u64(b, step_);
        io::put_u32(b, static_cast<std::uint32_t>(m_.size()));
        for (std::size_t k = 0; k < m_.size(); ++k) {
            io::put_u64(b, m_[k].size());
            for (double x : m_[k]) io::put_f64(b, x);
            for (double x : v_[k]) io::put_f64(b, x);
        }
        return b;
    }

    static AdamW deserialize(std::span<const std::uint8_t> bytes, AdamWConfig cfg) {
        static constexpr char magic[8] = {'E', 'V', 'A', 'D', 'A', 'O', 'P', 'T'};
        io::Reader r(bytes, "optimizer state");
        r.magic(magic);
        if (r.u32() != 1) fail(ErrorCategory::Format, "optimizer state: unsupported version");
        AdamW opt;
        opt.cfg_ = cfg;
        opt.step_ = r.u64();
        const std::uint32_t n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) {
            const std::uint64_t len = r.u64();
            r.need(len * 16);
            std::vector<double> m(len), v(len);
            for (double& x : m) x = r.f64();
            for (double& x : v) x = r.f64();
            opt.m_.push_back(std::move(m));
            opt.v_.push_back(std::move(v));
        }
        if (!r.done()) fail(ErrorCategory::Format, "optimizer state: trailing bytes");
        return opt;
    }

private:
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t step_ = 0;
};

/// Linear decay from base to zero over total steps.
inline double linear_decay_lr(double base, std::uint64_t step, std::uint64_t total) {
    if (total == 0 || step >= total) return 0.0;
    return base * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

inline void check_finite_grads(std::span<Parameter* const> params) {
    for (const Parameter* p : params) {
        if (!all_finite(p->grad)) fail(ErrorCategory::Numeric, "non-finite gradient in layer '" + p->name + "'");
    }
}

}  // namespace evada
