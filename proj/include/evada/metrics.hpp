#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evada/adaptation.hpp"
#include "evada/error.hpp"

namespace evada {

/// Metrics log. Every row uses the same columns; fields that do not apply to
/// a row are left empty.
///   phase           source | reconstructor | adapt | eval
///   step            optimizer step (eval: number of steps completed)
///   l_en .. l_all   losses of an adapt step; l_all alone for pretraining
///   lr              learning rate used by the step
///   split           eval rows: dataset split
///   representation  eval rows: stack | voxel | est | ensemble | source_integrated | source_surrogate | reconstructor
///   value           eval rows: accuracy (or MSE for the reconstructor)
inline constexpr const char* kMetricsHeader =
    "phase,step,l_en,l_tc,l_sup,l_pc,l_cm,l_all,lr,split,representation,value";

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class MetricsLog {
public:
    MetricsLog() = default;

    /// Opens path for writing. With keep_steps set, existing rows are kept up
    /// to that many completed adapt steps (resume); otherwise the file is
    /// recreated.
    explicit MetricsLog(const std::filesystem::path& path, std::optional<std::uint64_t> keep_steps = std::nullopt)
        : path_(path) {
        std::vector<std::string> kept;
        if (keep_steps && std::filesystem::exists(path)) {
            std::ifstream in(path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                const auto c1 = line.find(',');
                const auto c2 = line.find(',', c1 + 1);
                if (c1 == std::string::npos || c2 == std::string::npos) continue;
                const std::string phase = line.substr(0, c1);
                const std::uint64_t step = std::stoull(line.substr(c1 + 1, c2 - c1 - 1));
                if ((phase == "adapt" && step < *keep_steps) || (phase == "eval" && step <= *keep_steps)) {
                    kept.push_back(line);
                }
            }
        }
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) fail(ErrorCategory::Path, "cannot write metrics to " + path.string());
        out_ << kMetricsHeader << "\n";
        for (const auto& l : kept) out_ << l << "\n";
        rows_ = kept.size();
        out_.flush();
    }

    void pretrain_step(const char* phase, std::size_t step, double loss, double lr) {
        row(std::string(phase) + "," + std::to_string(step) + ",,,,,," + format_double(loss) + "," +
            format_double(lr) + ",,,");
    }

    void adapt_step(std::uint64_t step, const LossBreakdown& l, double lr) {
        row("adapt," + std::to_string(step) + "," + format_double(l.en) + "," + format_double(l.tc) + "," +
            format_double(l.sup) + "," + format_double(l.pc) + "," + format_double(l.cm) + "," +
            format_double(l.all) + "," + format_double(lr) + ",,,");
    }

    void eval(std::uint64_t step, const std::string& split, const std::string& rep, double value) {
        row("eval," + std::to_string(step) + ",,,,,,,," + split + "," + rep + "," + format_double(value));
    }

    std::size_t rows() const noexcept { return rows_; }

private:
    void row(const std::string& text) {
        out_ << text << "\n";
        out_.flush();
        ++rows_;
    }

    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t rows_ = 0;
};

}  // namespace evada
