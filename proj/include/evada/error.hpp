#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evada {

/// Machine-parsable failure classes. The CLI prints `error: <category>: ...`.
enum class ErrorCategory {
    Format,      // malformed bytes in an input file
    Range,       // value outside an encodable or valid range
    EmptyInput,  // operation needs at least one element
    Structural,  // shape or layout mismatch
    Numeric,     // NaN / Inf in values or gradients
    Config,      // invalid configuration
    Path,        // missing or unreadable file or directory
    Refusal,     // refused to overwrite existing output
    State,       // API contract violation such as a consumed tape
};

constexpr std::string_view category_name(ErrorCategory c) noexcept {
    switch (c) {
        case ErrorCategory::Format: return "format";
        case ErrorCategory::Range: return "range";
        case ErrorCategory::EmptyInput: return "empty-input";
        case ErrorCategory::Structural: return "structural";
        case ErrorCategory::Numeric: return "numeric";
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Path: return "path";
        case ErrorCategory::Refusal: return "refusal";
        case ErrorCategory::State: return "state";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
    throw Error(category, message);
}

}  // namespace evada
