// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trim {

enum class ErrorCode {
    RejectRecord,
    BadMagic,
    VersionMismatch,
    CorruptFrame,
    Truncated,
    Io,
    EmptyRow,
    LengthMismatch,
    NoFingerprints,
    DimensionMismatch,
    ConfigMismatch,
    EmbeddingGap,
    NormViolation,
    MissingManifestEntry,
    DuplicateSample,
    InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::RejectRecord: return "REJECT_RECORD";
    case ErrorCode::BadMagic: return "BAD_MAGIC";
    case ErrorCode::VersionMismatch: return "VERSION_MISMATCH";
    case ErrorCode::CorruptFrame: return "CORRUPT_FRAME";
    case ErrorCode::Truncated: return "TRUNCATED";
    case ErrorCode::Io: return "IO_ERROR";
    case ErrorCode::EmptyRow: return "EMPTY_ROW";
    case ErrorCode::LengthMismatch: return "LENGTH_MISMATCH";
    case ErrorCode::NoFingerprints: return "NO_FINGERPRINTS";
    case ErrorCode::DimensionMismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::ConfigMismatch: return "CONFIG_MISMATCH";
    case ErrorCode::EmbeddingGap: return "EMBEDDING_GAP";
    case ErrorCode::NormViolation: return "NORM_VIOLATION";
    case ErrorCode::MissingManifestEntry: return "MISSING_MANIFEST_ENTRY";
    case ErrorCode::DuplicateSample: return "DUPLICATE_SAMPLE";
    case ErrorCode::InvalidConfig: return "INVALID_CONFIG";
    }
    return "UNKNOWN";
}

inline std::optional<ErrorCode> parse_error_code(std::string_view text) noexcept {
    for (int i = 0; i <= static_cast<int>(ErrorCode::InvalidConfig); ++i) {
        const auto code = static_cast<ErrorCode>(i);
        if (to_string(code) == text) return code;
    }
    return std::nullopt;
}

} // namespace trim
