// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trim {

struct CheckResult {
    std::string name;
    bool passed = true;
    std::uint64_t failures = 0;
    std::string first_offender; // e.g. "record #3 'val-3' layer 0 head 1 row 2"
    std::string detail;
};

struct ValidationReport {
    std::filesystem::path path;
    std::string kind; // TRMV, TRMC, TRME, TRMF or "unknown"
    std::vector<CheckResult> checks;

    [[nodiscard]] bool ok() const noexcept;
    [[nodiscard]] const CheckResult* check(const std::string& name) const noexcept;
    [[nodiscard]] std::string to_json() const;
};

struct ValidateOptions {
    std::optional<std::uint32_t> expected_hidden_dim;
};

inline constexpr double kRowSumToleranceF32 = 1e-5;
inline constexpr double kRowSumToleranceF16 = 1e-3;

/// Never throws for malformed content; every problem becomes a failed check.
[[nodiscard]] ValidationReport validate_file(const std::filesystem::path& path, const ValidateOptions& options = {});

} // namespace trim
