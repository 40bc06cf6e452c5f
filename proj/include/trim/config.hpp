// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pipeline configuration. Values resolve as: command-line flag, then config
// file, then built-in default.

#include "trim/saliency.hpp"
#include "trim/scorer.hpp"
#include "trim/selector.hpp"

#include <filesystem>
#include <string>

namespace trim {

struct PipelineConfig {
    SaliencyConfig saliency;
    ScoringConfig scoring;
    Budget budget;
    unsigned workers = 1;
    bool strict = false;

    /// Runs every module's validation; throws InvalidConfig.
    void validate() const;

    /// Full config as JSON (keys sorted).
    [[nodiscard]] std::string to_json() const;
    /// JSON of the parameters that determine scores. Budget, worker count,
    /// strictness and paths are excluded.
    [[nodiscard]] std::string canonical_json() const;
    /// 16 hex digits of FNV-1a/64 over canonical_json().
    [[nodiscard]] std::string hash() const;

    /// Applies the keys present in `json_text` on top of this config.
    void overlay_json(const std::string& json_text);
};

[[nodiscard]] PipelineConfig load_config(const std::filesystem::path& path);

[[nodiscard]] std::uint64_t fnv1a64(std::string_view bytes) noexcept;

} // namespace trim
