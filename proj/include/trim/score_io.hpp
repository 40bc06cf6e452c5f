// SPDX-License-Identifier: Apache-2.0
#pragma once

// Score output: JSON lines, one per candidate, in ascending sample_id order.
// The empty-scope sentinel is written as S = null with "empty_scope": true.

#include "trim/scorer.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace trim {

[[nodiscard]] std::string format_score_line(const ScoreResult& result, std::string_view config_hash);

/// Sorts by sample_id (the canonical order of every score file).
void canonicalize(std::vector<ScoreResult>& results);

/// Returns the first sample_id that appears more than once in canonically
/// ordered results, or an empty string.
[[nodiscard]] std::string first_duplicate_id(const std::vector<ScoreResult>& canonical);

void write_score_file(const std::filesystem::path& path, const std::vector<ScoreResult>& canonical,
                      std::string_view config_hash);

/// Streams a score file; `visit` receives each result with its line's config hash.
void for_each_score(const std::filesystem::path& path,
                    const std::function<void(ScoreResult&&, const std::string& config_hash)>& visit);

struct ScoreFile {
    std::vector<ScoreRecord> records;
    std::vector<RecordError> errors;
    std::vector<std::string> config_hashes; // distinct, sorted
};

[[nodiscard]] ScoreFile read_score_file(const std::filesystem::path& path);

[[nodiscard]] const std::string& sample_id_of(const ScoreResult& result) noexcept;

} // namespace trim
