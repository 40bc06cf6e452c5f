// SPDX-License-Identifier: Apache-2.0
#pragma once

// Attention-derived token saliency for validation records.
//
// Row saliency measures how sharply a query concentrates its attention
// (one minus normalized entropy); column saliency measures the average
// attention a key receives, min-max scaled within the sample. Both are
// averaged over the last `layers` layers and every head, then blended.

#include "trim/interchange.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace trim {

struct SaliencyConfig {
    std::size_t layers = 6; // last-N layers; capped at what the record holds
    double w_q = 0.5;
    double w_k = 0.5;
    double epsilon = 1e-8;

    /// Throws InvalidConfig unless the weights form a convex pair and layers >= 1.
    void validate() const;
    /// Number of layers actually aggregated for a record with `available` layers.
    [[nodiscard]] std::size_t effective_layers(std::size_t available) const noexcept;
};

struct SaliencyMap {
    std::vector<double> row;        // Q
    std::vector<double> column;     // K (min-max scaled)
    std::vector<double> column_raw; // K before scaling
    std::vector<double> alpha;
};

/// H = -sum_j a_j ln(a_j + eps) over the first `valid_keys` entries of `row`.
/// Throws EmptyRow when valid_keys == 0.
[[nodiscard]] double row_entropy(std::span<const float> row, std::size_t valid_keys, double epsilon = 1e-8);

/// q = 1 - H / ln|{j : a_j > 0}|, clamped to [0, 1]. A row with a single
/// non-zero key is maximally sharp and yields 1.
[[nodiscard]] double row_saliency(std::span<const float> row, std::size_t valid_keys, double epsilon = 1e-8);

[[nodiscard]] std::vector<double> aggregate_row_saliency(const ValidationRecord& record, const SaliencyConfig& cfg);

/// Unscaled per-key attention average, averaged over layers and heads.
[[nodiscard]] std::vector<double> raw_column_saliency(const ValidationRecord& record, const SaliencyConfig& cfg);

[[nodiscard]] std::vector<double> column_saliency(const ValidationRecord& record, const SaliencyConfig& cfg);

[[nodiscard]] SaliencyMap aggregated_saliency(const ValidationRecord& record, const SaliencyConfig& cfg);

} // namespace trim
