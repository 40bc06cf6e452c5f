// SPDX-License-Identifier: Apache-2.0
#include "trim/saliency.hpp"

#include "trim/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace trim {

void SaliencyConfig::validate() const {
    if (layers < 1) {
        throw Error(ErrorCode::InvalidConfig, "saliency layers must be >= 1");
    }
    if (!(w_q >= 0.0) || !(w_k >= 0.0) || std::abs(w_q + w_k - 1.0) > 1e-12) {
        throw Error(ErrorCode::InvalidConfig, "w_q and w_k must be non-negative and sum to 1");
    }
    if (!(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "epsilon must be positive");
    }
}

std::size_t SaliencyConfig::effective_layers(std::size_t available) const noexcept {
    return std::min(layers, available);
}

double row_entropy(std::span<const float> row, std::size_t valid_keys, double epsilon) {
    if (valid_keys == 0) {
        throw Error(ErrorCode::EmptyRow, "attention row has no valid keys");
    }
    const auto keys = row.first(std::min(valid_keys, row.size()));
    double h = 0.0;
    for (float a : keys) {
        const double p = a;
        h -= p * std::log(p + epsilon);
    }
    return h;
}

double row_saliency(std::span<const float> row, std::size_t valid_keys, double epsilon) {
    const double h = row_entropy(row, valid_keys, epsilon);
    const auto keys = row.first(std::min(valid_keys, row.size()));
    const auto support = std::count_if(keys.begin(), keys.end(), [](float a) { return a > 0.0f; });
    if (support <= 1) {
        return 1.0;
    }
    const double q = 1.0 - h / std::log(static_cast<double>(support));
    return std::clamp(q, 0.0, 1.0);
}

namespace {

void check_shape(const ValidationRecord& record) {
    const std::size_t t = record.length();
    if (record.layers == 0 || record.heads == 0 ||
        record.attention.size() != std::size_t{record.layers} * record.heads * t * t) {
        throw Error(ErrorCode::LengthMismatch,
                    "record '" + record.sample_id + "' attention shape does not match L*H*T*T");
    }
}

// Summing the sorted values makes the mean independent of head order.
double order_free_mean(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

struct ColumnStats {
    std::vector<double> raw;
    std::vector<bool> supported;
};

ColumnStats column_stats(const ValidationRecord& record, const SaliencyConfig& cfg) {
    check_shape(record);
    const std::size_t t = record.length();
    const std::size_t used = cfg.effective_layers(record.layers);
    const std::size_t first_layer = record.layers - used;
    const std::size_t heads = record.heads;

    // per_head[j * (used*heads) + slot]
    std::vector<double> per_head(t * used * heads, 0.0);
    std::vector<double> sums(t);
    std::vector<std::size_t> counts(t);
    ColumnStats out{std::vector<double>(t, 0.0), std::vector<bool>(t, false)};

    for (std::size_t l = 0; l < used; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            std::fill(sums.begin(), sums.end(), 0.0);
            std::fill(counts.begin(), counts.end(), 0);
            for (std::size_t i = 0; i < t; ++i) {
                const auto row = record.attention_row(first_layer + l, h, i);
                for (std::size_t j = 0; j < t; ++j) {
                    if (row[j] > 0.0f) {
                        sums[j] += row[j];
                        ++counts[j];
                    }
                }
            }
            const std::size_t slot = l * heads + h;
            for (std::size_t j = 0; j < t; ++j) {
                if (counts[j] > 0) {
                    per_head[j * used * heads + slot] = sums[j] / static_cast<double>(counts[j]);
                    out.supported[j] = true;
                }
            }
        }
    }
    std::vector<double> values(used * heads);
    for (std::size_t j = 0; j < t; ++j) {
        std::copy_n(per_head.begin() + static_cast<std::ptrdiff_t>(j * used * heads), used * heads, values.begin());
        out.raw[j] = order_free_mean(values);
    }
    return out;
}

std::vector<double> min_max_scale(const ColumnStats& stats, double epsilon) {
    const std::size_t t = stats.raw.size();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t; ++j) {
        if (stats.supported[j]) {
            lo = std::min(lo, stats.raw[j]);
            hi = std::max(hi, stats.raw[j]);
        }
    }
    std::vector<double> scaled(t, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
        if (stats.supported[j]) {
            scaled[j] = (stats.raw[j] - lo) / (hi - lo + epsilon);
        }
    }
    return scaled;
}

} // namespace

std::vector<double> aggregate_row_saliency(const ValidationRecord& record, const SaliencyConfig& cfg) {
    check_shape(record);
    const std::size_t t = record.length();
    const std::size_t used = cfg.effective_layers(record.layers);
    const std::size_t first_layer = record.layers - used;
    std::vector<double> q(t, 0.0);
    std::vector<double> values(used * record.heads);
    for (std::size_t i = 0; i < t; ++i) {
        std::size_t slot = 0;
        for (std::size_t l = 0; l < used; ++l) {
            for (std::size_t h = 0; h < record.heads; ++h) {
                values[slot++] = row_saliency(record.attention_row(first_layer + l, h, i), i + 1, cfg.epsilon);
            }
        }
        q[i] = order_free_mean(values);
    }
    return q;
}

std::vector<double> raw_column_saliency(const ValidationRecord& record, const SaliencyConfig& cfg) {
    return column_stats(record, cfg).raw;
}

std::vector<double> column_saliency(const ValidationRecord& record, const SaliencyConfig& cfg) {
    return min_max_scale(column_stats(record, cfg), cfg.epsilon);
}

SaliencyMap aggregated_saliency(const ValidationRecord& record, const SaliencyConfig& cfg) {
    SaliencyMap map;
    map.row = aggregate_row_saliency(record, cfg);
    const ColumnStats stats = column_stats(record, cfg);
    map.column = min_max_scale(stats, cfg.epsilon);
    map.column_raw = stats.raw;
    map.alpha.resize(map.row.size());
    for (std::size_t i = 0; i < map.alpha.size(); ++i) {
        map.alpha[i] = cfg.w_q * map.row[i] + cfg.w_k * map.column[i];
    }
    return map;
}

} // namespace trim
