// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-token-class fingerprints: the saliency-weighted direction of a class's
// normalized last-layer hidden states over the validation set.

#include "trim/interchange.hpp"
#include "trim/saliency.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trim {

enum class ScoringScope : std::uint8_t { All = 0, PromptOnly = 1, ResponseOnly = 2 };

[[nodiscard]] std::string_view to_string(ScoringScope scope) noexcept;
/// Accepts "all", "prompt", "response"; throws InvalidConfig otherwise.
[[nodiscard]] ScoringScope parse_scope(std::string_view text);

/// SPECIAL positions are never in scope.
[[nodiscard]] constexpr bool in_scope(Role role, ScoringScope scope) noexcept {
    switch (scope) {
    case ScoringScope::All: return role != Role::Special;
    case ScoringScope::PromptOnly: return role == Role::Prompt;
    case ScoringScope::ResponseOnly: return role == Role::Response;
    }
    return false;
}

struct Occurrence {
    std::string sample_id;
    std::uint32_t position = 0;
    double alpha = 0.0;
    std::vector<float> hidden;
};

struct OccurrenceSet {
    std::map<TokenClass, std::vector<Occurrence>> by_class;
    std::size_t zero_norm_dropped = 0;
    std::uint32_t hidden_dim = 0;
    std::vector<std::string> sample_ids; // validation samples seen, in input order
};

struct FingerprintMeta {
    std::uint32_t hidden_dim = 0;
    std::size_t layers_used = 0;
    double w_q = 0.5;
    double w_k = 0.5;
    double epsilon = 1e-8;
    ScoringScope scope = ScoringScope::All;
    std::string builder_version;
    std::vector<std::string> validation_sample_ids;
    std::vector<TokenClass> dropped_classes;
    std::size_t zero_norm_dropped = 0;
    std::string config_hash;

    friend bool operator==(const FingerprintMeta&, const FingerprintMeta&) = default;
};

struct FingerprintEntry {
    std::vector<float> vector; // unit norm
    std::uint32_t occurrence_count = 0;
    float weight_sum = 0.0f;

    friend bool operator==(const FingerprintEntry&, const FingerprintEntry&) = default;
};

struct FingerprintDictionary {
    std::map<TokenClass, FingerprintEntry> entries;
    FingerprintMeta meta;

    [[nodiscard]] const FingerprintEntry* find(TokenClass cls) const {
        const auto it = entries.find(cls);
        return it == entries.end() ? nullptr : &it->second;
    }

    friend bool operator==(const FingerprintDictionary&, const FingerprintDictionary&) = default;
};

inline constexpr std::string_view kBuilderVersion = "trim-fingerprint/1";

/// Groups in-scope, non-SPECIAL positions by token class. Positions whose
/// hidden state has zero norm are dropped and counted.
[[nodiscard]] OccurrenceSet collect_occurrences(std::span<const ValidationRecord> records,
                                                std::span<const SaliencyMap> saliency, ScoringScope scope);

/// Throws NoFingerprints when there is nothing to build from, or when every
/// class degenerates.
[[nodiscard]] FingerprintDictionary build_fingerprints(const OccurrenceSet& occurrences, FingerprintMeta meta);

/// Saliency, occurrence collection and building in one step.
[[nodiscard]] FingerprintDictionary fingerprint_records(std::span<const ValidationRecord> records,
                                                      const SaliencyConfig& saliency, ScoringScope scope,
                                                      std::string config_hash = {});

struct FingerprintExpectations {
    std::optional<std::uint32_t> hidden_dim;
    std::optional<ScoringScope> scope;
};

inline constexpr double kUnitNormTolerance = 1e-6;

void save_fingerprints(const FingerprintDictionary& dict, const std::filesystem::path& path);
[[nodiscard]] FingerprintDictionary load_fingerprints(const std::filesystem::path& path,
                                                      const FingerprintExpectations& expect = {});

} // namespace trim
