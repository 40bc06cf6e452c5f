// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "trim/interchange.hpp"
#include "trim/scorer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trim {

struct Budget {
    enum class Kind : std::uint8_t { TopK, TopP };

    Kind kind = Kind::TopP;
    std::uint64_t count = 0; // TopK
    double fraction = 0.05;  // TopP

    static Budget top_k(std::uint64_t k) { return Budget{Kind::TopK, k, 0.0}; }
    static Budget top_p(double p) { return Budget{Kind::TopP, 0, p}; }

    void validate() const;
    /// TopP resolves to ceil(fraction * corpus_size).
    [[nodiscard]] std::uint64_t resolve(std::uint64_t corpus_size) const;
};

/// Selection order: higher S first, ties by ascending sample_id.
[[nodiscard]] bool ranks_before(double score_a, std::string_view id_a, double score_b, std::string_view id_b) noexcept;
[[nodiscard]] inline bool ranks_before(const ScoreRecord& a, const ScoreRecord& b) noexcept {
    return ranks_before(a.score, a.sample_id, b.score, b.sample_id);
}

struct SelectionEntry {
    std::uint64_t rank = 0;
    std::string sample_id;
    double score = 0.0;
    std::string source;
};

struct SelectionManifest {
    std::vector<SelectionEntry> selected;
    std::vector<std::string> excluded; // empty-scope samples, ascending id
    std::uint64_t corpus_size = 0;
    std::uint64_t requested = 0;
    std::string config_hash; // provenance of the scores
};

/// Bounded top-K over a stream of scores. Empty-scope records are never
/// selected; they are collected as exclusions. Selectors over disjoint shards
/// can be merged in any order.
class TopKSelector {
public:
    explicit TopKSelector(std::uint64_t k);

    void push(const ScoreRecord& record);
    void merge(TopKSelector&& other);
    [[nodiscard]] std::uint64_t seen() const noexcept { return seen_; }
    [[nodiscard]] SelectionManifest finish() &&;

private:
    struct Entry {
        double score;
        std::string sample_id;
        std::string source;
    };
    static bool entry_before(const Entry& a, const Entry& b) noexcept {
        return ranks_before(a.score, a.sample_id, b.score, b.sample_id);
    }
    void offer(Entry entry);

    std::uint64_t k_;
    std::uint64_t seen_ = 0;
    std::vector<Entry> heap_; // worst-ranked entry at the front
    std::vector<std::string> excluded_;
};

[[nodiscard]] SelectionManifest select_top(std::span<const ScoreRecord> scores, const Budget& budget);

/// JSON lines {rank, sample_id, S, source, config_hash}; the hash is omitted
/// when the manifest has none.
void write_selection(const std::filesystem::path& path, const SelectionManifest& manifest);
[[nodiscard]] SelectionManifest read_selection(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports

struct LengthBucket {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0; // exclusive; 0 for the open-ended last bucket
    bool open_ended = false;
    std::uint64_t selected = 0;
    std::uint64_t pool = 0;
    double selected_pct = 0.0;
    double pool_pct = 0.0;
};

struct LengthSummary {
    std::uint64_t count = 0;
    double mean = 0.0;
    double median = 0.0;
};

struct LengthReport {
    std::vector<LengthBucket> buckets;
    LengthSummary selected;
    LengthSummary pool;

    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] std::string summary_csv() const;
    [[nodiscard]] std::string to_json() const;
};

inline const std::vector<std::uint64_t> kDefaultLengthEdges{0, 128, 256, 512, 1024, 2048};

/// `edges` must start at 0 and increase strictly; the last bucket is open-ended.
[[nodiscard]] LengthReport length_report(const SelectionManifest& selection, const CorpusManifest& corpus,
                                         std::span<const std::uint64_t> edges = kDefaultLengthEdges);

struct SourceShare {
    std::string source;
    std::uint64_t selected = 0;
    std::uint64_t pool = 0;
    double selected_pct = 0.0;
    double pool_pct = 0.0;
};

struct SubsetReport {
    std::vector<SourceShare> sources; // ascending by source tag

    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] std::string to_json() const;
};

[[nodiscard]] SubsetReport subset_report(const SelectionManifest& selection, const CorpusManifest& corpus);

} // namespace trim
