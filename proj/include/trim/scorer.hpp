// SPDX-License-Identifier: Apache-2.0
#pragma once

// Candidate scoring: every in-scope token's hidden state is compared with the
// fingerprint of its class (or, for classes without one, the fingerprint of
// the nearest class in input-embedding space, scaled by lambda). Token scores
// are pooled as w_mu * mean + w_m * max + eta * coverage.

#include "trim/error.hpp"
#include "trim/fingerprint.hpp"
#include "trim/interchange.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace trim {

enum class OovPolicy : std::uint8_t { Backoff = 0, Skip = 1 };

[[nodiscard]] std::string_view to_string(OovPolicy policy) noexcept;
[[nodiscard]] OovPolicy parse_oov_policy(std::string_view text);

struct ScoringConfig {
    double lambda = 1.0;
    double w_mu = 0.5;
    double w_m = 0.5;
    double eta = 0.05;
    ScoringScope scope = ScoringScope::All;
    OovPolicy oov = OovPolicy::Backoff;

    void validate() const;
};

struct ScoreRecord {
    std::string sample_id;
    double score = -std::numeric_limits<double>::infinity();
    double mean = 0.0;
    double max = 0.0;
    double coverage = 0.0;
    std::uint64_t scored_tokens = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t oov_tokens = 0;
    std::uint64_t zero_norm_tokens = 0;
    std::string source;

    [[nodiscard]] bool empty_scope() const noexcept { return scored_tokens == 0; }
};

struct RecordError {
    std::string sample_id;
    ErrorCode code = ErrorCode::CorruptFrame;
    std::string message;
};

using ScoreResult = std::variant<ScoreRecord, RecordError>;

/// Mean/max accumulator for token scores. Scores are summed on a 2^-60
/// fixed-point grid, so the mean depends only on the multiset of scores:
/// order and k-fold duplication leave it bit-identical.
class TokenScorePool {
public:
    void add(double score) noexcept;
    [[nodiscard]] std::uint64_t count() const noexcept { return count_; }
    [[nodiscard]] double mean() const noexcept;
    [[nodiscard]] double max() const noexcept { return max_; }

private:
    __int128 sum_ = 0;
    std::uint64_t count_ = 0;
    double max_ = -std::numeric_limits<double>::infinity();
    double min_ = std::numeric_limits<double>::infinity();
};

/// Pools already-computed token scores for a record of `total_tokens`
/// positions. An empty score set yields the -inf sentinel.
[[nodiscard]] ScoreRecord pool_token_scores(std::span<const double> scores, std::uint64_t total_tokens,
                                            const ScoringConfig& cfg);

/// Nearest fingerprinted class by input-embedding cosine; ties go to the
/// lowest class id. Thread-safe; each class is resolved once.
class OovResolver {
public:
    /// `embeddings` may be null, in which case every resolve() fails with
    /// EmbeddingGap. Throws EmbeddingGap if a fingerprinted class has no row.
    OovResolver(const FingerprintDictionary& dict, const EmbeddingTable* embeddings);

    [[nodiscard]] TokenClass resolve(TokenClass query) const;
    [[nodiscard]] std::size_t cached() const;

private:
    [[nodiscard]] TokenClass search(TokenClass query) const;

    const EmbeddingTable* table_;
    std::vector<TokenClass> classes_;   // ascending
    std::vector<double> unit_rows_;     // [classes x dim]
    std::size_t dim_ = 0;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<TokenClass, TokenClass> cache_;
};

struct TokenScore {
    double value = 0.0;
    bool oov = false;
};

class Scorer {
public:
    /// Throws ConfigMismatch when cfg.scope differs from the dictionary's.
    Scorer(const FingerprintDictionary& dict, const EmbeddingTable* embeddings, ScoringConfig cfg);

    /// Cosine of `hidden` against the class fingerprint (lambda-scaled for
    /// backed-off classes). nullopt when the token is excluded: an OOV class
    /// under the skip policy, or a zero-norm hidden state.
    [[nodiscard]] std::optional<TokenScore> token_score(std::span<const float> hidden, TokenClass cls) const;

    /// Throws DimensionMismatch or EmbeddingGap.
    [[nodiscard]] ScoreRecord score(const CandidateRecord& record) const;

    [[nodiscard]] const ScoringConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const OovResolver& resolver() const noexcept { return resolver_; }
    [[nodiscard]] std::uint32_t hidden_dim() const noexcept { return dim_; }

private:
    [[nodiscard]] const double* fingerprint(TokenClass cls) const noexcept;

    ScoringConfig cfg_;
    std::uint32_t dim_;
    std::vector<std::int32_t> slot_of_class_; // -1 when not fingerprinted
    std::vector<double> rows_;                // [slots x dim]
    std::vector<double> inv_norms_;
    OovResolver resolver_;
};

// ---------------------------------------------------------------------------
// Corpus scoring

class CandidateSource {
public:
    virtual ~CandidateSource() = default;
    virtual bool next(CandidateRecord& out) = 0;
};

/// Streams several TRMC files back to back.
class FileSetSource final : public CandidateSource {
public:
    explicit FileSetSource(std::vector<std::filesystem::path> files);
    bool next(CandidateRecord& out) override;

private:
    std::vector<std::filesystem::path> files_;
    std::size_t index_ = 0;
    std::optional<CandidateReader> reader_;
};

struct CorpusOptions {
    unsigned workers = 1;
    std::size_t batch_size = 64;
    bool strict = false;                      // first record error aborts
    const CorpusManifest* manifest = nullptr; // fills ScoreRecord::source
};

struct CorpusStats {
    std::uint64_t records = 0;
    std::uint64_t errors = 0;
    std::uint64_t empty_scope = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t scored_tokens = 0;
    std::uint64_t oov_tokens = 0;
    std::uint64_t zero_norm_tokens = 0;
    double seconds = 0.0;
};

/// Scores every record from `source`, handing results to `sink` in input
/// order. Results are identical for any worker count; at most
/// 2 * workers * batch_size records are resident at once.
CorpusStats score_corpus(CandidateSource& source, const Scorer& scorer, const CorpusOptions& options,
                         const std::function<void(ScoreResult&&)>& sink);

} // namespace trim
