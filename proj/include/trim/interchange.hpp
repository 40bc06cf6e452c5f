// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary record formats shared between the activation extractor and the
// selection engine. All formats are little-endian and row-major:
//
//   TRMV  validation records (token ids, roles, hidden states, attention)
//   TRMC  candidate records (token ids, roles, hidden states)
//   TRME  input-embedding rows keyed by token class
//
// plus the JSON-lines corpus manifest binding sample ids to source tags.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trim {

using TokenClass = std::uint32_t;

enum class Role : std::uint8_t { Special = 0, Prompt = 1, Response = 2 };

enum class DType : std::uint8_t { F32 = 0, F16 = 1 };

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::array<char, 4> kValidationMagic{'T', 'R', 'M', 'V'};
inline constexpr std::array<char, 4> kCandidateMagic{'T', 'R', 'M', 'C'};
inline constexpr std::array<char, 4> kEmbeddingMagic{'T', 'R', 'M', 'E'};
inline constexpr std::array<char, 4> kFingerprintMagic{'T', 'R', 'M', 'F'};

[[nodiscard]] std::size_t dtype_size(DType dtype) noexcept;

/// Quantize-then-widen through the on-disk dtype; identity for f32.
[[nodiscard]] float round_trip_value(float value, DType dtype) noexcept;

struct FormatHeader {
    DType dtype = DType::F32;
    std::uint32_t hidden_dim = 0;
    std::uint32_t layers = 0; // TRMV only
    std::uint32_t heads = 0;  // TRMV only
    std::uint64_t record_count = 0;
};

struct CandidateRecord {
    std::string sample_id;
    std::vector<TokenClass> token_ids;
    std::vector<Role> roles;
    std::vector<float> hidden; // [T x D]
    std::uint32_t hidden_dim = 0;

    [[nodiscard]] std::size_t length() const noexcept { return token_ids.size(); }
    [[nodiscard]] std::span<const float> hidden_at(std::size_t pos) const noexcept {
        return {hidden.data() + pos * hidden_dim, hidden_dim};
    }
};

struct ValidationRecord {
    std::string sample_id;
    std::vector<TokenClass> token_ids;
    std::vector<Role> roles;
    std::vector<float> hidden;    // [T x D]
    std::vector<float> attention; // [L x H x T x T], post-softmax
    std::uint32_t hidden_dim = 0;
    std::uint32_t layers = 0;
    std::uint32_t heads = 0;

    [[nodiscard]] std::size_t length() const noexcept { return token_ids.size(); }
    [[nodiscard]] std::span<const float> hidden_at(std::size_t pos) const noexcept {
        return {hidden.data() + pos * hidden_dim, hidden_dim};
    }
    /// Full attention row (T keys) of query `row` in (layer, head).
    [[nodiscard]] std::span<const float> attention_row(std::size_t layer, std::size_t head,
                                                       std::size_t row) const noexcept {
        const std::size_t t = length();
        return {attention.data() + ((layer * heads + head) * t + row) * t, t};
    }
};

struct EmbeddingTable {
    std::uint32_t dim = 0;
    std::map<TokenClass, std::vector<float>> entries;

    [[nodiscard]] const std::vector<float>* find(TokenClass cls) const {
        const auto it = entries.find(cls);
        return it == entries.end() ? nullptr : &it->second;
    }
};

namespace detail {
class BinaryReader;
class AtomicFile;
} // namespace detail

// ---------------------------------------------------------------------------
// Writers. Output goes to a temporary sibling and is renamed into place by
// finish(); a writer destroyed before finish() leaves no file behind.

class ValidationWriter {
public:
    ValidationWriter(const std::filesystem::path& path, const FormatHeader& header);
    ~ValidationWriter();
    ValidationWriter(const ValidationWriter&) = delete;
    ValidationWriter& operator=(const ValidationWriter&) = delete;

    void write(const ValidationRecord& record);
    void finish();

private:
    std::unique_ptr<detail::AtomicFile> file_;
    FormatHeader header_;
    std::uint64_t written_ = 0;
    std::vector<std::uint8_t> scratch_;
};

class CandidateWriter {
public:
    CandidateWriter(const std::filesystem::path& path, DType dtype, std::uint32_t hidden_dim);
    ~CandidateWriter();
    CandidateWriter(const CandidateWriter&) = delete;
    CandidateWriter& operator=(const CandidateWriter&) = delete;

    void write(const CandidateRecord& record);
    void finish();

private:
    std::unique_ptr<detail::AtomicFile> file_;
    DType dtype_;
    std::uint32_t hidden_dim_;
    std::uint64_t written_ = 0;
    std::vector<std::uint8_t> scratch_;
};

void write_validation_file(const std::filesystem::path& path,
                           std::span<const ValidationRecord> records, const FormatHeader& header);
void write_candidate_file(const std::filesystem::path& path,
                          std::span<const CandidateRecord> records, DType dtype,
                          std::uint32_t hidden_dim);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingTable& table,
                          DType dtype);

// ---------------------------------------------------------------------------
// Readers. Streaming readers keep exactly one decoded record (the caller's)
// resident; errors carry the byte offset and record ordinal.

class ValidationReader {
public:
    explicit ValidationReader(const std::filesystem::path& path);
    ~ValidationReader();
    ValidationReader(ValidationReader&&) noexcept;
    ValidationReader& operator=(ValidationReader&&) noexcept;

    [[nodiscard]] const FormatHeader& header() const noexcept { return header_; }
    /// Decodes the next record into `out`; returns false after the last one.
    bool next(ValidationRecord& out);

private:
    std::unique_ptr<detail::BinaryReader> in_;
    FormatHeader header_;
    std::uint64_t ordinal_ = 0;
};

class CandidateReader {
public:
    explicit CandidateReader(const std::filesystem::path& path);
    ~CandidateReader();
    CandidateReader(CandidateReader&&) noexcept;
    CandidateReader& operator=(CandidateReader&&) noexcept;

    [[nodiscard]] const FormatHeader& header() const noexcept { return header_; }
    bool next(CandidateRecord& out);

private:
    std::unique_ptr<detail::BinaryReader> in_;
    FormatHeader header_;
    std::uint64_t ordinal_ = 0;
};

[[nodiscard]] std::vector<ValidationRecord> read_validation_file(const std::filesystem::path& path);
[[nodiscard]] std::vector<CandidateRecord> read_candidate_file(const std::filesystem::path& path);
[[nodiscard]] EmbeddingTable read_embedding_file(const std::filesystem::path& path);

/// Reads the 4-byte magic, or nullopt if the file is shorter than that.
[[nodiscard]] std::optional<std::array<char, 4>> peek_magic(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Corpus manifest (JSON lines: sample_id, source, n_tokens, optional prompt_len).

struct ManifestEntry {
    std::string sample_id;
    std::string source;
    std::uint64_t n_tokens = 0;
    std::optional<std::uint64_t> prompt_len;
};

class CorpusManifest {
public:
    /// Throws DuplicateSample when the id is already present.
    void add(ManifestEntry entry);
    [[nodiscard]] const ManifestEntry* find(const std::string& sample_id) const;
    [[nodiscard]] const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

private:
    std::vector<ManifestEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

[[nodiscard]] CorpusManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);

} // namespace trim
