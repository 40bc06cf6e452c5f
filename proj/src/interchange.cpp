// SPDX-License-Identifier: Apache-2.0
#include "trim/interchange.hpp"

#include "binary_io.hpp"
#include "trim/error.hpp"

#include <algorithm>
#include <limits>

namespace trim {

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::F16 ? 2 : 4; }

float round_trip_value(float value, DType dtype) noexcept {
    return dtype == DType::F16 ? half_to_float(float_to_half(value)) : value;
}

namespace detail {

namespace {
constexpr std::size_t kIoBufferBytes = 1u << 20;
}

AtomicFile::AtomicFile(std::filesystem::path target)
    : target_(std::move(target)), buffer_(kIoBufferBytes) {
    temp_ = target_;
    temp_ += ".tmp";
    out_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_) {
        throw Error(ErrorCode::Io, "cannot open " + temp_.string() + " for writing");
    }
}

AtomicFile::~AtomicFile() {
    if (!committed_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(temp_, ec);
    }
}

void AtomicFile::write(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) {
        throw Error(ErrorCode::Io, "write failed on " + temp_.string());
    }
}

void AtomicFile::patch(std::uint64_t offset, const void* data, std::size_t n) {
    const auto end = out_.tellp();
    out_.seekp(static_cast<std::streamoff>(offset));
    write(data, n);
    out_.seekp(end);
}

void AtomicFile::commit() {
    out_.flush();
    out_.close();
    if (!out_) {
        throw Error(ErrorCode::Io, "flush failed on " + temp_.string());
    }
    std::error_code ec;
    std::filesystem::rename(temp_, target_, ec);
    if (ec) {
        throw Error(ErrorCode::Io, "rename to " + target_.string() + " failed: " + ec.message());
    }
    committed_ = true;
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path), buffer_(kIoBufferBytes) {
    std::error_code ec;
    size_ = std::filesystem::file_size(path, ec);
    if (ec) {
        throw Error(ErrorCode::Io, "cannot stat " + path.string() + ": " + ec.message());
    }
    in_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    in_.open(path, std::ios::binary);
    if (!in_) {
        throw Error(ErrorCode::Io, "cannot open " + path.string());
    }
}

void BinaryReader::require(std::uint64_t n, const std::string& context) const {
    if (n > remaining()) {
        throw Error(ErrorCode::Truncated, path_.string() + ": " + context + " needs " + std::to_string(n) +
                                              " bytes at offset " + std::to_string(offset_) + ", only " +
                                              std::to_string(remaining()) + " remain");
    }
}

void BinaryReader::read(void* dst, std::size_t n, const std::string& context) {
    require(n, context);
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
        throw Error(ErrorCode::Io, path_.string() + ": read failed at offset " + std::to_string(offset_));
    }
    offset_ += n;
}

void BinaryReader::read_values(DType dtype, std::size_t count, float* dst, const std::string& context) {
    if (dtype == DType::F32) {
        read(dst, count * 4, context);
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < count; ++i) {
                dst[i] = std::bit_cast<float>(byteswap_if_big(std::bit_cast<std::uint32_t>(dst[i])));
            }
        }
    } else {
        halves_.resize(count);
        read(halves_.data(), count * 2, context);
        for (std::size_t i = 0; i < count; ++i) {
            dst[i] = half_to_float(byteswap_if_big(halves_[i]));
        }
    }
}

void BinaryReader::expect_header(const std::array<char, 4>& magic, const char* kind) {
    std::array<char, 4> got{};
    if (remaining() < 4) {
        throw Error(ErrorCode::BadMagic, path_.string() + ": file too short for " + kind + " magic");
    }
    read(got.data(), 4, "magic");
    if (got != magic) {
        throw Error(ErrorCode::BadMagic, path_.string() + ": expected " + std::string(kind) + " magic '" +
                                             std::string(magic.data(), 4) + "'");
    }
    const auto version = read_le<std::uint32_t>("version");
    if (version != kFormatVersion) {
        throw Error(ErrorCode::VersionMismatch,
                    path_.string() + ": unsupported version " + std::to_string(version));
    }
}

} // namespace detail

namespace {

using detail::append_bytes;
using detail::append_le;
using detail::append_values;

DType decode_dtype(std::uint8_t code, const std::filesystem::path& path) {
    if (code > 1) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": unknown dtype code " + std::to_string(code));
    }
    return static_cast<DType>(code);
}

std::string record_context(std::uint64_t ordinal, std::uint64_t offset) {
    return "record #" + std::to_string(ordinal) + " (frame at byte offset " + std::to_string(offset) + ")";
}

void reject(std::uint64_t index, const std::string& sample_id, const std::string& why) {
    throw Error(ErrorCode::RejectRecord, "record index " + std::to_string(index) + " ('" + sample_id + "'): " + why);
}

void check_common(std::uint64_t index, const std::string& sample_id, std::size_t t,
                  const std::vector<Role>& roles, std::size_t hidden_size, std::uint32_t record_dim,
                  std::uint32_t header_dim) {
    if (sample_id.empty() || sample_id.size() > std::numeric_limits<std::uint16_t>::max()) {
        reject(index, sample_id, "sample_id length must be in [1, 65535] bytes");
    }
    if (record_dim != header_dim) {
        reject(index, sample_id,
               "hidden dim " + std::to_string(record_dim) + " != header " + std::to_string(header_dim));
    }
    if (roles.size() != t) {
        reject(index, sample_id, "roles length " + std::to_string(roles.size()) + " != T " + std::to_string(t));
    }
    if (hidden_size != t * header_dim) {
        reject(index, sample_id, "hidden size " + std::to_string(hidden_size) + " != T*D");
    }
    for (Role r : roles) {
        if (static_cast<std::uint8_t>(r) > 2) {
            reject(index, sample_id, "invalid role code");
        }
    }
    if (t > std::numeric_limits<std::uint32_t>::max()) {
        reject(index, sample_id, "sequence too long");
    }
}

void encode_prefix(std::vector<std::uint8_t>& buf, const std::string& sample_id,
                   const std::vector<TokenClass>& ids, const std::vector<Role>& roles) {
    append_le(buf, static_cast<std::uint16_t>(sample_id.size()));
    append_bytes(buf, sample_id.data(), sample_id.size());
    append_le(buf, static_cast<std::uint32_t>(ids.size()));
    for (TokenClass id : ids) append_le(buf, id);
    for (Role r : roles) buf.push_back(static_cast<std::uint8_t>(r));
}

// Reads id, T, token ids and roles. Returns T. The caller has already
// recorded the frame start offset for error reporting.
std::size_t decode_prefix(detail::BinaryReader& in, const std::string& ctx, std::string& sample_id,
                          std::vector<TokenClass>& ids, std::vector<Role>& roles) {
    const auto id_len = in.read_le<std::uint16_t>(ctx + " id_len");
    if (id_len == 0) {
        throw Error(ErrorCode::CorruptFrame, in.path().string() + ": " + ctx + " has empty sample_id");
    }
    sample_id.resize(id_len);
    in.read(sample_id.data(), id_len, ctx + " sample_id");
    const auto t = in.read_le<std::uint32_t>(ctx + " T");
    in.require(static_cast<std::uint64_t>(t) * 5, ctx + " token ids and roles");
    ids.resize(t);
    in.read(ids.data(), static_cast<std::size_t>(t) * 4, ctx + " token ids");
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& id : ids) id = detail::byteswap_if_big(id);
    }
    roles.resize(t);
    in.read(roles.data(), t, ctx + " roles");
    for (std::size_t i = 0; i < t; ++i) {
        if (static_cast<std::uint8_t>(roles[i]) > 2) {
            throw Error(ErrorCode::CorruptFrame, in.path().string() + ": " + ctx + " has invalid role code " +
                                                     std::to_string(static_cast<int>(roles[i])) +
                                                     " at position " + std::to_string(i));
        }
    }
    return t;
}

void require_payload(detail::BinaryReader& in, const std::string& ctx, unsigned __int128 bytes) {
    if (bytes > in.remaining()) {
        in.require(std::numeric_limits<std::uint64_t>::max(), ctx + " tensors");
    }
}

void check_trailing(const detail::BinaryReader& in) {
    if (in.remaining() != 0) {
        throw Error(ErrorCode::CorruptFrame, in.path().string() + ": " + std::to_string(in.remaining()) +
                                                 " trailing bytes after last record at offset " +
                                                 std::to_string(in.offset()));
    }
}

} // namespace

// ---------------------------------------------------------------------------

ValidationWriter::ValidationWriter(const std::filesystem::path& path, const FormatHeader& header)
    : header_(header) {
    if (header.hidden_dim == 0 || header.layers == 0 || header.heads == 0) {
        throw Error(ErrorCode::InvalidConfig, "validation header needs positive D, L and H");
    }
    file_ = std::make_unique<detail::AtomicFile>(path);
    std::vector<std::uint8_t> buf;
    append_bytes(buf, kValidationMagic.data(), 4);
    append_le(buf, kFormatVersion);
    buf.push_back(static_cast<std::uint8_t>(header.dtype));
    append_le(buf, header.hidden_dim);
    append_le(buf, header.layers);
    append_le(buf, header.heads);
    append_le(buf, std::uint64_t{0}); // record_count, patched by finish()
    file_->write(buf);
}

ValidationWriter::~ValidationWriter() = default;

void ValidationWriter::write(const ValidationRecord& r) {
    const std::size_t t = r.length();
    check_common(written_, r.sample_id, t, r.roles, r.hidden.size(), r.hidden_dim, header_.hidden_dim);
    if (r.layers != header_.layers || r.heads != header_.heads) {
        reject(written_, r.sample_id, "attention L/H do not match header");
    }
    if (r.attention.size() != std::size_t{header_.layers} * header_.heads * t * t) {
        reject(written_, r.sample_id, "attention size != L*H*T*T");
    }
    scratch_.clear();
    encode_prefix(scratch_, r.sample_id, r.token_ids, r.roles);
    append_values(scratch_, r.hidden, header_.dtype);
    append_values(scratch_, r.attention, header_.dtype);
    file_->write(scratch_);
    ++written_;
}

void ValidationWriter::finish() {
    const std::uint64_t count = detail::byteswap_if_big(written_);
    file_->patch(4 + 4 + 1 + 4 + 4 + 4, &count, sizeof(count));
    file_->commit();
}

CandidateWriter::CandidateWriter(const std::filesystem::path& path, DType dtype, std::uint32_t hidden_dim)
    : dtype_(dtype), hidden_dim_(hidden_dim) {
    if (hidden_dim == 0) {
        throw Error(ErrorCode::InvalidConfig, "candidate header needs positive D");
    }
    file_ = std::make_unique<detail::AtomicFile>(path);
    std::vector<std::uint8_t> buf;
    append_bytes(buf, kCandidateMagic.data(), 4);
    append_le(buf, kFormatVersion);
    buf.push_back(static_cast<std::uint8_t>(dtype));
    append_le(buf, hidden_dim);
    append_le(buf, std::uint64_t{0});
    file_->write(buf);
}

CandidateWriter::~CandidateWriter() = default;

void CandidateWriter::write(const CandidateRecord& r) {
    check_common(written_, r.sample_id, r.length(), r.roles, r.hidden.size(), r.hidden_dim, hidden_dim_);
    scratch_.clear();
    encode_prefix(scratch_, r.sample_id, r.token_ids, r.roles);
    append_values(scratch_, r.hidden, dtype_);
    file_->write(scratch_);
    ++written_;
}

void CandidateWriter::finish() {
    const std::uint64_t count = detail::byteswap_if_big(written_);
    file_->patch(4 + 4 + 1 + 4, &count, sizeof(count));
    file_->commit();
}

void write_validation_file(const std::filesystem::path& path, std::span<const ValidationRecord> records,
                           const FormatHeader& header) {
    ValidationWriter w(path, header);
    for (const auto& r : records) w.write(r);
    w.finish();
}

void write_candidate_file(const std::filesystem::path& path, std::span<const CandidateRecord> records,
                          DType dtype, std::uint32_t hidden_dim) {
    CandidateWriter w(path, dtype, hidden_dim);
    for (const auto& r : records) w.write(r);
    w.finish();
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingTable& table, DType dtype) {
    if (table.dim == 0) {
        throw Error(ErrorCode::InvalidConfig, "embedding table needs positive D_e");
    }
    detail::AtomicFile file(path);
    std::vector<std::uint8_t> buf;
    append_bytes(buf, kEmbeddingMagic.data(), 4);
    append_le(buf, kFormatVersion);
    buf.push_back(static_cast<std::uint8_t>(dtype));
    append_le(buf, table.dim);
    append_le(buf, static_cast<std::uint64_t>(table.entries.size()));
    std::uint64_t index = 0;
    for (const auto& [cls, vec] : table.entries) {
        if (vec.size() != table.dim) {
            throw Error(ErrorCode::RejectRecord, "embedding entry " + std::to_string(index) + " (class " +
                                                     std::to_string(cls) + ") has wrong dimension");
        }
        append_le(buf, cls);
        append_values(buf, vec, dtype);
        ++index;
    }
    file.write(buf);
    file.commit();
}

// ---------------------------------------------------------------------------

ValidationReader::ValidationReader(const std::filesystem::path& path)
    : in_(std::make_unique<detail::BinaryReader>(path)) {
    in_->expect_header(kValidationMagic, "TRMV");
    header_.dtype = decode_dtype(in_->read_le<std::uint8_t>("dtype"), path);
    header_.hidden_dim = in_->read_le<std::uint32_t>("D");
    header_.layers = in_->read_le<std::uint32_t>("L");
    header_.heads = in_->read_le<std::uint32_t>("H");
    header_.record_count = in_->read_le<std::uint64_t>("record_count");
    if (header_.hidden_dim == 0 || header_.layers == 0 || header_.heads == 0) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": header declares a zero dimension");
    }
}

ValidationReader::~ValidationReader() = default;
ValidationReader::ValidationReader(ValidationReader&&) noexcept = default;
ValidationReader& ValidationReader::operator=(ValidationReader&&) noexcept = default;

bool ValidationReader::next(ValidationRecord& out) {
    if (ordinal_ == header_.record_count) {
        check_trailing(*in_);
        return false;
    }
    const std::string ctx = record_context(ordinal_, in_->offset());
    const std::size_t t = decode_prefix(*in_, ctx, out.sample_id, out.token_ids, out.roles);
    const std::size_t esize = dtype_size(header_.dtype);
    const unsigned __int128 n_hidden = static_cast<unsigned __int128>(t) * header_.hidden_dim;
    const unsigned __int128 n_attn =
        static_cast<unsigned __int128>(header_.layers) * header_.heads * t * t;
    require_payload(*in_, ctx, (n_hidden + n_attn) * esize);
    out.hidden_dim = header_.hidden_dim;
    out.layers = header_.layers;
    out.heads = header_.heads;
    out.hidden.resize(static_cast<std::size_t>(n_hidden));
    in_->read_values(header_.dtype, out.hidden.size(), out.hidden.data(), ctx + " hidden");
    out.attention.resize(static_cast<std::size_t>(n_attn));
    in_->read_values(header_.dtype, out.attention.size(), out.attention.data(), ctx + " attention");
    ++ordinal_;
    return true;
}

CandidateReader::CandidateReader(const std::filesystem::path& path)
    : in_(std::make_unique<detail::BinaryReader>(path)) {
    in_->expect_header(kCandidateMagic, "TRMC");
    header_.dtype = decode_dtype(in_->read_le<std::uint8_t>("dtype"), path);
    header_.hidden_dim = in_->read_le<std::uint32_t>("D");
    header_.record_count = in_->read_le<std::uint64_t>("record_count");
    if (header_.hidden_dim == 0) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": header declares D = 0");
    }
}

CandidateReader::~CandidateReader() = default;
CandidateReader::CandidateReader(CandidateReader&&) noexcept = default;
CandidateReader& CandidateReader::operator=(CandidateReader&&) noexcept = default;

bool CandidateReader::next(CandidateRecord& out) {
    if (ordinal_ == header_.record_count) {
        check_trailing(*in_);
        return false;
    }
    const std::string ctx = record_context(ordinal_, in_->offset());
    const std::size_t t = decode_prefix(*in_, ctx, out.sample_id, out.token_ids, out.roles);
    const unsigned __int128 n_hidden = static_cast<unsigned __int128>(t) * header_.hidden_dim;
    require_payload(*in_, ctx, n_hidden * dtype_size(header_.dtype));
    out.hidden_dim = header_.hidden_dim;
    out.hidden.resize(static_cast<std::size_t>(n_hidden));
    in_->read_values(header_.dtype, out.hidden.size(), out.hidden.data(), ctx + " hidden");
    ++ordinal_;
    return true;
}

std::vector<ValidationRecord> read_validation_file(const std::filesystem::path& path) {
    ValidationReader reader(path);
    std::vector<ValidationRecord> out;
    ValidationRecord rec;
    while (reader.next(rec)) out.push_back(rec);
    return out;
}

std::vector<CandidateRecord> read_candidate_file(const std::filesystem::path& path) {
    CandidateReader reader(path);
    std::vector<CandidateRecord> out;
    CandidateRecord rec;
    while (reader.next(rec)) out.push_back(rec);
    return out;
}

EmbeddingTable read_embedding_file(const std::filesystem::path& path) {
    detail::BinaryReader in(path);
    in.expect_header(kEmbeddingMagic, "TRME");
    const DType dtype = decode_dtype(in.read_le<std::uint8_t>("dtype"), path);
    EmbeddingTable table;
    table.dim = in.read_le<std::uint32_t>("D_e");
    if (table.dim == 0) {
        throw Error(ErrorCode::CorruptFrame, path.string() + ": header declares D_e = 0");
    }
    const auto count = in.read_le<std::uint64_t>("entry_count");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string ctx = "entry #" + std::to_string(i) + " (offset " + std::to_string(in.offset()) + ")";
        const auto cls = in.read_le<std::uint32_t>(ctx + " class");
        std::vector<float> vec(table.dim);
        in.read_values(dtype, vec.size(), vec.data(), ctx + " vector");
        if (!table.entries.emplace(cls, std::move(vec)).second) {
            throw Error(ErrorCode::CorruptFrame,
                        path.string() + ": " + ctx + " repeats class " + std::to_string(cls));
        }
    }
    check_trailing(in);
    return table;
}

std::optional<std::array<char, 4>> peek_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4)) {
        return std::nullopt;
    }
    return magic;
}

} // namespace trim
