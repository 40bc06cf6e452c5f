// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "trim/error.hpp"
#include "trim/half.hpp"
#include "trim/interchange.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace trim::detail {

template <typename T>
T byteswap_if_big(T value) noexcept {
    static_assert(std::is_integral_v<T>);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        T out{};
        auto* src = reinterpret_cast<const unsigned char*>(&value);
        auto* dst = reinterpret_cast<unsigned char*>(&out);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            dst[i] = src[sizeof(T) - 1 - i];
        }
        return out;
    } else {
        return value;
    }
}

template <typename T>
void append_le(std::vector<std::uint8_t>& buf, T value) {
    if constexpr (std::is_same_v<T, float>) {
        append_le(buf, std::bit_cast<std::uint32_t>(value));
    } else {
        const T le = byteswap_if_big(value);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&le);
        buf.insert(buf.end(), p, p + sizeof(T));
    }
}

inline void append_bytes(std::vector<std::uint8_t>& buf, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), p, p + n);
}

inline void append_values(std::vector<std::uint8_t>& buf, std::span<const float> values, DType dtype) {
    if (dtype == DType::F32) {
        if constexpr (std::endian::native == std::endian::little) {
            append_bytes(buf, values.data(), values.size_bytes());
        } else {
            for (float v : values) append_le(buf, v);
        }
    } else {
        const std::size_t at = buf.size();
        buf.resize(at + values.size() * 2);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint16_t h = byteswap_if_big(float_to_half(values[i]));
            std::memcpy(buf.data() + at + 2 * i, &h, 2);
        }
    }
}

/// Writes to `<target>.tmp` and renames over `target` on commit().
class AtomicFile {
public:
    explicit AtomicFile(std::filesystem::path target);
    ~AtomicFile();
    AtomicFile(const AtomicFile&) = delete;
    AtomicFile& operator=(const AtomicFile&) = delete;

    void write(const void* data, std::size_t n);
    void write(const std::vector<std::uint8_t>& buf) { write(buf.data(), buf.size()); }
    void patch(std::uint64_t offset, const void* data, std::size_t n);
    void commit();

private:
    std::filesystem::path target_;
    std::filesystem::path temp_;
    std::ofstream out_;
    std::vector<char> buffer_;
    bool committed_ = false;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path);

    [[nodiscard]] std::uint64_t offset() const noexcept { return offset_; }
    [[nodiscard]] std::uint64_t size() const noexcept { return size_; }
    [[nodiscard]] std::uint64_t remaining() const noexcept { return size_ - offset_; }
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

    /// Throws Truncated when fewer than `n` bytes remain.
    void require(std::uint64_t n, const std::string& context) const;
    void read(void* dst, std::size_t n, const std::string& context);

    template <typename T>
    T read_le(const std::string& context) {
        if constexpr (std::is_same_v<T, float>) {
            return std::bit_cast<float>(read_le<std::uint32_t>(context));
        } else {
            T v{};
            read(&v, sizeof(T), context);
            return byteswap_if_big(v);
        }
    }

    void read_values(DType dtype, std::size_t count, float* dst, const std::string& context);
    void expect_header(const std::array<char, 4>& magic, const char* kind);

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::vector<char> buffer_;
    std::vector<std::uint16_t> halves_;
    std::uint64_t offset_ = 0;
    std::uint64_t size_ = 0;
};

} // namespace trim::detail
