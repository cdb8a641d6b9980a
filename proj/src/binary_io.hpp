#pragma once

// Little-endian byte buffers shared by the checkpoint and embedding-store
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "sharedrep/errors.hpp"
#include "sharedrep/matrix.hpp"

namespace sharedrep::detail {

template <typename U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        U r = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xFF));
        return r;
    }
    return v;
}

class ByteWriter {
public:
    void bytes(std::string_view s) { out_.append(s); }

    template <typename U>
    void uint(U v) {
        v = to_little(v);
        char buf[sizeof(U)];
        std::memcpy(buf, &v, sizeof(U));
        out_.append(buf, sizeof(U));
    }

    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

    void floats(std::span<const Scalar> values) {
        for (Scalar v : values) f32(static_cast<float>(v));
    }

    std::size_t size() const noexcept { return out_.size(); }
    std::string& str() noexcept { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    template <typename U>
    U uint() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, data_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return to_little(v);
    }

    float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

    void floats(std::span<Scalar> out) {
        for (Scalar& v : out) v = static_cast<Scalar>(f32());
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    void seek(std::size_t pos) {
        if (pos > data_.size()) throw LoadError(what_ + ": offset past end of data");
        pos_ = pos;
    }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw LoadError(what_ + ": unexpected end of data");
    }

    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace sharedrep::detail

namespace sharedrep::detail {

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t hash = 0xCBF29CE484222325ULL) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t v);

}  // namespace sharedrep::detail
