#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecsvc {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed wire bytes, bad paddings, truncated bodies.
class CodecError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

inline Bytes to_bytes(ByteView v) { return Bytes(v.begin(), v.end()); }

inline Bytes to_bytes(const std::string& s) {
    return Bytes(s.begin(), s.end());
}

inline void append(Bytes& out, ByteView v) { out.insert(out.end(), v.begin(), v.end()); }

inline Bytes cat(std::initializer_list<ByteView> parts) {
    Bytes out;
    for (const auto& p : parts) append(out, p);
    return out;
}

inline void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(Bytes& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_u64(Bytes& out, std::uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline Bytes be16(std::uint16_t v) { Bytes b; put_u16(b, v); return b; }
inline Bytes be64(std::uint64_t v) { Bytes b; put_u64(b, v); return b; }

inline std::uint16_t get_u16(ByteView v, std::size_t off) {
    if (off + 2 > v.size()) throw CodecError("u16 read past end");
    return static_cast<std::uint16_t>((v[off] << 8) | v[off + 1]);
}

inline std::string to_hex(ByteView v) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(v.size() * 2);
    for (auto b : v) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

inline Bytes from_hex(const std::string& s) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (s.size() % 2 != 0) throw CodecError("odd-length hex string");
    Bytes out;
    out.reserve(s.size() / 2);
    for (std::size_t i = 0; i < s.size(); i += 2) {
        int hi = nibble(s[i]), lo = nibble(s[i + 1]);
        if (hi < 0 || lo < 0) throw CodecError("bad hex digit");
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

// Big-endian increment over a fixed-width byte string ("N+1" freshness arithmetic).
inline Bytes increment_be(ByteView v) {
    Bytes out(v.begin(), v.end());
    for (std::size_t i = out.size(); i-- > 0;) {
        if (++out[i] != 0) break;
    }
    return out;
}

// True if `needle` occurs as a contiguous substring of `hay`.
inline bool contains_bytes(ByteView hay, ByteView needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        if (std::memcmp(hay.data() + i, needle.data(), needle.size()) == 0) return true;
    }
    return false;
}

}  // namespace ecsvc
