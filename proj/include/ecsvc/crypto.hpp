#pragma once

// Symmetric primitives: SHA-256 / HMAC-SHA256 as the PRF, AES-128 in a
// deterministic zero-IV chained mode as the PRP, a PRF-keyed byte stream,
// and the keyed Fisher-Yates permutation built on it.
//
// NOT production crypto: arithmetic is not constant-time and the PRP mode is
// deliberately deterministic so byte-exact traces can be tested. Every payload
// the protocol encrypts is keyed by a fresh session key.

#include <array>
#include <cstdint>
#include <memory>
#include <numeric>

#include <openssl/aes.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/sha.h>

#include "ecsvc/bytes.hpp"

namespace ecsvc {

inline constexpr std::size_t kKeyBytes = 16;
inline constexpr std::size_t kDigestBytes = 32;
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kBlockBytes = 16;

using SymmetricKey = std::array<std::uint8_t, kKeyBytes>;
using Digest = std::array<std::uint8_t, kDigestBytes>;
using Tag = std::array<std::uint8_t, kTagBytes>;

class CryptoError : public Error {
public:
    using Error::Error;
};

inline Digest sha256(ByteView input) {
    Digest d;
    SHA256(input.data(), input.size(), d.data());
    return d;
}

// Keyed digest: HMAC-SHA256. `key` may be any length (PrfStream keys scalars
// wider than 16 bytes); protocol-level keys are always SymmetricKey.
inline Digest hmac_sha256(ByteView key, ByteView input) {
    Digest d;
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), input.data(),
              input.size(), d.data(), &len) ||
        len != kDigestBytes) {
        throw CryptoError("HMAC failure");
    }
    return d;
}

inline Digest prf(const SymmetricKey& key, ByteView input) { return hmac_sha256(key, input); }

inline Tag truncate16(const Digest& d) {
    Tag t;
    std::copy(d.begin(), d.begin() + kTagBytes, t.begin());
    return t;
}

// 16-byte truncated MAC used as the per-message authentication tag.
inline Tag mac16(const SymmetricKey& key, ByteView input) { return truncate16(prf(key, input)); }

// 16-byte truncation of the unkeyed digest (sigma_6..sigma_9 style tags whose
// binding secret is inside the hash input).
inline Tag hash16(ByteView input) { return truncate16(sha256(input)); }

inline bool tag_equal(const Tag& a, ByteView b) {
    return b.size() == kTagBytes && std::equal(a.begin(), a.end(), b.begin());
}

inline SymmetricKey key_from_digest(const Digest& d) {
    SymmetricKey k;
    std::copy(d.begin(), d.begin() + kKeyBytes, k.begin());
    return k;
}

inline SymmetricKey key_from_bytes(ByteView v) {
    if (v.size() != kKeyBytes) throw CryptoError("key must be 16 bytes");
    SymmetricKey k;
    std::copy(v.begin(), v.end(), k.begin());
    return k;
}

namespace detail {

inline void aes_cbc_zero_iv(const SymmetricKey& key, ByteView in, Bytes& out, bool enc) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) throw CryptoError("cipher ctx alloc");
    static const std::uint8_t zero_iv[kBlockBytes] = {0};
    int ok = EVP_CipherInit_ex(ctx, EVP_aes_128_cbc(), nullptr, key.data(), zero_iv, enc ? 1 : 0);
    if (ok) ok = EVP_CIPHER_CTX_set_padding(ctx, 0);
    int n1 = 0, n2 = 0;
    out.resize(in.size() + kBlockBytes);
    if (ok) ok = EVP_CipherUpdate(ctx, out.data(), &n1, in.data(), static_cast<int>(in.size()));
    if (ok) ok = EVP_CipherFinal_ex(ctx, out.data() + n1, &n2);
    EVP_CIPHER_CTX_free(ctx);
    if (!ok) throw CryptoError("AES-CBC failure");
    out.resize(static_cast<std::size_t>(n1 + n2));
}

}  // namespace detail

// PRP over arbitrary-length inputs: AES-128, zero-IV block chaining, padding
// rule 0x80 then zeros to the next 16-byte boundary. Always appends at least
// one padding byte, so ciphertext length = 16 * (floor(len/16) + 1).
inline Bytes prp_encrypt(const SymmetricKey& key, ByteView plaintext) {
    Bytes padded(plaintext.begin(), plaintext.end());
    padded.push_back(0x80);
    while (padded.size() % kBlockBytes != 0) padded.push_back(0x00);
    Bytes out;
    detail::aes_cbc_zero_iv(key, padded, out, true);
    return out;
}

inline Bytes prp_decrypt(const SymmetricKey& key, ByteView ciphertext) {
    if (ciphertext.empty() || ciphertext.size() % kBlockBytes != 0) {
        throw CryptoError("PRP ciphertext length must be a positive multiple of 16");
    }
    Bytes padded;
    detail::aes_cbc_zero_iv(key, ciphertext, padded, false);
    std::size_t i = padded.size();
    while (i > 0 && padded[i - 1] == 0x00) --i;
    if (i == 0 || padded[i - 1] != 0x80 || padded.size() - i >= kBlockBytes) {
        throw CryptoError("PRP padding malformed");
    }
    padded.resize(i - 1);
    return padded;
}

// Deterministic byte stream: block k = HMAC-SHA256(key, BE64(k)). Used for
// the keyed shuffle and for all reproducible randomness in tests/simulations.
class PrfStream {
public:
    explicit PrfStream(Bytes key) : key_(std::move(key)) {}

    void fill(std::uint8_t* out, std::size_t n) {
        while (n > 0) {
            if (pos_ == buf_.size()) refill();
            std::size_t take = std::min(n, buf_.size() - pos_);
            std::memcpy(out, buf_.data() + pos_, take);
            pos_ += take;
            out += take;
            n -= take;
        }
    }

    Bytes next(std::size_t n) {
        Bytes out(n);
        fill(out.data(), n);
        return out;
    }

    std::uint64_t next_u64() {
        std::uint8_t b[8];
        fill(b, 8);
        std::uint64_t v = 0;
        for (auto x : b) v = (v << 8) | x;
        return v;
    }

    // Unbiased uniform draw in [0, n) by rejection sampling.
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw Error("uniform_below(0)");
        if (n == 1) return 0;
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        for (;;) {
            std::uint64_t v = next_u64();
            if (v < limit) return v % n;
        }
    }

private:
    void refill() {
        Digest d = hmac_sha256(key_, be64(counter_++));
        buf_.assign(d.begin(), d.end());
        pos_ = 0;
    }

    Bytes key_;
    Bytes buf_;
    std::size_t pos_ = 0;
    std::uint64_t counter_ = 0;
};

// Randomness source. Everything in this library is deliberately deterministic
// given a seed; a deployment would substitute a CSPRNG behind this interface.
class Rng {
public:
    virtual ~Rng() = default;
    virtual void fill(std::uint8_t* out, std::size_t n) = 0;

    Bytes bytes(std::size_t n) {
        Bytes out(n);
        fill(out.data(), n);
        return out;
    }

    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw Error("uniform_below(0)");
        if (n == 1) return 0;
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        for (;;) {
            std::uint8_t b[8];
            fill(b, 8);
            std::uint64_t v = 0;
            for (auto x : b) v = (v << 8) | x;
            if (v < limit) return v % n;
        }
    }
};

class DeterministicRng : public Rng {
public:
    explicit DeterministicRng(Bytes seed) : stream_(std::move(seed)) {}
    explicit DeterministicRng(std::uint64_t seed) : stream_(be64(seed)) {}

    void fill(std::uint8_t* out, std::size_t n) override { stream_.fill(out, n); }

private:
    PrfStream stream_;
};

// Bijective map over {0..n-1} with both directions materialized.
struct Permutation {
    std::vector<std::uint32_t> fwd;
    std::vector<std::uint32_t> inv;

    std::size_t size() const { return fwd.size(); }
    std::uint32_t forward(std::uint32_t i) const { return fwd.at(i); }
    std::uint32_t inverse(std::uint32_t i) const { return inv.at(i); }
};

// Fisher-Yates permutation of {0..n-1} with swap indices drawn from a
// PRF-keyed stream. Deterministic per key.
inline Permutation shuffle_from_key(ByteView key, std::size_t n) {
    if (n == 0) throw Error("shuffle over empty index set");
    Permutation p;
    p.fwd.resize(n);
    std::iota(p.fwd.begin(), p.fwd.end(), 0u);
    PrfStream stream(to_bytes(key));
    for (std::size_t i = n - 1; i > 0; --i) {
        std::size_t j = stream.uniform_below(i + 1);
        std::swap(p.fwd[i], p.fwd[j]);
    }
    p.inv.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) p.inv[p.fwd[i]] = i;
    return p;
}

}  // namespace ecsvc
