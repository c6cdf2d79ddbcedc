#pragma once

// Schnorr-group arithmetic: prime p, prime q | p-1, generator g of the
// order-q subgroup of Z_p^*. The message space is the subgroup itself; all
// ciphertext algebra lives there. Backed by GMP.

#include <gmpxx.h>

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecsvc/crypto.hpp"

namespace ecsvc {

class GroupError : public Error {
public:
    using Error::Error;
};

struct GroupElement {
    mpz_class v;

    bool operator==(const GroupElement& o) const { return v == o.v; }
    bool operator!=(const GroupElement& o) const { return v != o.v; }
    bool operator<(const GroupElement& o) const { return v < o.v; }
};

struct Scalar {
    mpz_class v;

    bool operator==(const Scalar& o) const { return v == o.v; }
    bool operator!=(const Scalar& o) const { return v != o.v; }
};

namespace detail {

inline std::size_t byte_width(const mpz_class& n) {
    return (mpz_sizeinbase(n.get_mpz_t(), 2) + 7) / 8;
}

inline Bytes to_fixed_be(const mpz_class& n, std::size_t width) {
    Bytes out(width, 0);
    std::size_t count = 0;
    mpz_export(out.data(), &count, 1, 1, 1, 0, n.get_mpz_t());
    if (count > width) throw GroupError("value wider than encoding width");
    if (count < width && count > 0) {
        // mpz_export writes from the front; shift right for fixed width.
        std::copy_backward(out.begin(), out.begin() + count, out.begin() + width);
        std::fill(out.begin(), out.begin() + (width - count), 0);
    }
    return out;
}

inline mpz_class from_be(ByteView b) {
    mpz_class n;
    if (!b.empty()) mpz_import(n.get_mpz_t(), b.size(), 1, 1, 1, 0, b.data());
    return n;
}

inline bool probably_prime(const mpz_class& n) {
    return mpz_probab_prime_p(n.get_mpz_t(), 40) > 0;
}

}  // namespace detail

struct GroupParams {
    mpz_class p;  // prime modulus
    mpz_class q;  // prime subgroup order, q | p-1
    mpz_class g;  // generator of the order-q subgroup

    std::size_t element_bytes() const { return detail::byte_width(p); }
    std::size_t scalar_bytes() const { return detail::byte_width(q); }

    bool is_member(const GroupElement& a) const {
        if (a.v < 1 || a.v >= p) return false;
        mpz_class r;
        mpz_powm(r.get_mpz_t(), a.v.get_mpz_t(), q.get_mpz_t(), p.get_mpz_t());
        return r == 1;
    }

    GroupElement one() const { return GroupElement{1}; }
    GroupElement generator() const { return GroupElement{g}; }

    GroupElement exp(const GroupElement& base, const Scalar& e) const {
        GroupElement r;
        mpz_powm(r.v.get_mpz_t(), base.v.get_mpz_t(), e.v.get_mpz_t(), p.get_mpz_t());
        return r;
    }

    GroupElement pow_g(const Scalar& e) const { return exp(generator(), e); }

    GroupElement mul(const GroupElement& a, const GroupElement& b) const {
        GroupElement r;
        r.v = (a.v * b.v) % p;
        return r;
    }

    // a^(q-1): inverse inside the order-q subgroup, so mul(a, inv(a)) = 1.
    GroupElement inv(const GroupElement& a) const {
        Scalar e{q - 1};
        return exp(a, e);
    }

    Scalar scalar_add(const Scalar& a, const Scalar& b) const {
        return Scalar{(a.v + b.v) % q};
    }

    Scalar scalar_sub(const Scalar& a, const Scalar& b) const {
        mpz_class r = (a.v - b.v) % q;
        if (r < 0) r += q;
        return Scalar{r};
    }

    Bytes encode_element(const GroupElement& a) const {
        return detail::to_fixed_be(a.v, element_bytes());
    }

    GroupElement decode_element(ByteView b) const {
        if (b.size() != element_bytes()) throw CodecError("bad element width");
        return GroupElement{detail::from_be(b)};
    }

    Bytes encode_scalar(const Scalar& s) const {
        return detail::to_fixed_be(s.v, scalar_bytes());
    }

    Scalar decode_scalar(ByteView b) const {
        if (b.size() != scalar_bytes()) throw CodecError("bad scalar width");
        mpz_class v = detail::from_be(b);
        if (v >= q) throw CodecError("scalar out of range");
        return Scalar{v};
    }

    bool valid() const {
        if (!detail::probably_prime(p) || !detail::probably_prime(q)) return false;
        if ((p - 1) % q != 0) return false;
        if (g <= 1 || g >= p) return false;
        mpz_class r;
        mpz_powm(r.get_mpz_t(), g.get_mpz_t(), q.get_mpz_t(), p.get_mpz_t());
        return r == 1;
    }
};

// Uniform scalar in [0, q-1] by rejection sampling on q's bit width.
inline Scalar random_scalar(const GroupParams& params, Rng& rng) {
    const std::size_t bits = mpz_sizeinbase(params.q.get_mpz_t(), 2);
    const std::size_t width = (bits + 7) / 8;
    const unsigned top_mask =
        bits % 8 == 0 ? 0xffu : static_cast<unsigned>((1u << (bits % 8)) - 1);
    for (;;) {
        Bytes b = rng.bytes(width);
        b[0] &= static_cast<std::uint8_t>(top_mask);
        mpz_class v = detail::from_be(b);
        if (v < params.q) return Scalar{v};
    }
}

inline Scalar random_nonzero_scalar(const GroupParams& params, Rng& rng) {
    for (;;) {
        Scalar s = random_scalar(params, rng);
        if (s.v != 0) return s;
    }
}

// g^t for uniform t in [1, q-1]: uniform over the nonidentity subgroup members.
inline GroupElement random_element(const GroupParams& params, Rng& rng) {
    return params.pow_g(random_nonzero_scalar(params, rng));
}

// g^t for uniform t in [0, q-1]: uniform over the whole subgroup. Message
// tuples use this so products of independent draws are exactly uniform.
inline GroupElement random_subgroup_uniform(const GroupParams& params, Rng& rng) {
    return params.pow_g(random_scalar(params, rng));
}

// Digest -> Z_q, big-endian interpretation reduced mod q.
inline Scalar scalar_from_digest(const Digest& d, const GroupParams& params) {
    mpz_class v = detail::from_be(ByteView(d.data(), d.size()));
    return Scalar{v % params.q};
}

// Canonical 32-byte big-endian encoding used to key the shuffle stream.
inline Bytes scalar_key_bytes(const Scalar& s) {
    return detail::to_fixed_be(s.v, 32);
}

// Keyed permutation of {0..n-1} derived from a time-key scalar.
inline Permutation keyed_shuffle(const Scalar& omega, std::size_t n) {
    return shuffle_from_key(scalar_key_bytes(omega), n);
}

// Message tuples p_1..p_N for a trit policy (+1 required, 0 irrelevant,
// -1 unrequired): 1 at irrelevant slots, fresh uniform subgroup elements at
// unrequired slots, and uniform subgroup elements at required slots whose
// product equals M (all but the last required slot drawn, the last forced).
inline std::vector<GroupElement> split_message(const GroupElement& message,
                                               std::span<const std::int8_t> trits,
                                               const GroupParams& params, Rng& rng) {
    if (trits.empty()) throw GroupError("empty policy");
    std::vector<std::size_t> required;
    for (std::size_t i = 0; i < trits.size(); ++i) {
        if (trits[i] == 1) required.push_back(i);
        else if (trits[i] != 0 && trits[i] != -1) throw GroupError("policy trit out of range");
    }
    if (required.empty()) throw GroupError("policy has no required attribute");

    std::vector<GroupElement> tuples(trits.size(), params.one());
    GroupElement prod = params.one();
    for (std::size_t k = 0; k + 1 < required.size(); ++k) {
        auto e = random_subgroup_uniform(params, rng);
        tuples[required[k]] = e;
        prod = params.mul(prod, e);
    }
    tuples[required.back()] = params.mul(message, params.inv(prod));
    for (std::size_t i = 0; i < trits.size(); ++i) {
        if (trits[i] == -1) tuples[i] = random_subgroup_uniform(params, rng);
    }
    return tuples;
}

// --- parameter generation -------------------------------------------------

// Deterministic for a fixed seed: q is the first probable prime drawn at
// q_bits, then p = q*c + 1 for drawn even cofactors c until p is a p_bits
// probable prime; g = h^((p-1)/q) for the first drawn h with g != 1.
inline GroupParams generate_params(unsigned p_bits, unsigned q_bits, ByteView seed) {
    if (q_bits >= p_bits) throw GroupError("q_bits must be smaller than p_bits");
    if (p_bits < 512) throw GroupError("p_bits below 512; use a named test group instead");
    if (q_bits < 16) throw GroupError("q_bits too small");

    PrfStream stream(cat({seed, to_bytes(std::string("schnorr-param-gen"))}));
    auto draw_bits = [&stream](unsigned bits) {
        Bytes b = stream.next((bits + 7) / 8);
        const unsigned rem = bits % 8;
        if (rem != 0) b[0] &= static_cast<std::uint8_t>((1u << rem) - 1);
        mpz_class v = detail::from_be(b);
        mpz_setbit(v.get_mpz_t(), bits - 1);  // force exact bit length
        return v;
    };

    constexpr int kMaxAttempts = 500000;

    mpz_class q;
    for (int i = 0;; ++i) {
        if (i >= kMaxAttempts) throw GroupError("subgroup-order search exhausted");
        q = draw_bits(q_bits);
        mpz_setbit(q.get_mpz_t(), 0);
        if (detail::probably_prime(q)) break;
    }

    const unsigned c_bits = p_bits - q_bits;
    mpz_class p, c;
    for (int i = 0;; ++i) {
        if (i >= kMaxAttempts) throw GroupError("modulus search exhausted");
        c = draw_bits(c_bits);
        mpz_clrbit(c.get_mpz_t(), 0);  // even cofactor keeps p odd
        p = q * c + 1;
        if (mpz_sizeinbase(p.get_mpz_t(), 2) != p_bits) continue;
        if (detail::probably_prime(p)) break;
    }

    mpz_class exp = (p - 1) / q;
    mpz_class g;
    for (;;) {
        mpz_class h = draw_bits(std::min(p_bits - 1, 64u));
        if (h < 2) continue;
        mpz_powm(g.get_mpz_t(), h.get_mpz_t(), exp.get_mpz_t(), p.get_mpz_t());
        if (g != 1) break;
    }

    GroupParams params{p, q, g};
    if (!params.valid()) throw GroupError("generated parameters failed validation");
    return params;
}

// Named groups. "tiny" is the oracle-testing group; "scan" keeps exhaustive
// sweeps over all q time keys feasible; "big2048" was produced once with
// generate_params(2048, 256, "ecsvc-big2048-v1") and is pinned here so test
// runs do not pay the search cost.
inline GroupParams named_group(const std::string& name) {
    if (name == "tiny") {
        return GroupParams{23, 11, 4};
    }
    if (name == "scan") {
        GroupParams g;
        g.p.set_str("4000000002481cb7", 16);   // 63-bit prime, p = q*c + 1
        g.q.set_str("40003", 16);              // 262147, first prime above 2^18
        g.g.set_str("293fb0b6a056a79f", 16);   // 2^((p-1)/q) mod p
        return g;
    }
    if (name == "big2048") {
        GroupParams g;
        g.p.set_str(
            "8dfded4377fd3eed1380d88cfe1956f0ba6be7f11ec6eed8bbf0e353306cd287"
            "7f761b49a99d3044e46f50c4caeccb4416809b6785127350840bd88e281f2c64"
            "7200eccbdb7e67ee213f6106649b364eae978a2f82cce10f7966a0792807ad91"
            "ac16d1c35e49fc07163649890e56268b6e1982d27b8ea91d96b8bc1822f49f7b"
            "4766a71969de2b2b56fdd883be7ae0859b9cdfca97e45103eb9bb7b879c51d91"
            "5eadce971d0a11d653f4d5ea0221673169734e98240f8e30e0232d5386643782"
            "f1faa219cf2c980b7326829ccaff748f0489716e6ce51350398cf7ae833920ae"
            "752a78c05bcbee9c37be069b4ed43fe42079705838f089b911d5db51e6451bcf",
            16);
        g.q.set_str(
            "aaa4a6645f99a1889abbd9dc34fe0c5691ed8d6193c7a1a7fa0076710c69fcc3", 16);
        g.g.set_str(
            "7a5fd29ecaa4887029dc4ce7618dc608aab29fc455146e242ce152d488b9bf6c"
            "3292e69a99c0fe516f5033220fd02549e69f88d57508adeeadda5e0d343071ea"
            "cb7ad7f0deec8e82e00e85f5c3ebd6528688c59004d64497d439095eb41aa78e"
            "d25ed0f6f37ec06ded06d99b498166073b3ef0f55cb77dcce7a8921502279dd6"
            "042c19ac0beba7d74269fb180dfe9691105d516f2af6a000168fbf60b8f84525"
            "dda2de205154190041ed2cdd4e6a33b1f878a031eafc572fdc1e6b397c9164b3"
            "862a6d3b1e1da43e1eb09c37dce60c5ca97a32049478395bcb6a99112c5a4382"
            "2826e18ebae92dfdd290c274bfab5168ff602dab750d215f50bfb5fee1757c08",
            16);
        return g;
    }
    throw ConfigError("unknown named group: " + name);
}

inline std::string serialize_group(const GroupParams& p) {
    std::ostringstream os;
    os << "p = " << p.p.get_str(16) << "\n";
    os << "q = " << p.q.get_str(16) << "\n";
    os << "g = " << p.g.get_str(16) << "\n";
    return os.str();
}

inline GroupParams parse_group(const std::string& text) {
    GroupParams out;
    std::istringstream is(text);
    std::string line;
    bool have_p = false, have_q = false, have_g = false;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key, eq, val;
        if (!(ls >> key >> eq >> val) || eq != "=") continue;
        mpz_class v;
        if (v.set_str(val, 16) != 0) throw ConfigError("bad hex in group block: " + line);
        if (key == "p") { out.p = v; have_p = true; }
        else if (key == "q") { out.q = v; have_q = true; }
        else if (key == "g") { out.g = v; have_g = true; }
        else throw ConfigError("unknown group key: " + key);
    }
    if (!have_p || !have_q || !have_g) throw ConfigError("group block needs p, q and g");
    if (!out.valid()) throw ConfigError("group parameters failed validation");
    return out;
}

}  // namespace ecsvc
