#pragma once

// Hidden-policy attribute-based encryption with proxy-assisted decryption.
// Ten algorithms: setup, keygen, time_key_gen, transform_user_key, encrypt,
// shuffle, transform_ciphertext, extract, proxy_decrypt1, proxy_decrypt2.
//
// Key algebra: the authority fixes K_S and per-attribute splits a_i + s_i = K_S;
// a user's per-attribute keys a_{u,i} + s_{u,i} = K_S give the proxy the
// cancellation A^{AK+RK} = A^{|I_r| K_S + omega} without ever learning omega.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "ecsvc/group.hpp"

namespace ecsvc {

class AbeError : public Error {
public:
    using Error::Error;
};

class StageError : public AbeError {
public:
    using AbeError::AbeError;
};

enum class Trit : std::int8_t { Unrequired = -1, Irrelevant = 0, Required = 1 };

struct Policy {
    std::vector<std::int8_t> trits;  // +1 required, 0 irrelevant, -1 unrequired

    std::size_t size() const { return trits.size(); }

    std::size_t required_count() const {
        return static_cast<std::size_t>(std::count(trits.begin(), trits.end(), 1));
    }

    void validate(std::size_t n_attrs) const {
        if (trits.size() != n_attrs) throw AbeError("policy length != system attribute count");
        if (required_count() == 0) throw AbeError("policy has no required attribute");
        for (auto t : trits) {
            if (t < -1 || t > 1) throw AbeError("policy trit out of range");
        }
    }
};

// Sorted, duplicate-free attribute indices (0-based).
struct AttributeSet {
    std::vector<std::uint32_t> indices;

    AttributeSet() = default;
    explicit AttributeSet(std::vector<std::uint32_t> idx) : indices(std::move(idx)) {
        std::sort(indices.begin(), indices.end());
        auto last = std::unique(indices.begin(), indices.end());
        if (last != indices.end()) throw AbeError("duplicate attribute index");
    }

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }

    bool contains(std::uint32_t i) const {
        return std::binary_search(indices.begin(), indices.end(), i);
    }

    void validate(std::size_t n_attrs) const {
        for (auto i : indices) {
            if (i >= n_attrs) throw AbeError("attribute index out of range");
        }
    }

    bool operator==(const AttributeSet& o) const { return indices == o.indices; }
    bool operator<(const AttributeSet& o) const { return indices < o.indices; }
};

struct MasterPublicKey {
    GroupParams params;
    std::vector<GroupElement> pk_attrs;  // PK_i = g^{a_i}

    std::size_t n_attrs() const { return pk_attrs.size(); }
};

struct MasterKeyMaterial {
    MasterPublicKey mpk;
    Scalar k_s;                  // master secret
    std::vector<Scalar> tk;      // transformation keys s_i with a_i + s_i = K_S
    SymmetricKey k_group;

    const GroupParams& params() const { return mpk.params; }
    std::size_t n_attrs() const { return mpk.n_attrs(); }
};

struct UserKeyMaterial {
    std::uint16_t id = 0;
    AttributeSet attrs;
    std::map<std::uint32_t, Scalar> sk;  // i -> a_{u,i}
    Scalar rk;                           // sum of s_{u,i}
    SymmetricKey k_pair;                 // pairwise key with the SA
};

enum class CipherStage : std::uint8_t { Raw = 0, Shuffled = 1, Transformed = 2 };

struct StagedCiphertext {
    CipherStage stage = CipherStage::Raw;
    GroupElement a;               // g^{r}
    std::vector<GroupElement> b;  // per-attribute tuples
    GroupElement d;               // (g^{r})^{omega}
};

struct ExtractedCiphertext {
    GroupElement a;
    GroupElement b_prod;
    GroupElement d;
};

struct PartialDecryption {
    GroupElement sc_dd;             // blinded product, still carries omega
    std::vector<GroupElement> am;   // A^{s_i} for every system attribute
};

inline MasterKeyMaterial setup(const GroupParams& params, std::size_t n_attrs, Rng& rng) {
    if (n_attrs == 0) throw AbeError("system needs at least one attribute");
    MasterKeyMaterial mk;
    mk.mpk.params = params;
    mk.k_s = random_scalar(params, rng);
    mk.mpk.pk_attrs.reserve(n_attrs);
    mk.tk.reserve(n_attrs);
    for (std::size_t i = 0; i < n_attrs; ++i) {
        Scalar a = random_nonzero_scalar(params, rng);
        mk.mpk.pk_attrs.push_back(params.pow_g(a));
        mk.tk.push_back(params.scalar_sub(mk.k_s, a));
    }
    auto kg = rng.bytes(kKeyBytes);
    mk.k_group = key_from_bytes(kg);
    return mk;
}

inline UserKeyMaterial keygen(const MasterKeyMaterial& mk, std::uint16_t id,
                              const AttributeSet& attrs, Rng& rng) {
    if (attrs.empty()) throw AbeError("empty attribute set");
    attrs.validate(mk.n_attrs());
    const auto& params = mk.params();
    UserKeyMaterial uk;
    uk.id = id;
    uk.attrs = attrs;
    Scalar rk{0};
    for (auto i : attrs.indices) {
        Scalar a = random_scalar(params, rng);
        uk.sk.emplace(i, a);
        rk = params.scalar_add(rk, params.scalar_sub(mk.k_s, a));
    }
    uk.rk = rk;
    uk.k_pair = key_from_bytes(rng.bytes(kKeyBytes));
    return uk;
}

// omega_k = H(r_k || K_group) reduced into Z_q.
inline Scalar time_key_gen(const SymmetricKey& k_group, ByteView r_k,
                           const GroupParams& params) {
    Bytes input = cat({r_k, ByteView(k_group.data(), k_group.size())});
    return scalar_from_digest(sha256(input), params);
}

// AK = sum of the user's attribute keys plus the time key.
inline Scalar transform_user_key(const Scalar& omega, const UserKeyMaterial& uk,
                                 const GroupParams& params) {
    Scalar ak = omega;
    for (const auto& [i, a] : uk.sk) ak = params.scalar_add(ak, a);
    return ak;
}

// Deterministic core shared by encrypt() and the worked-example tests:
// tuples and r are supplied instead of drawn.
inline StagedCiphertext encrypt_with(const MasterPublicKey& mpk, const Scalar& omega,
                                     const std::vector<GroupElement>& tuples,
                                     const Scalar& r) {
    if (tuples.size() != mpk.n_attrs()) throw AbeError("tuple count != attribute count");
    const auto& params = mpk.params;
    StagedCiphertext c;
    c.stage = CipherStage::Raw;
    c.a = params.pow_g(r);
    c.b.reserve(tuples.size());
    for (std::size_t i = 0; i < tuples.size(); ++i) {
        c.b.push_back(params.mul(tuples[i], params.exp(mpk.pk_attrs[i], r)));
    }
    c.d = params.exp(c.a, omega);
    return c;
}

inline StagedCiphertext encrypt(const MasterPublicKey& mpk, const Policy& policy,
                                const Scalar& omega, const GroupElement& message, Rng& rng) {
    policy.validate(mpk.n_attrs());
    auto tuples = split_message(message, policy.trits, mpk.params, rng);
    Scalar r = random_scalar(mpk.params, rng);
    return encrypt_with(mpk, omega, tuples, r);
}

inline StagedCiphertext shuffle(const StagedCiphertext& c, const Scalar& omega) {
    if (c.stage != CipherStage::Raw) throw StageError("shuffle expects a raw ciphertext");
    Permutation perm = keyed_shuffle(omega, c.b.size());
    StagedCiphertext out;
    out.stage = CipherStage::Shuffled;
    out.a = c.a;
    out.d = c.d;
    out.b.resize(c.b.size());
    for (std::uint32_t i = 0; i < c.b.size(); ++i) {
        out.b[i] = c.b[perm.forward(i)];
    }
    return out;
}

inline StagedCiphertext transform_ciphertext(const StagedCiphertext& sc,
                                             const std::vector<Scalar>& tk,
                                             const GroupParams& params) {
    if (sc.stage != CipherStage::Shuffled) {
        throw StageError("transform expects a shuffled ciphertext");
    }
    if (tk.size() != sc.b.size()) throw AbeError("transformation key count mismatch");
    StagedCiphertext out;
    out.stage = CipherStage::Transformed;
    out.a = sc.a;
    out.d = sc.d;
    out.b.resize(sc.b.size());
    for (std::size_t i = 0; i < sc.b.size(); ++i) {
        out.b[i] = params.mul(sc.b[i], params.exp(sc.a, tk[i]));
    }
    return out;
}

inline ExtractedCiphertext extract(const StagedCiphertext& sc2, const AttributeSet& i_hat,
                                   const GroupParams& params) {
    if (sc2.stage != CipherStage::Transformed) {
        throw StageError("extract expects a transformed ciphertext");
    }
    if (i_hat.empty()) throw AbeError("empty extraction index set");
    i_hat.validate(sc2.b.size());
    ExtractedCiphertext out;
    out.a = sc2.a;
    out.d = sc2.d;
    out.b_prod = params.one();
    for (auto i : i_hat.indices) out.b_prod = params.mul(out.b_prod, sc2.b[i]);
    return out;
}

inline PartialDecryption proxy_decrypt1(const ExtractedCiphertext& ec, const Scalar& ak,
                                        const Scalar& rk, const std::vector<Scalar>& tk,
                                        const GroupParams& params) {
    PartialDecryption pd;
    Scalar ak_rk = params.scalar_add(ak, rk);
    pd.sc_dd = params.mul(params.mul(ec.d, ec.b_prod), params.inv(params.exp(ec.a, ak_rk)));
    pd.am.reserve(tk.size());
    for (const auto& s : tk) pd.am.push_back(params.exp(ec.a, s));
    return pd;
}

inline GroupElement proxy_decrypt2(const PartialDecryption& pd, const AttributeSet& i_r,
                                   const AttributeSet& i_hat, const GroupParams& params) {
    if (i_r.size() != i_hat.size()) throw AbeError("index set size mismatch");
    i_r.validate(pd.am.size());
    i_hat.validate(pd.am.size());
    GroupElement num = params.one();
    for (auto i : i_r.indices) num = params.mul(num, pd.am[i]);
    GroupElement den = params.one();
    for (auto i : i_hat.indices) den = params.mul(den, pd.am[i]);
    return params.mul(pd.sc_dd, params.mul(num, params.inv(den)));
}

inline bool satisfies(const Policy& policy, const AttributeSet& holder) {
    for (std::size_t i = 0; i < policy.trits.size(); ++i) {
        auto idx = static_cast<std::uint32_t>(i);
        if (policy.trits[i] == 1 && !holder.contains(idx)) return false;
        if (policy.trits[i] == -1 && holder.contains(idx)) return false;
    }
    return true;
}

inline AttributeSet inverse_permute_attrs(const AttributeSet& i_r, const Scalar& omega,
                                          std::size_t n) {
    i_r.validate(n);
    Permutation perm = keyed_shuffle(omega, n);
    std::vector<std::uint32_t> out;
    out.reserve(i_r.size());
    for (auto i : i_r.indices) out.push_back(perm.inverse(i));
    return AttributeSet(std::move(out));
}

// --- wire encodings ---------------------------------------------------------

inline Bytes encode_staged(const StagedCiphertext& c, const GroupParams& params) {
    Bytes out;
    out.push_back(static_cast<std::uint8_t>(c.stage));
    append(out, params.encode_element(c.a));
    for (const auto& b : c.b) append(out, params.encode_element(b));
    append(out, params.encode_element(c.d));
    return out;
}

inline StagedCiphertext decode_staged(ByteView bytes, std::size_t n_attrs,
                                      const GroupParams& params) {
    const std::size_t w = params.element_bytes();
    if (bytes.size() != 1 + w * (n_attrs + 2)) throw CodecError("bad staged-ciphertext length");
    if (bytes[0] > 2) throw CodecError("bad ciphertext stage tag");
    StagedCiphertext c;
    c.stage = static_cast<CipherStage>(bytes[0]);
    std::size_t off = 1;
    auto take = [&]() {
        GroupElement e = params.decode_element(bytes.subspan(off, w));
        off += w;
        return e;
    };
    c.a = take();
    c.b.reserve(n_attrs);
    for (std::size_t i = 0; i < n_attrs; ++i) c.b.push_back(take());
    c.d = take();
    return c;
}

inline Bytes encode_partial(const PartialDecryption& pd, const GroupParams& params) {
    Bytes out = params.encode_element(pd.sc_dd);
    for (const auto& e : pd.am) append(out, params.encode_element(e));
    return out;
}

inline PartialDecryption decode_partial(ByteView bytes, std::size_t n_attrs,
                                        const GroupParams& params) {
    const std::size_t w = params.element_bytes();
    if (bytes.size() != w * (n_attrs + 1)) throw CodecError("bad partial-decryption length");
    PartialDecryption pd;
    pd.sc_dd = params.decode_element(bytes.subspan(0, w));
    for (std::size_t i = 0; i < n_attrs; ++i) {
        pd.am.push_back(params.decode_element(bytes.subspan(w * (i + 1), w)));
    }
    return pd;
}

inline Bytes encode_attr_set(const AttributeSet& s) {
    Bytes out;
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    for (auto i : s.indices) put_u16(out, static_cast<std::uint16_t>(i));
    return out;
}

inline AttributeSet decode_attr_set(ByteView bytes, std::size_t& off) {
    std::uint16_t count = get_u16(bytes, off);
    off += 2;
    std::vector<std::uint32_t> idx;
    idx.reserve(count);
    for (std::uint16_t k = 0; k < count; ++k) {
        idx.push_back(get_u16(bytes, off));
        off += 2;
    }
    return AttributeSet(std::move(idx));
}

}  // namespace ecsvc
