#pragma once

// The twelve-step edge-assisted authenticated key exchange: sender-ECU,
// receiver-ECU and security-agent endpoints as message-driven state machines,
// plus trust-authority provisioning.
//
// Verification failures never throw; they become Alert records and abort the
// affected exchange. Byte-identical duplicates of already-accepted messages
// are dropped with a replay alert without killing the live exchange.

#include <deque>
#include <map>
#include <optional>
#include <sstream>

#include "ecsvc/wire.hpp"

namespace ecsvc {

// --- provisioning -----------------------------------------------------------

struct EcuView {
    std::uint16_t id = 0;
    UserKeyMaterial uk;          // includes k_pair
    SymmetricKey k_group{};
    MasterPublicKey mpk;
};

// What the security agent is allowed to hold: transformation keys,
// re-encryption keys, pairwise keys, public material. By construction there
// is no field for SK_U scalars, K_group or the master secret.
struct SaView {
    MasterPublicKey mpk;
    std::vector<Scalar> tk;
    std::map<std::uint16_t, Scalar> rk;
    std::map<std::uint16_t, SymmetricKey> k_pair;
};

struct ProvisionedVehicle {
    MasterKeyMaterial ta;  // trust-authority record, never given to a node
    std::vector<EcuView> ecus;
    SaView sa;

    const EcuView& ecu(std::uint16_t id) const {
        for (const auto& e : ecus) {
            if (e.id == id) return e;
        }
        throw Error("no such ECU id");
    }
};

inline ProvisionedVehicle provision(const GroupParams& params, std::size_t n_attrs,
                                    const std::vector<std::pair<std::uint16_t, AttributeSet>>& ecu_specs,
                                    Rng& rng) {
    if (ecu_specs.empty()) throw Error("provisioning needs at least one ECU");
    ProvisionedVehicle v;
    v.ta = setup(params, n_attrs, rng);
    v.sa.mpk = v.ta.mpk;
    v.sa.tk = v.ta.tk;
    std::set<std::uint16_t> seen;
    for (const auto& [id, attrs] : ecu_specs) {
        if (!seen.insert(id).second) throw Error("duplicate ECU id");
        EcuView e;
        e.id = id;
        e.uk = keygen(v.ta, id, attrs, rng);
        e.k_group = v.ta.k_group;
        e.mpk = v.ta.mpk;
        v.sa.rk.emplace(id, e.uk.rk);
        v.sa.k_pair.emplace(id, e.uk.k_pair);
        v.ecus.push_back(std::move(e));
    }
    return v;
}

// --- alerts and cost accounting ----------------------------------------------

enum class AlertCode {
    DecodeError,
    UnknownPeer,
    StateError,
    MacFail,
    Replay,
    PaddingError,
    WrongKey,
    MutualAuthFailure,
    DuplicateAck,
    StaleExchange,
    SizeMismatch,
    Timeout,
};

inline const char* alert_code_name(AlertCode c) {
    switch (c) {
        case AlertCode::DecodeError: return "decode-error";
        case AlertCode::UnknownPeer: return "unknown-peer";
        case AlertCode::StateError: return "state-error";
        case AlertCode::MacFail: return "mac-fail";
        case AlertCode::Replay: return "replay";
        case AlertCode::PaddingError: return "padding-error";
        case AlertCode::WrongKey: return "wrong-key";
        case AlertCode::MutualAuthFailure: return "mutual-auth-failure";
        case AlertCode::DuplicateAck: return "duplicate-ack";
        case AlertCode::StaleExchange: return "stale-exchange";
        case AlertCode::SizeMismatch: return "size-mismatch";
        case AlertCode::Timeout: return "timeout";
    }
    return "?";
}

struct Alert {
    std::string session;
    int step = 0;
    AlertCode code;

    std::string csv(double time_s, int precision = 9) const {
        std::ostringstream os;
        os.precision(precision);
        os << std::fixed << time_s << "," << session << "," << step << ","
           << alert_code_name(code);
        return os.str();
    }
};

enum class AbeOp { EncryptShuffle, Transform, ExtractPd1 };

// Primitive-invocation counts for the table-driven cost model. The reference
// timings are per 48-byte input, so longer inputs count in 48-byte units.
struct CostTally {
    std::uint32_t sha = 0;
    std::uint32_t aes_enc = 0;
    std::uint32_t aes_dec = 0;
    std::vector<std::pair<AbeOp, std::uint32_t>> abe;  // op, attribute count

    static std::uint32_t units(std::size_t len) {
        return len <= 48 ? 1u : static_cast<std::uint32_t>((len + 47) / 48);
    }

    void add_sha(std::size_t input_len) { sha += units(input_len); }
    void add_aes_enc(std::size_t len) { aes_enc += units(len); }
    void add_aes_dec(std::size_t len) { aes_dec += units(len); }
    void add_abe(AbeOp op, std::size_t attrs) {
        abe.emplace_back(op, static_cast<std::uint32_t>(attrs));
    }
    void clear() { sha = aes_enc = aes_dec = 0; abe.clear(); }
};

struct Outgoing {
    WireMessage msg;
    std::uint16_t dst = 0;   // meaningful when !broadcast
    bool broadcast = false;
};

// Per-peer cache of recently seen (epoch, nonce) pairs.
class NonceCache {
public:
    bool seen_or_insert(std::uint16_t peer, ByteView epoch, ByteView nonce) {
        auto& ring = rings_[peer];
        Bytes key = cat({epoch, nonce});
        for (const auto& k : ring) {
            if (k == key) return true;
        }
        ring.push_back(std::move(key));
        if (ring.size() > kCapacity) ring.pop_front();
        return false;
    }

private:
    static constexpr std::size_t kCapacity = 64;
    std::map<std::uint16_t, std::deque<Bytes>> rings_;
};

namespace detail {

class EndpointBase {
public:
    const std::vector<Alert>& alerts() const { return alerts_; }
    std::size_t alert_count() const { return alerts_.size(); }

    CostTally take_cost() {
        CostTally out = cost_;
        cost_.clear();
        return out;
    }

protected:
    void raise(const std::string& session, int step, AlertCode code) {
        alerts_.push_back(Alert{session, step, code});
    }

    Tag tag16(const SymmetricKey& key, ByteView input) {
        cost_.add_sha(input.size());
        return mac16(key, input);
    }

    bool check16(const SymmetricKey& key, ByteView input, ByteView tag) {
        cost_.add_sha(input.size());
        Tag expect = mac16(key, input);
        return tag_equal(expect, tag);
    }

    Tag h16(ByteView input) {
        cost_.add_sha(input.size());
        return hash16(input);
    }

    SymmetricKey derive_key(const SymmetricKey& key, ByteView input) {
        cost_.add_sha(input.size());
        return key_from_digest(prf(key, input));
    }

    Bytes enc_prp(const SymmetricKey& key, ByteView pt) {
        Bytes ct = prp_encrypt(key, pt);
        cost_.add_aes_enc(ct.size());
        return ct;
    }

    std::optional<Bytes> dec_prp(const SymmetricKey& key, ByteView ct) {
        cost_.add_aes_dec(ct.size());
        try {
            return prp_decrypt(key, ct);
        } catch (const CryptoError&) {
            return std::nullopt;
        }
    }

    std::vector<Alert> alerts_;
    CostTally cost_;
};

inline Bytes id_nonce(std::uint16_t id, ByteView a, ByteView b = {}) {
    Bytes out = be16(id);
    append(out, a);
    append(out, b);
    return out;
}

}  // namespace detail

// --- sender ------------------------------------------------------------------

class SenderEndpoint : public detail::EndpointBase {
public:
    enum class State { Idle, AwaitChallenge, Collecting, Done, Aborted };

    SenderEndpoint(EcuView view, Policy policy, std::vector<std::uint16_t> expected,
                   std::uint16_t sa_id, std::uint64_t rng_seed)
        : view_(std::move(view)),
          policy_(std::move(policy)),
          expected_(std::move(expected)),
          sa_id_(sa_id),
          rng_(cat({be64(rng_seed), to_bytes(std::string("sender")), be16(view_.id)})) {}

    std::uint16_t id() const { return view_.id; }
    State state() const { return state_; }
    bool done() const { return state_ == State::Done; }
    bool aborted() const { return state_ == State::Aborted; }
    const Bytes& data_key() const { return k_; }
    const Bytes& key_envelope() const { return k_prime_; }
    const std::vector<std::uint16_t>& acked() const { return acked_; }
    std::string session() const {
        return "S" + std::to_string(view_.id) + "e" + std::to_string(epoch_idx_);
    }

    // Step 1: fresh nonce, pairwise MAC, epoch value rides along.
    std::vector<Outgoing> start(ByteView r_k) {
        if (state_ != State::Idle && state_ != State::Done && state_ != State::Aborted) {
            throw Error("sender session already started");
        }
        if (r_k.size() != kEpochBytes) throw Error("epoch value must be 8 bytes");
        ++epoch_idx_;
        state_ = State::AwaitChallenge;
        acked_.clear();
        r_k_ = to_bytes(r_k);
        n1_ = rng_.bytes(kNonceBytes);
        Tag s1 = tag16(view_.uk.k_pair, cat({be16(view_.id), n1_, r_k_}));
        WireMessage m{MsgType::Hello, view_.id, hello_body(s1, n1_, r_k_)};
        return {{std::move(m), sa_id_, false}};
    }

    std::vector<Outgoing> handle(const WireMessage& msg) {
        switch (msg.type) {
            case MsgType::Challenge: return on_challenge(msg);
            case MsgType::ReceiverAck: return on_ack(msg);
            default:
                raise(session(), step_of(msg.type), AlertCode::StateError);
                abort_session();
                return {};
        }
    }

    // Step 11 window close; emits the group list even if not all expected
    // receivers acknowledged (their absence fails them at step 12).
    std::vector<Outgoing> close_window() {
        if (state_ != State::Collecting) return {};
        return emit_group_list();
    }

    // A session left mid-exchange when traffic has drained is dead.
    void expire() {
        if (state_ == State::AwaitChallenge || state_ == State::Collecting) {
            raise(session(), state_ == State::AwaitChallenge ? 3 : 11, AlertCode::Timeout);
            state_ = State::Aborted;
        }
    }

private:
    static int step_of(MsgType t) {
        switch (t) {
            case MsgType::Challenge: return 3;
            case MsgType::ReceiverAck: return 11;
            default: return 0;
        }
    }

    void abort_session() { state_ = State::Aborted; }

    std::vector<Outgoing> on_challenge(const WireMessage& msg) {
        if (state_ != State::AwaitChallenge) {
            raise(session(), 3, AlertCode::StateError);
            abort_session();
            return {};
        }
        if (msg.sender != sa_id_) {
            raise(session(), 3, AlertCode::UnknownPeer);
            abort_session();
            return {};
        }
        ByteView body = msg.body;
        ByteView sigma2 = body.subspan(0, kTagBytes);
        ByteView n2 = body.subspan(kTagBytes, kNonceBytes);
        Bytes n1p = increment_be(n1_);
        if (!check16(view_.uk.k_pair, detail::id_nonce(view_.id, n1p, n2), sigma2)) {
            raise(session(), 3, AlertCode::MacFail);
            abort_session();
            return {};
        }

        // Step 3: time key, data key, subgroup embedding, encrypt + shuffle.
        const auto& params = view_.mpk.params;
        omega_ = time_key_gen(view_.k_group, r_k_, params);
        cost_.add_sha(r_k_.size() + kKeyBytes);
        k_ = rng_.bytes(kKeyBytes);
        k_prime_ = enc_prp(view_.k_group, k_);
        cost_.add_sha(k_prime_.size());
        GroupElement m = params.pow_g(scalar_from_digest(sha256(k_prime_), params));
        auto raw = encrypt(view_.mpk, policy_, omega_, m, rng_);
        auto sc = ecsvc::shuffle(raw, omega_);
        cost_.add_abe(AbeOp::EncryptShuffle, policy_.size());
        Bytes sc_bytes = encode_staged(sc, params);

        Bytes n2p = increment_be(n2);
        ck_s_ = derive_key(view_.uk.k_pair, detail::id_nonce(view_.id, n1p, n2p));
        Tag s3 = tag16(ck_s_, sc_bytes);
        Bytes publish = sc_bytes;
        append(publish, ByteView(s3.data(), s3.size()));

        Tag sigma_prime = tag16(view_.k_group, k_);
        Bytes kd(sigma_prime.begin(), sigma_prime.end());
        append(kd, r_k_);  // epoch tag lets receivers reject stale digests
        append(kd, k_prime_);

        state_ = State::Collecting;
        std::vector<Outgoing> out;
        out.push_back({WireMessage{MsgType::CipherPublish, view_.id, std::move(publish)},
                       sa_id_, false});
        out.push_back({WireMessage{MsgType::KeyDigest, view_.id, std::move(kd)}, 0, true});
        return out;
    }

    std::vector<Outgoing> on_ack(const WireMessage& msg) {
        if (state_ != State::Collecting) {
            raise(session(), 11, AlertCode::StateError);
            abort_session();
            return {};
        }
        ByteView body = msg.body;
        ByteView sigma8 = body.subspan(0, kTagBytes);
        ByteView c3 = body.subspan(kTagBytes, kBlockBytes);
        SymmetricKey k = key_from_bytes(k_);
        Tag expect = h16(cat({k_, c3}));
        if (!tag_equal(expect, sigma8)) {
            raise(session(), 11, AlertCode::MacFail);
            return {};  // the ack is discarded, the window stays open
        }
        auto pt = dec_prp(k, c3);
        if (!pt || pt->size() != 2) {
            raise(session(), 11, AlertCode::PaddingError);
            return {};
        }
        std::uint16_t acked_id = get_u16(*pt, 0);
        if (acked_id != msg.sender) {
            raise(session(), 11, AlertCode::UnknownPeer);
            return {};
        }
        if (std::find(acked_.begin(), acked_.end(), acked_id) != acked_.end()) {
            raise(session(), 11, AlertCode::DuplicateAck);
            return {};
        }
        acked_.push_back(acked_id);
        bool all = true;
        for (auto e : expected_) {
            if (std::find(acked_.begin(), acked_.end(), e) == acked_.end()) all = false;
        }
        if (all) return emit_group_list();
        return {};
    }

    std::vector<Outgoing> emit_group_list() {
        SymmetricKey k = key_from_bytes(k_);
        Bytes ids;
        for (auto id : acked_) put_u16(ids, id);
        Bytes c4 = enc_prp(k, ids);
        Tag s9 = h16(cat({k_, c4}));
        state_ = State::Done;
        return {{WireMessage{MsgType::GroupList, view_.id, enveloped_body(c4, s9)}, 0, true}};
    }

    EcuView view_;
    Policy policy_;
    std::vector<std::uint16_t> expected_;
    std::uint16_t sa_id_;
    DeterministicRng rng_;

    State state_ = State::Idle;
    int epoch_idx_ = 0;
    Bytes r_k_, n1_, k_, k_prime_;
    SymmetricKey ck_s_{};
    Scalar omega_;
    std::vector<std::uint16_t> acked_;
};

// --- receiver ------------------------------------------------------------------

class ReceiverEndpoint : public detail::EndpointBase {
public:
    enum class State {
        Idle,
        AwaitRequestChallenge,
        AwaitPartial,
        AwaitKeyDigest,
        AwaitGroupList,
        Ok,
        Aborted,
    };

    ReceiverEndpoint(EcuView view, std::uint16_t sa_id, std::uint64_t rng_seed)
        : view_(std::move(view)),
          sa_id_(sa_id),
          rng_(cat({be64(rng_seed), to_bytes(std::string("receiver")), be16(view_.id)})) {}

    std::uint16_t id() const { return view_.id; }
    State state() const { return state_; }
    bool mutual_auth_ok() const { return state_ == State::Ok; }
    bool terminal() const { return state_ == State::Ok || state_ == State::Aborted; }
    const Bytes& data_key() const { return k_; }
    std::string session() const {
        return "R" + std::to_string(view_.id) + ">S" + std::to_string(target_) + "e" +
               std::to_string(epoch_idx_);
    }

    // Step 5: receiver-side time key and transformed user key, then request.
    std::vector<Outgoing> start(ByteView r_k, std::uint16_t target_sender) {
        if (state_ != State::Idle && !terminal()) throw Error("receiver session in progress");
        if (r_k.size() != kEpochBytes) throw Error("epoch value must be 8 bytes");
        ++epoch_idx_;
        state_ = State::AwaitRequestChallenge;
        target_ = target_sender;
        r_k_ = to_bytes(r_k);
        const auto& params = view_.mpk.params;
        omega_ = time_key_gen(view_.k_group, r_k_, params);
        cost_.add_sha(r_k_.size() + kKeyBytes);
        ak_ = transform_user_key(omega_, view_.uk, params);
        n3_ = rng_.bytes(kNonceBytes);
        Bytes tail = {kRequestTag};
        put_u16(tail, target_);
        Tag s4 = tag16(view_.uk.k_pair, cat({be16(view_.id), n3_, r_k_, tail}));
        Bytes body(s4.begin(), s4.end());
        append(body, n3_);
        append(body, r_k_);
        append(body, tail);
        return {{WireMessage{MsgType::Request, view_.id, std::move(body)}, sa_id_, false}};
    }

    std::vector<Outgoing> handle(const WireMessage& msg) {
        switch (msg.type) {
            case MsgType::RequestChallenge: return on_request_challenge(msg);
            case MsgType::KeyDigest: return on_key_digest(msg);
            case MsgType::PartialResult: return on_partial(msg);
            case MsgType::GroupList: return on_group_list(msg);
            default:
                raise(session(), step_of(msg.type), AlertCode::StateError);
                abort_session();
                return {};
        }
    }

    // A session left mid-exchange when traffic has drained is dead.
    void expire() {
        if (terminal() || state_ == State::Idle) return;
        int step = 7;
        if (state_ == State::AwaitPartial) step = 10;
        if (state_ == State::AwaitKeyDigest) step = 10;
        if (state_ == State::AwaitGroupList) step = 12;
        raise(session(), step, AlertCode::Timeout);
        abort_session();
    }

private:
    static int step_of(MsgType t) {
        switch (t) {
            case MsgType::RequestChallenge: return 7;
            case MsgType::KeyDigest: return 9;
            case MsgType::PartialResult: return 10;
            case MsgType::GroupList: return 12;
            default: return 0;
        }
    }

    void abort_session() {
        if (state_ != State::Ok) state_ = State::Aborted;
    }

    std::vector<Outgoing> on_request_challenge(const WireMessage& msg) {
        if (state_ != State::AwaitRequestChallenge) {
            raise(session(), 7, AlertCode::StateError);
            abort_session();
            return {};
        }
        if (msg.sender != sa_id_) {
            raise(session(), 7, AlertCode::UnknownPeer);
            abort_session();
            return {};
        }
        ByteView sigma5 = ByteView(msg.body).subspan(0, kTagBytes);
        ByteView n4 = ByteView(msg.body).subspan(kTagBytes, kNonceBytes);
        Bytes n3p = increment_be(n3_);
        if (!check16(view_.uk.k_pair, detail::id_nonce(view_.id, n3p, n4), sigma5)) {
            raise(session(), 7, AlertCode::MacFail);
            abort_session();
            return {};
        }

        // Step 7: channel key, permuted credential, enveloped submission.
        Bytes n4p = increment_be(n4);
        ck_r_ = derive_key(view_.uk.k_pair, detail::id_nonce(view_.id, n3p, n4p));
        const auto& params = view_.mpk.params;
        i_hat_ = inverse_permute_attrs(view_.uk.attrs, omega_, view_.mpk.n_attrs());
        Bytes cred = encode_attr_set(i_hat_);
        Bytes ak_bytes = params.encode_scalar(ak_);
        append(cred, ak_bytes);
        Bytes c1 = enc_prp(ck_r_, cred);
        Tag s6 = h16(cat({c1, ak_bytes}));
        state_ = State::AwaitPartial;
        return {{WireMessage{MsgType::CredentialSubmit, view_.id, enveloped_body(c1, s6)},
                 sa_id_, false}};
    }

    // Key digests are broadcast and order-free: cache them per sender across
    // sessions (a node may serve several senders in turn) and consume the one
    // whose epoch matches the active session.
    std::vector<Outgoing> on_key_digest(const WireMessage& msg) {
        // digests must carry the live epoch; anything else is stale or forged
        ByteView msg_epoch = ByteView(msg.body).subspan(kTagBytes, kEpochBytes);
        if (!r_k_.empty() && !std::equal(msg_epoch.begin(), msg_epoch.end(), r_k_.begin())) {
            raise(msg.sender == target_ && !terminal() ? session()
                                                       : "N" + std::to_string(view_.id),
                  9, AlertCode::Replay);
            return {};
        }
        auto it = key_digests_.find(msg.sender);
        if (it != key_digests_.end()) {
            if (it->second == msg.body) {
                if (msg.sender == target_ && !terminal()) {
                    raise(session(), 9, AlertCode::Replay);
                }
                return {};
            }
            ByteView old_epoch = ByteView(it->second).subspan(kTagBytes, kEpochBytes);
            ByteView new_epoch = ByteView(msg.body).subspan(kTagBytes, kEpochBytes);
            if (std::equal(old_epoch.begin(), old_epoch.end(), new_epoch.begin())) {
                // conflicting digest inside one epoch: treat as an attack
                if (msg.sender == target_ && !terminal()) {
                    raise(session(), 9, AlertCode::StateError);
                    abort_session();
                }
                return {};
            }
        }
        key_digests_[msg.sender] = msg.body;
        if (msg.sender == target_ && state_ == State::AwaitKeyDigest) {
            return finish_key_recovery();
        }
        return {};
    }

    // The cached digest usable by the active session, if its epoch matches.
    const Bytes* current_key_digest() const {
        auto it = key_digests_.find(target_);
        if (it == key_digests_.end()) return nullptr;
        ByteView epoch = ByteView(it->second).subspan(kTagBytes, kEpochBytes);
        if (!std::equal(epoch.begin(), epoch.end(), r_k_.begin())) return nullptr;
        return &it->second;
    }

    std::vector<Outgoing> on_partial(const WireMessage& msg) {
        if (state_ != State::AwaitPartial) {
            raise(session(), 10, AlertCode::StateError);
            abort_session();
            return {};
        }
        if (msg.sender != sa_id_) {
            raise(session(), 10, AlertCode::UnknownPeer);
            abort_session();
            return {};
        }
        ByteView c2 = enveloped_ciphertext(msg.body);
        ByteView sigma7 = enveloped_tag(msg.body);
        auto pt = dec_prp(ck_r_, c2);
        const auto& params = view_.mpk.params;
        const std::size_t need = params.element_bytes() * (view_.mpk.n_attrs() + 1);
        if (!pt || pt->size() != need) {
            raise(session(), 10, AlertCode::PaddingError);
            abort_session();
            return {};
        }
        ByteView sc_dd_bytes = ByteView(*pt).subspan(0, params.element_bytes());
        if (!tag_equal(h16(cat({c2, sc_dd_bytes})), sigma7)) {
            raise(session(), 10, AlertCode::MacFail);
            abort_session();
            return {};
        }
        partial_ = decode_partial(*pt, view_.mpk.n_attrs(), params);
        // Step 10: finish the pipeline; pd2 is multiplication-only and is not
        // charged against the table-driven cost model.
        recovered_ = proxy_decrypt2(*partial_, view_.uk.attrs, i_hat_, params);
        if (current_key_digest() == nullptr) {
            state_ = State::AwaitKeyDigest;
            return {};
        }
        return finish_key_recovery();
    }

    std::vector<Outgoing> finish_key_recovery() {
        const auto& params = view_.mpk.params;
        ByteView kd = *current_key_digest();
        ByteView sigma_prime = kd.subspan(0, kTagBytes);
        Bytes k_prime = to_bytes(kd.subspan(kTagBytes + kEpochBytes));

        // Access-control gate: the recovered element must match the key
        // commitment g^{H(K')}.
        cost_.add_sha(k_prime.size());
        GroupElement commit = params.pow_g(scalar_from_digest(sha256(k_prime), params));
        if (!(commit == *recovered_)) {
            raise(session(), 10, AlertCode::WrongKey);
            abort_session();
            return {};
        }
        auto k = dec_prp(view_.k_group, k_prime);
        if (!k || k->size() != kKeyBytes) {
            raise(session(), 10, AlertCode::PaddingError);
            abort_session();
            return {};
        }
        if (!check16(view_.k_group, *k, sigma_prime)) {
            raise(session(), 10, AlertCode::WrongKey);
            abort_session();
            return {};
        }
        k_ = *k;

        SymmetricKey kk = key_from_bytes(k_);
        Bytes c3 = enc_prp(kk, be16(view_.id));
        Tag s8 = h16(cat({k_, c3}));
        Bytes body(s8.begin(), s8.end());
        append(body, c3);
        state_ = State::AwaitGroupList;
        return {{WireMessage{MsgType::ReceiverAck, view_.id, std::move(body)}, target_, false}};
    }

    std::vector<Outgoing> on_group_list(const WireMessage& msg) {
        if (msg.sender != target_ || terminal()) return {};  // not ours / already settled
        if (state_ != State::AwaitGroupList) {
            raise(session(), 12, AlertCode::StateError);
            abort_session();
            return {};
        }
        ByteView c4 = enveloped_ciphertext(msg.body);
        ByteView sigma9 = enveloped_tag(msg.body);
        if (!tag_equal(h16(cat({k_, c4})), sigma9)) {
            raise(session(), 12, AlertCode::MacFail);
            abort_session();
            return {};
        }
        SymmetricKey kk = key_from_bytes(k_);
        auto ids = dec_prp(kk, c4);
        if (!ids || ids->size() % 2 != 0) {
            raise(session(), 12, AlertCode::PaddingError);
            abort_session();
            return {};
        }
        for (std::size_t off = 0; off < ids->size(); off += 2) {
            if (get_u16(*ids, off) == view_.id) {
                state_ = State::Ok;  // mutual authentication confirmed
                return {};
            }
        }
        raise(session(), 12, AlertCode::MutualAuthFailure);
        abort_session();
        return {};
    }

    EcuView view_;
    std::uint16_t sa_id_;
    DeterministicRng rng_;

    State state_ = State::Idle;
    int epoch_idx_ = 0;
    std::uint16_t target_ = 0;
    Bytes r_k_, n3_, k_;
    SymmetricKey ck_r_{};
    Scalar omega_, ak_;
    AttributeSet i_hat_;
    std::map<std::uint16_t, Bytes> key_digests_;  // per-sender, across sessions
    std::optional<PartialDecryption> partial_;
    std::optional<GroupElement> recovered_;
};

// --- security agent -------------------------------------------------------------

class SaEndpoint : public detail::EndpointBase {
public:
    SaEndpoint(SaView view, std::uint16_t id, std::uint64_t rng_seed)
        : view_(std::move(view)),
          id_(id),
          rng_(cat({be64(rng_seed), to_bytes(std::string("sa")), be16(id)})) {
        record_initial_view();
    }

    std::uint16_t id() const { return id_; }

    // Everything the agent has seen or derived, for honest-but-curious audits:
    // provisioned keys, all addressed inbound bytes, all derived values.
    const Bytes& view_bytes() const { return view_bytes_; }

    // What a curious agent retains per served receiver: the submitted
    // (permuted) credential and the partial decryption it computed.
    struct AuditRecord {
        std::uint16_t receiver = 0;
        std::uint16_t target = 0;
        AttributeSet i_hat;
        Scalar ak;
        GroupElement a;   // A' of the extracted ciphertext
        GroupElement d;   // D', carries the time-key blinding
        PartialDecryption pd;
    };
    const std::vector<AuditRecord>& audit_log() const { return audit_log_; }

    std::vector<Outgoing> handle(const WireMessage& msg) {
        observe(encode(msg));
        switch (msg.type) {
            case MsgType::Hello: return on_hello(msg);
            case MsgType::CipherPublish: return on_cipher_publish(msg);
            case MsgType::Request: return on_request(msg);
            case MsgType::CredentialSubmit: return on_credential(msg);
            default:
                // Broadcasts (KeyDigest, GroupList) are not addressed to the
                // agent and everything else is a protocol violation.
                raise("SA", 0, AlertCode::StateError);
                return {};
        }
    }

private:
    enum class SenderSt { AwaitCipher, HaveCipher, Aborted };
    enum class ReceiverSt { AwaitCredential, AwaitCiphertext, Served, Aborted };

    struct SenderExchange {
        SenderSt st = SenderSt::AwaitCipher;
        Bytes epoch;
        Bytes n1, n2;
        SymmetricKey ck_s{};
        StagedCiphertext sc_transformed;
    };

    struct ReceiverExchange {
        ReceiverSt st = ReceiverSt::AwaitCredential;
        std::uint16_t target = 0;
        Bytes epoch;
        Bytes n3, n4;
        SymmetricKey ck_r{};
        AttributeSet i_hat;
        Scalar ak;
    };

    void record_initial_view() {
        for (const auto& s : view_.tk) append(view_bytes_, view_.mpk.params.encode_scalar(s));
        for (const auto& [id, s] : view_.rk) {
            append(view_bytes_, be16(id));
            append(view_bytes_, view_.mpk.params.encode_scalar(s));
        }
        for (const auto& [id, k] : view_.k_pair) {
            append(view_bytes_, be16(id));
            append(view_bytes_, ByteView(k.data(), k.size()));
        }
    }

    void observe(ByteView b) { append(view_bytes_, b); }

    std::string sender_session(std::uint16_t id) const { return "SA<S" + std::to_string(id); }
    std::string receiver_session(const ReceiverExchange& ex, std::uint16_t id) const {
        return "SA<R" + std::to_string(id) + ">S" + std::to_string(ex.target);
    }

    std::vector<Outgoing> on_hello(const WireMessage& msg) {
        auto kp = view_.k_pair.find(msg.sender);
        if (kp == view_.k_pair.end()) {
            raise("SA<S?", 2, AlertCode::UnknownPeer);
            return {};
        }
        ByteView body = msg.body;
        ByteView sigma1 = body.subspan(0, kTagBytes);
        ByteView n1 = body.subspan(kTagBytes, kNonceBytes);
        ByteView r_k = body.subspan(kTagBytes + kNonceBytes, kEpochBytes);
        const std::string ses = sender_session(msg.sender);
        if (!check16(kp->second, detail::id_nonce(msg.sender, n1, r_k), sigma1)) {
            raise(ses, 2, AlertCode::MacFail);
            abort_sender(msg.sender);
            return {};
        }
        if (nonces_.seen_or_insert(msg.sender, r_k, n1)) {
            raise(ses, 2, AlertCode::Replay);
            return {};
        }
        auto it = senders_.find(msg.sender);
        if (it != senders_.end() && it->second.epoch == to_bytes(r_k) &&
            it->second.st != SenderSt::Aborted) {
            raise(ses, 2, AlertCode::StateError);
            abort_sender(msg.sender);
            return {};
        }

        SenderExchange ex;
        ex.epoch = to_bytes(r_k);
        ex.n1 = to_bytes(n1);
        ex.n2 = rng_.bytes(kNonceBytes);
        Bytes n1p = increment_be(ex.n1);
        Tag s2 = tag16(kp->second, detail::id_nonce(msg.sender, n1p, ex.n2));
        ex.ck_s = derive_key(kp->second, detail::id_nonce(msg.sender, n1p, increment_be(ex.n2)));
        observe(ByteView(ex.ck_s.data(), ex.ck_s.size()));
        WireMessage out{MsgType::Challenge, id_, challenge_body(s2, ex.n2)};
        senders_[msg.sender] = std::move(ex);
        return {{std::move(out), msg.sender, false}};
    }

    std::vector<Outgoing> on_cipher_publish(const WireMessage& msg) {
        auto it = senders_.find(msg.sender);
        const std::string ses = sender_session(msg.sender);
        if (it == senders_.end()) {
            raise(ses, 4, AlertCode::UnknownPeer);
            return {};
        }
        SenderExchange& ex = it->second;
        if (ex.st == SenderSt::Aborted) {
            raise(ses, 4, AlertCode::StaleExchange);
            return {};
        }
        if (ex.st == SenderSt::HaveCipher) {
            raise(ses, 4, AlertCode::StateError);
            abort_sender(msg.sender);
            return {};
        }
        const auto& params = view_.mpk.params;
        const std::size_t sc_len = msg.body.size() - kTagBytes;
        ByteView sc_bytes = ByteView(msg.body).subspan(0, sc_len);
        ByteView sigma3 = ByteView(msg.body).subspan(sc_len, kTagBytes);
        if (!check16(ex.ck_s, sc_bytes, sigma3)) {
            raise(ses, 4, AlertCode::MacFail);
            abort_sender(msg.sender);
            return {};
        }
        StagedCiphertext sc;
        try {
            sc = decode_staged(sc_bytes, view_.mpk.n_attrs(), params);
        } catch (const CodecError&) {
            raise(ses, 4, AlertCode::DecodeError);
            abort_sender(msg.sender);
            return {};
        }
        if (sc.stage != CipherStage::Shuffled) {
            raise(ses, 4, AlertCode::StateError);
            abort_sender(msg.sender);
            return {};
        }
        ex.sc_transformed = transform_ciphertext(sc, view_.tk, params);
        cost_.add_abe(AbeOp::Transform, view_.mpk.n_attrs());
        observe(encode_staged(ex.sc_transformed, params));
        ex.st = SenderSt::HaveCipher;

        // serve any receivers that submitted credentials before the ciphertext
        std::vector<Outgoing> out;
        for (auto& [rid, rex] : receivers_) {
            if (rex.st == ReceiverSt::AwaitCiphertext && rex.target == msg.sender) {
                auto served = serve_partial(rid, rex);
                out.insert(out.end(), served.begin(), served.end());
            }
        }
        return out;
    }

    std::vector<Outgoing> on_request(const WireMessage& msg) {
        auto kp = view_.k_pair.find(msg.sender);
        if (kp == view_.k_pair.end()) {
            raise("SA<R?", 6, AlertCode::UnknownPeer);
            return {};
        }
        ByteView body = msg.body;
        ByteView sigma4 = body.subspan(0, kTagBytes);
        ByteView n3 = body.subspan(kTagBytes, kNonceBytes);
        ByteView r_k = body.subspan(kTagBytes + kNonceBytes, kEpochBytes);
        ByteView tail = body.subspan(kTagBytes + kNonceBytes + kEpochBytes, 3);
        std::uint16_t target = get_u16(tail, 1);
        ReceiverExchange probe;
        probe.target = target;
        const std::string ses = receiver_session(probe, msg.sender);
        if (!check16(kp->second, detail::id_nonce(msg.sender, cat({n3, r_k, tail})), sigma4)) {
            raise(ses, 6, AlertCode::MacFail);
            abort_receiver(msg.sender);
            return {};
        }
        if (nonces_.seen_or_insert(msg.sender, r_k, n3)) {
            raise(ses, 6, AlertCode::Replay);
            return {};
        }
        auto it = receivers_.find(msg.sender);
        if (it != receivers_.end() && it->second.epoch == to_bytes(r_k) &&
            it->second.target == target && it->second.st != ReceiverSt::Aborted) {
            raise(ses, 6, AlertCode::StateError);
            abort_receiver(msg.sender);
            return {};
        }

        ReceiverExchange ex;
        ex.target = target;
        ex.epoch = to_bytes(r_k);
        ex.n3 = to_bytes(n3);
        ex.n4 = rng_.bytes(kNonceBytes);
        Bytes n3p = increment_be(ex.n3);
        Tag s5 = tag16(kp->second, detail::id_nonce(msg.sender, n3p, ex.n4));
        ex.ck_r = derive_key(kp->second, detail::id_nonce(msg.sender, n3p, increment_be(ex.n4)));
        observe(ByteView(ex.ck_r.data(), ex.ck_r.size()));
        WireMessage out{MsgType::RequestChallenge, id_, challenge_body(s5, ex.n4)};
        receivers_[msg.sender] = std::move(ex);
        return {{std::move(out), msg.sender, false}};
    }

    std::vector<Outgoing> on_credential(const WireMessage& msg) {
        auto it = receivers_.find(msg.sender);
        if (it == receivers_.end()) {
            raise("SA<R?", 8, AlertCode::UnknownPeer);
            return {};
        }
        ReceiverExchange& ex = it->second;
        const std::string ses = receiver_session(ex, msg.sender);
        if (ex.st == ReceiverSt::Aborted) {
            raise(ses, 8, AlertCode::StaleExchange);
            return {};
        }
        if (ex.st != ReceiverSt::AwaitCredential) {
            raise(ses, 8, AlertCode::StateError);
            abort_receiver(msg.sender);
            return {};
        }
        ByteView c1 = enveloped_ciphertext(msg.body);
        ByteView sigma6 = enveloped_tag(msg.body);
        auto pt = dec_prp(ex.ck_r, c1);
        if (!pt) {
            raise(ses, 8, AlertCode::PaddingError);
            abort_receiver(msg.sender);
            return {};
        }
        const auto& params = view_.mpk.params;
        AttributeSet i_hat;
        Scalar ak;
        try {
            std::size_t off = 0;
            i_hat = decode_attr_set(*pt, off);
            if (pt->size() - off != params.scalar_bytes()) throw CodecError("credential tail");
            ak = params.decode_scalar(ByteView(*pt).subspan(off));
            i_hat.validate(view_.mpk.n_attrs());
            if (i_hat.empty()) throw CodecError("empty credential");
        } catch (const Error&) {
            raise(ses, 8, AlertCode::DecodeError);
            abort_receiver(msg.sender);
            return {};
        }
        Bytes ak_bytes = params.encode_scalar(ak);
        if (!tag_equal(h16(cat({c1, ak_bytes})), sigma6)) {
            raise(ses, 8, AlertCode::MacFail);
            abort_receiver(msg.sender);
            return {};
        }
        observe(*pt);
        ex.i_hat = i_hat;
        ex.ak = ak;

        auto sit = senders_.find(ex.target);
        if (sit == senders_.end() || sit->second.st != SenderSt::HaveCipher) {
            // credentials arrived before the ciphertext; park the exchange
            ex.st = ReceiverSt::AwaitCiphertext;
            return {};
        }
        return serve_partial(msg.sender, ex);
    }

    std::vector<Outgoing> serve_partial(std::uint16_t rid, ReceiverExchange& ex) {
        const auto& params = view_.mpk.params;
        const std::string ses = receiver_session(ex, rid);
        auto rk = view_.rk.find(rid);
        if (rk == view_.rk.end()) {
            raise(ses, 8, AlertCode::UnknownPeer);
            abort_receiver(rid);
            return {};
        }
        const SenderExchange& sx = senders_.at(ex.target);
        auto ec = extract(sx.sc_transformed, ex.i_hat, params);
        auto pd = proxy_decrypt1(ec, ex.ak, rk->second, view_.tk, params);
        cost_.add_abe(AbeOp::ExtractPd1, ex.i_hat.size());
        Bytes pd_bytes = encode_partial(pd, params);
        observe(pd_bytes);
        audit_log_.push_back(AuditRecord{rid, ex.target, ex.i_hat, ex.ak, ec.a, ec.d, pd});
        Bytes c2 = enc_prp(ex.ck_r, pd_bytes);
        Tag s7 = h16(cat({c2, params.encode_element(pd.sc_dd)}));
        ex.st = ReceiverSt::Served;
        return {{WireMessage{MsgType::PartialResult, id_, enveloped_body(c2, s7)}, rid, false}};
    }

    void abort_sender(std::uint16_t id) {
        auto it = senders_.find(id);
        if (it != senders_.end()) it->second.st = SenderSt::Aborted;
        else senders_[id].st = SenderSt::Aborted;
    }

    void abort_receiver(std::uint16_t id) {
        auto it = receivers_.find(id);
        if (it != receivers_.end()) it->second.st = ReceiverSt::Aborted;
        else receivers_[id].st = ReceiverSt::Aborted;
    }

    SaView view_;
    std::uint16_t id_;
    DeterministicRng rng_;
    NonceCache nonces_;
    std::map<std::uint16_t, SenderExchange> senders_;
    std::map<std::uint16_t, ReceiverExchange> receivers_;
    Bytes view_bytes_;
    std::vector<AuditRecord> audit_log_;
};

}  // namespace ecsvc
