#pragma once

// Direct-drive protocol harness: provisions a fleet, pumps messages between
// endpoints with no timing model, records transcripts, applies scripted
// interference (bit-flips, stale replays, premature injections), and runs the
// honest-but-curious agent audit. Used by the attack CLI and the test suites.

#include <functional>
#include <memory>

#include "ecsvc/protocol.hpp"

namespace ecsvc {

struct FleetSpec {
    GroupParams params;
    std::size_t n_attrs = 0;
    std::uint16_t sa_id = 1;

    struct Sender {
        std::uint16_t id;
        Policy policy;
        std::vector<std::uint16_t> receivers;  // expected ack set
    };
    struct Receiver {
        std::uint16_t id;
        AttributeSet attrs;
        std::vector<std::uint16_t> targets;  // senders to fetch keys from, in order
    };

    std::vector<Sender> senders;
    std::vector<Receiver> receivers;
    std::uint64_t seed = 0;
};

class Fleet {
public:
    explicit Fleet(const FleetSpec& spec) : spec_(spec) {
        DeterministicRng rng(cat({be64(spec.seed), to_bytes(std::string("provision"))}));
        std::vector<std::pair<std::uint16_t, AttributeSet>> ecu_specs;
        for (const auto& s : spec.senders) ecu_specs.emplace_back(s.id, AttributeSet({0}));
        for (const auto& r : spec.receivers) ecu_specs.emplace_back(r.id, r.attrs);
        vehicle_ = provision(spec.params, spec.n_attrs, ecu_specs, rng);
        sa_ = std::make_unique<SaEndpoint>(vehicle_.sa, spec.sa_id, spec.seed);
        for (const auto& s : spec.senders) {
            senders_.push_back(std::make_unique<SenderEndpoint>(
                vehicle_.ecu(s.id), s.policy, s.receivers, spec.sa_id, spec.seed));
        }
        for (const auto& r : spec.receivers) {
            receivers_.push_back(std::make_unique<ReceiverEndpoint>(
                vehicle_.ecu(r.id), spec.sa_id, spec.seed));
        }
    }

    const FleetSpec& spec() const { return spec_; }
    const ProvisionedVehicle& vehicle() const { return vehicle_; }
    SaEndpoint& sa() { return *sa_; }

    SenderEndpoint& sender(std::uint16_t id) {
        for (auto& s : senders_) {
            if (s->id() == id) return *s;
        }
        throw Error("no such sender");
    }

    ReceiverEndpoint& receiver(std::uint16_t id) {
        for (auto& r : receivers_) {
            if (r->id() == id) return *r;
        }
        throw Error("no such receiver");
    }

    std::vector<std::unique_ptr<SenderEndpoint>>& senders() { return senders_; }
    std::vector<std::unique_ptr<ReceiverEndpoint>>& receivers() { return receivers_; }

    std::vector<Alert> collect_alerts() const {
        std::vector<Alert> out;
        auto add = [&out](const std::vector<Alert>& a) {
            out.insert(out.end(), a.begin(), a.end());
        };
        add(sa_->alerts());
        for (const auto& s : senders_) add(s->alerts());
        for (const auto& r : receivers_) add(r->alerts());
        return out;
    }

private:
    FleetSpec spec_;
    ProvisionedVehicle vehicle_;
    std::unique_ptr<SaEndpoint> sa_;
    std::vector<std::unique_ptr<SenderEndpoint>> senders_;
    std::vector<std::unique_ptr<ReceiverEndpoint>> receivers_;
};

struct TranscriptEntry {
    Bytes raw;
    std::uint16_t dst = 0;
    bool broadcast = false;

    MsgType type() const { return static_cast<MsgType>(raw.at(0)); }
    std::uint16_t src() const { return static_cast<std::uint16_t>((raw.at(1) << 8) | raw.at(2)); }
};

// Called before each delivery; may rewrite the entry, drop it, duplicate it,
// or splice extra deliveries in front of it.
using Interceptor = std::function<void(std::size_t idx, TranscriptEntry& entry, bool& drop,
                                       bool& duplicate, std::vector<TranscriptEntry>& before)>;

struct ExchangeResult {
    std::vector<Alert> alerts;            // endpoint alerts plus pump-level decode alerts
    std::vector<TranscriptEntry> transcript;
    std::size_t sessions = 0;
    std::size_t auth_ok = 0;              // receiver sessions that reached mutual-auth-ok
    std::size_t senders_done = 0;
    bool stalled = false;

    bool clean() const { return alerts.empty() && !stalled; }
};

// Drives one epoch across the fleet: every sender publishes, every receiver
// walks its target list in order. Deterministic given the fleet state.
inline ExchangeResult run_exchange(Fleet& fleet, ByteView epoch,
                                   const Interceptor& interceptor = {}) {
    ExchangeResult res;
    WireCodec codec{fleet.spec().n_attrs, fleet.spec().params.element_bytes()};
    std::deque<TranscriptEntry> queue;
    std::set<std::string> counted_ok;
    std::size_t baseline_alerts = fleet.collect_alerts().size();

    auto enqueue = [&queue](const std::vector<Outgoing>& outs) {
        for (const auto& o : outs) {
            queue.push_back(TranscriptEntry{encode(o.msg), o.dst, o.broadcast});
        }
    };

    // per-receiver target progress
    std::map<std::uint16_t, std::size_t> next_target;
    auto start_next_session = [&](ReceiverEndpoint& r, const FleetSpec::Receiver& cfg) {
        std::size_t& idx = next_target[cfg.id];
        if (idx < cfg.targets.size()) {
            enqueue(r.start(epoch, cfg.targets[idx]));
            ++idx;
            ++res.sessions;
        }
    };

    for (auto& s : fleet.senders()) enqueue(s->start(epoch));
    for (std::size_t i = 0; i < fleet.receivers().size(); ++i) {
        start_next_session(*fleet.receivers()[i], fleet.spec().receivers[i]);
    }

    std::size_t idx = 0;
    bool closed_windows = false;
    for (;;) {
        if (queue.empty()) {
            // collection-window close for senders still waiting on acks
            bool emitted = false;
            if (!closed_windows) {
                for (auto& s : fleet.senders()) {
                    auto outs = s->close_window();
                    if (!outs.empty()) emitted = true;
                    enqueue(outs);
                }
                closed_windows = true;
            }
            if (!emitted) break;
            continue;
        }
        TranscriptEntry entry = queue.front();
        queue.pop_front();

        bool drop = false, duplicate = false;
        std::vector<TranscriptEntry> before;
        if (interceptor) interceptor(idx, entry, drop, duplicate, before);
        ++idx;
        for (auto it = before.rbegin(); it != before.rend(); ++it) queue.push_front(*it);
        if (duplicate) queue.push_front(entry);
        if (drop) continue;

        res.transcript.push_back(entry);

        WireMessage msg;
        try {
            msg = codec.decode(entry.raw);
        } catch (const CodecError&) {
            res.alerts.push_back(Alert{"N" + std::to_string(entry.dst), 0,
                                       AlertCode::DecodeError});
            continue;
        }

        if (entry.broadcast) {
            for (auto& r : fleet.receivers()) enqueue(r->handle(msg));
        } else if (entry.dst == fleet.spec().sa_id) {
            enqueue(fleet.sa().handle(msg));
        } else {
            bool routed = false;
            for (auto& s : fleet.senders()) {
                if (s->id() == entry.dst) {
                    enqueue(s->handle(msg));
                    routed = true;
                }
            }
            for (auto& r : fleet.receivers()) {
                if (r->id() == entry.dst) {
                    enqueue(r->handle(msg));
                    routed = true;
                }
            }
            if (!routed) {
                res.alerts.push_back(Alert{"N" + std::to_string(entry.dst), 0,
                                           AlertCode::UnknownPeer});
            }
        }

        // advance receivers whose session just finished
        for (std::size_t i = 0; i < fleet.receivers().size(); ++i) {
            auto& r = *fleet.receivers()[i];
            if (r.terminal()) {
                if (r.mutual_auth_ok() && counted_ok.insert(r.session()).second) {
                    ++res.auth_ok;
                }
                start_next_session(r, fleet.spec().receivers[i]);
            }
        }
    }

    for (auto& s : fleet.senders()) {
        if (s->done()) ++res.senders_done;
    }
    // traffic drained: anything still mid-exchange has timed out
    std::size_t incomplete = 0;
    for (auto& r : fleet.receivers()) {
        if (!r->terminal() && r->state() != ReceiverEndpoint::State::Idle) {
            ++incomplete;
            r->expire();
        }
    }
    for (auto& s : fleet.senders()) s->expire();
    res.stalled = incomplete > 0;

    auto all = fleet.collect_alerts();
    res.alerts.insert(res.alerts.end(), all.begin() + baseline_alerts, all.end());
    return res;
}

// --- honest-but-curious agent audit -----------------------------------------

struct OmegaScan {
    std::uint64_t matches = 0;   // candidates consistent with D that decrypt
    Scalar matched_omega;        // the surviving candidate when matches == 1
};

// Sweep every candidate time key in [0, q). A candidate survives when it
// explains the ciphertext's blinding component (A^w == D) and its completed
// decryption equals the key commitment. A^w is walked incrementally.
inline OmegaScan exhaustive_omega_scan(const GroupParams& params, std::size_t n_attrs,
                                       const SaEndpoint::AuditRecord& rec,
                                       const GroupElement& commitment) {
    OmegaScan out;
    GroupElement denom = params.one();
    for (auto i : rec.i_hat.indices) denom = params.mul(denom, rec.pd.am[i]);
    GroupElement denom_inv = params.inv(denom);

    GroupElement a_pow{1};
    mpz_class q = params.q;
    for (mpz_class w = 0; w < q; ++w) {
        if (w > 0) a_pow = params.mul(a_pow, rec.a);
        if (!(a_pow == rec.d)) continue;
        // candidate consistent with the blinding; complete the decryption
        Scalar omega{w};
        Permutation perm = keyed_shuffle(omega, n_attrs);
        GroupElement num = params.one();
        for (auto i : rec.i_hat.indices) num = params.mul(num, rec.pd.am[perm.forward(i)]);
        GroupElement m = params.mul(rec.pd.sc_dd, params.mul(num, denom_inv));
        if (m == commitment) {
            ++out.matches;
            out.matched_omega = omega;
        }
    }
    return out;
}

struct SecretScanResult {
    std::vector<std::string> found;  // names of secrets located in the view
    bool clean() const { return found.empty(); }
};

// Byte-scan the agent's complete view for every secret it must never hold.
inline SecretScanResult scan_sa_view(const SaEndpoint& sa, const GroupParams& params,
                                     const Scalar& omega, ByteView k, ByteView k_prime,
                                     const ProvisionedVehicle& vehicle) {
    SecretScanResult out;
    ByteView view = sa.view_bytes();
    auto probe = [&](const std::string& name, ByteView pattern) {
        if (contains_bytes(view, pattern)) out.found.push_back(name);
    };
    probe("omega", params.encode_scalar(omega));
    probe("omega32", scalar_key_bytes(omega));
    probe("K", k);
    probe("K'", k_prime);
    for (const auto& e : vehicle.ecus) {
        for (const auto& [i, a] : e.uk.sk) {
            probe("SK_U" + std::to_string(e.id) + "[" + std::to_string(i) + "]",
                  params.encode_scalar(a));
        }
    }
    probe("K_group", ByteView(vehicle.ta.k_group.data(), vehicle.ta.k_group.size()));
    probe("MSK", params.encode_scalar(vehicle.ta.k_s));
    return out;
}

}  // namespace ecsvc
