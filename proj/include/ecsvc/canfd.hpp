#pragma once

// CAN-FD link layer for the simulator: dual-bit-rate frame timing,
// payload fragmentation with in-payload fragment headers, identifier
// arbitration, and the table-driven per-node compute-cost model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "ecsvc/bytes.hpp"
#include "ecsvc/protocol.hpp"

namespace ecsvc {

class SimError : public Error {
public:
    using Error::Error;
};

inline constexpr std::size_t kMaxPayload = 64;
inline constexpr std::size_t kFragHeader = 5;  // msg_id(1) index(2) total(2)
inline constexpr std::size_t kFragData = kMaxPayload - kFragHeader;

struct CanFdFrame {
    std::uint16_t can_id = 0;  // 11-bit priority identifier
    Bytes payload;             // fragment header + data, <= 64 bytes

    std::uint8_t msg_id() const { return payload.at(0); }
    std::uint16_t frag_index() const { return get_u16(payload, 1); }
    std::uint16_t frag_total() const { return get_u16(payload, 3); }
    ByteView data() const { return ByteView(payload).subspan(kFragHeader); }
};

struct BusConfig {
    double arb_rate = 500'000;        // arbitration-phase bit rate, bits/s
    double data_rate = 4'000'000;     // data-phase bit rate, bits/s
    unsigned arb_phase_bits = 32;     // SOF, identifier, pre-BRS control, ACK, EOF, IFS
    unsigned data_overhead_bits = 45; // post-BRS control plus the CRC field

    void validate() const {
        if (arb_rate <= 0 || data_rate <= 0) throw SimError("bus rates must be positive");
    }
};

// Frame time = arbitration-phase bits at the slow rate plus data-phase
// overhead and payload bits at the fast rate. Bit stuffing is not modeled.
inline double frame_time(std::size_t payload_len, const BusConfig& cfg) {
    if (payload_len > kMaxPayload) throw SimError("payload exceeds 64 bytes");
    cfg.validate();
    return cfg.arb_phase_bits / cfg.arb_rate +
           (cfg.data_overhead_bits + 8.0 * payload_len) / cfg.data_rate;
}

inline std::vector<CanFdFrame> fragment(ByteView msg, std::uint8_t msg_id,
                                        std::uint16_t can_id) {
    std::size_t total = std::max<std::size_t>(1, (msg.size() + kFragData - 1) / kFragData);
    if (total > 0xffff) throw SimError("message too large to fragment");
    std::vector<CanFdFrame> frames;
    frames.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        CanFdFrame f;
        f.can_id = can_id;
        f.payload.push_back(msg_id);
        put_u16(f.payload, static_cast<std::uint16_t>(i));
        put_u16(f.payload, static_cast<std::uint16_t>(total));
        std::size_t off = i * kFragData;
        std::size_t take = std::min(kFragData, msg.size() - off);
        append(f.payload, msg.subspan(off, take));
        frames.push_back(std::move(f));
    }
    return frames;
}

// Frames may arrive in any order; they must share one msg_id and form a
// complete index set.
inline Bytes reassemble(const std::vector<CanFdFrame>& frames) {
    if (frames.empty()) throw SimError("no frames to reassemble");
    const std::uint8_t id = frames.front().msg_id();
    const std::uint16_t total = frames.front().frag_total();
    std::vector<const CanFdFrame*> slots(total, nullptr);
    for (const auto& f : frames) {
        if (f.msg_id() != id) throw SimError("mixed msg_ids in reassembly");
        if (f.frag_total() != total) throw SimError("inconsistent frag_total");
        if (f.frag_index() >= total) throw SimError("frag_index out of range");
        slots[f.frag_index()] = &f;
    }
    Bytes out;
    for (std::uint16_t i = 0; i < total; ++i) {
        if (!slots[i]) throw SimError("missing fragment " + std::to_string(i));
        auto d = slots[i]->data();
        append(out, d);
    }
    return out;
}

// Lowest identifier wins; deterministic node-id tie break.
inline std::size_t arbitrate(const std::vector<std::pair<std::uint16_t, std::uint16_t>>& pending) {
    if (pending.empty()) throw SimError("arbitration over empty set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < pending.size(); ++i) {
        const auto& [node, id] = pending[i];
        const auto& [bn, bid] = pending[best];
        if (id < bid || (id == bid && node < bn)) best = i;
    }
    return best;
}

// --- compute-cost model -------------------------------------------------------

enum class NodeClass { Ecu, Sa600MHz, Sa1400MHz };

inline const char* node_class_name(NodeClass c) {
    switch (c) {
        case NodeClass::Ecu: return "ecu";
        case NodeClass::Sa600MHz: return "sa600";
        case NodeClass::Sa1400MHz: return "sa1400";
    }
    return "?";
}

// Per-node-class primitive timings and per-attribute-count algorithm
// timings. Values are seconds; attribute tables interpolate linearly
// between keys and refuse to extrapolate unless explicitly allowed.
struct CostModel {
    struct Primitives {
        double sha = 0, aes_enc = 0, aes_dec = 0;
    };
    std::map<NodeClass, Primitives> primitives;
    // (class, op) -> sorted (attr_count, seconds) table
    std::map<std::pair<NodeClass, AbeOp>, std::vector<std::pair<unsigned, double>>> abe_tables;
    bool allow_extrapolation = false;

    static CostModel reference();

    double primitive(NodeClass c, int which) const {
        auto it = primitives.find(c);
        if (it == primitives.end()) throw SimError("no primitive costs for node class");
        switch (which) {
            case 0: return it->second.sha;
            case 1: return it->second.aes_enc;
            case 2: return it->second.aes_dec;
        }
        throw SimError("bad primitive selector");
    }

    double abe(NodeClass c, AbeOp op, unsigned attr_count) const {
        auto it = abe_tables.find({c, op});
        if (it == abe_tables.end()) throw SimError("no table for this node class and op");
        const auto& tab = it->second;
        if (attr_count < tab.front().first || attr_count > tab.back().first) {
            if (!allow_extrapolation) {
                throw SimError("attribute count outside table range " +
                               std::to_string(tab.front().first) + ".." +
                               std::to_string(tab.back().first));
            }
            // clamp to the nearest edge when explicitly opted in
            attr_count = std::clamp(attr_count, tab.front().first, tab.back().first);
        }
        for (std::size_t i = 0; i < tab.size(); ++i) {
            if (tab[i].first == attr_count) return tab[i].second;  // exact key
            if (tab[i].first > attr_count) {
                const auto& [x0, y0] = tab[i - 1];
                const auto& [x1, y1] = tab[i];
                return y0 + (y1 - y0) * (attr_count - x0) / double(x1 - x0);
            }
        }
        return tab.back().second;
    }

    // Total handler delay for a tally of primitive invocations.
    double handler_cost(NodeClass c, const CostTally& t) const {
        auto it = primitives.find(c);
        if (it == primitives.end()) throw SimError("no primitive costs for node class");
        double s = t.sha * it->second.sha + t.aes_enc * it->second.aes_enc +
                   t.aes_dec * it->second.aes_dec;
        for (const auto& [op, attrs] : t.abe) s += abe(c, op, attrs);
        return s;
    }
};

// Reference timings measured on the MCU-class ECU and the two agent clock
// speeds (microseconds for primitives, milliseconds for the ABE tables).
inline CostModel CostModel::reference() {
    CostModel m;
    m.primitives[NodeClass::Ecu] = {130.8e-6, 149.5e-6, 198.9e-6};
    m.primitives[NodeClass::Sa600MHz] = {8.4e-6, 5.4e-6, 6.7e-6};
    m.primitives[NodeClass::Sa1400MHz] = {3.6e-6, 12.7e-6, 13.8e-6};

    // values in seconds, spelled as decimal literals so table lookups return
    // exactly what callers write
    auto tab = [](std::initializer_list<double> v) {
        std::vector<std::pair<unsigned, double>> t;
        unsigned k = 4;
        for (double x : v) {
            t.emplace_back(k, x);
            k += 4;
        }
        return t;
    };
    m.abe_tables[{NodeClass::Ecu, AbeOp::EncryptShuffle}] =
        tab({144.7e-3, 241.1e-3, 338.8e-3, 436.9e-3, 529.5e-3, 635.5e-3, 714.8e-3, 817.9e-3});
    m.abe_tables[{NodeClass::Sa600MHz, AbeOp::Transform}] =
        tab({7e-3, 13e-3, 20.9e-3, 27.8e-3, 34.4e-3, 41.8e-3, 47.6e-3, 54.8e-3});
    m.abe_tables[{NodeClass::Sa1400MHz, AbeOp::Transform}] =
        tab({3e-3, 6e-3, 9e-3, 12e-3, 14.5e-3, 17.5e-3, 21.2e-3, 23.6e-3});
    m.abe_tables[{NodeClass::Sa600MHz, AbeOp::ExtractPd1}] =
        tab({1.92e-3, 2.05e-3, 2.25e-3, 2.46e-3, 2.65e-3, 3e-3, 3.24e-3, 3.64e-3});
    m.abe_tables[{NodeClass::Sa1400MHz, AbeOp::ExtractPd1}] =
        tab({0.82e-3, 0.89e-3, 0.96e-3, 1.08e-3, 1.12e-3, 1.25e-3, 1.44e-3, 1.56e-3});
    return m;
}

inline double compute_cost(NodeClass c, AbeOp op, unsigned attr_count, const CostModel& m) {
    return m.abe(c, op, attr_count);
}

}  // namespace ecsvc
