#pragma once

// Byte-exact message codec for the twelve-step exchange. Header is
// type(1) || sender_id(2); bodies are fixed-width given the group and the
// system attribute count, with u16 length prefixes on PRP-enveloped fields.

#include <cstdint>

#include "ecsvc/abe.hpp"

namespace ecsvc {

enum class MsgType : std::uint8_t {
    Hello = 0x01,             // step 1:  sigma1 || N1 || r_k
    Challenge = 0x02,         // step 2:  sigma2 || N2
    CipherPublish = 0x03,     // step 3:  sC || sigma3
    Request = 0x04,           // step 5:  sigma4 || N3 || r_k || req_tag || target
    RequestChallenge = 0x05,  // step 6:  sigma5 || N4
    CredentialSubmit = 0x06,  // step 7:  len || C1 || sigma6
    PartialResult = 0x07,     // step 8:  len || C2 || sigma7
    KeyDigest = 0x08,         // step 9:  sigma' || r_k || K'
    ReceiverAck = 0x09,       // step 10: sigma8 || C3
    GroupList = 0x0a,         // step 11: len || C4 || sigma9
};

inline const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::Hello: return "Hello";
        case MsgType::Challenge: return "Challenge";
        case MsgType::CipherPublish: return "CipherPublish";
        case MsgType::Request: return "Request";
        case MsgType::RequestChallenge: return "RequestChallenge";
        case MsgType::CredentialSubmit: return "CredentialSubmit";
        case MsgType::PartialResult: return "PartialResult";
        case MsgType::KeyDigest: return "KeyDigest";
        case MsgType::ReceiverAck: return "ReceiverAck";
        case MsgType::GroupList: return "GroupList";
    }
    return "?";
}

inline constexpr std::size_t kNonceBytes = 16;
inline constexpr std::size_t kEpochBytes = 8;
inline constexpr std::uint8_t kRequestTag = 0x4b;

struct WireMessage {
    MsgType type;
    std::uint16_t sender = 0;
    Bytes body;

    bool operator==(const WireMessage& o) const {
        return type == o.type && sender == o.sender && body == o.body;
    }
};

inline Bytes encode(const WireMessage& m) {
    Bytes out;
    out.reserve(3 + m.body.size());
    out.push_back(static_cast<std::uint8_t>(m.type));
    put_u16(out, m.sender);
    append(out, m.body);
    return out;
}

// Structural context the decoder needs: attribute count and element width.
struct WireCodec {
    std::size_t n_attrs = 0;
    std::size_t elem_bytes = 0;

    std::size_t staged_bytes() const { return 1 + elem_bytes * (n_attrs + 2); }

    WireMessage decode(ByteView bytes) const {
        if (bytes.size() < 3) throw CodecError("message shorter than header");
        auto raw = bytes[0];
        if (raw < 0x01 || raw > 0x0a) throw CodecError("unknown message type tag");
        WireMessage m;
        m.type = static_cast<MsgType>(raw);
        m.sender = static_cast<std::uint16_t>((bytes[1] << 8) | bytes[2]);
        m.body.assign(bytes.begin() + 3, bytes.end());
        validate_body(m);
        return m;
    }

    void validate_body(const WireMessage& m) const {
        const std::size_t n = m.body.size();
        switch (m.type) {
            case MsgType::Hello:
                if (n != kTagBytes + kNonceBytes + kEpochBytes) {
                    throw CodecError("bad Hello length");
                }
                return;
            case MsgType::Challenge:
            case MsgType::RequestChallenge:
                if (n != kTagBytes + kNonceBytes) throw CodecError("bad challenge length");
                return;
            case MsgType::CipherPublish: {
                if (n != staged_bytes() + kTagBytes) throw CodecError("bad CipherPublish length");
                return;
            }
            case MsgType::Request:
                if (n != kTagBytes + kNonceBytes + kEpochBytes + 1 + 2) {
                    throw CodecError("bad Request length");
                }
                if (m.body[kTagBytes + kNonceBytes + kEpochBytes] != kRequestTag) {
                    throw CodecError("bad request tag");
                }
                return;
            case MsgType::CredentialSubmit:
            case MsgType::PartialResult:
            case MsgType::GroupList: {
                if (n < 2 + kBlockBytes + kTagBytes) throw CodecError("enveloped body too short");
                std::size_t len = get_u16(m.body, 0);
                if (len == 0 || len % kBlockBytes != 0 || 2 + len + kTagBytes != n) {
                    throw CodecError("enveloped length mismatch");
                }
                return;
            }
            case MsgType::KeyDigest:
                if (n != kTagBytes + kEpochBytes + 2 * kBlockBytes) {
                    throw CodecError("bad KeyDigest length");
                }
                return;
            case MsgType::ReceiverAck:
                if (n != kTagBytes + kBlockBytes) throw CodecError("bad ReceiverAck length");
                return;
        }
        throw CodecError("unreachable message type");
    }
};

// Body builders/readers. Offsets mirror validate_body above.

inline Bytes hello_body(const Tag& sigma1, ByteView n1, ByteView r_k) {
    Bytes b(sigma1.begin(), sigma1.end());
    append(b, n1);
    append(b, r_k);
    return b;
}

inline Bytes challenge_body(const Tag& sigma, ByteView nonce) {
    Bytes b(sigma.begin(), sigma.end());
    append(b, nonce);
    return b;
}

inline Bytes enveloped_body(ByteView ciphertext, const Tag& sigma) {
    Bytes b;
    put_u16(b, static_cast<std::uint16_t>(ciphertext.size()));
    append(b, ciphertext);
    append(b, ByteView(sigma.data(), sigma.size()));
    return b;
}

inline ByteView enveloped_ciphertext(ByteView body) {
    std::size_t len = get_u16(body, 0);
    return body.subspan(2, len);
}

inline ByteView enveloped_tag(ByteView body) {
    std::size_t len = get_u16(body, 0);
    return body.subspan(2 + len, kTagBytes);
}

}  // namespace ecsvc
