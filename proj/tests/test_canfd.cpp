#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "ecsvc/canfd.hpp"

using namespace ecsvc;

TEST_CASE("frame_time matches the dual-rate model") {
    BusConfig cfg;  // arb 0.5M, data 4M, 32 arb bits, 45 data overhead bits
    CHECK(frame_time(64, cfg) == Catch::Approx(32 / 5e5 + (45 + 512) / 4e6).epsilon(1e-12));
    CHECK(frame_time(64, cfg) == Catch::Approx(203.25e-6).epsilon(1e-9));
    CHECK(frame_time(0, cfg) == Catch::Approx(64e-6 + 11.25e-6).epsilon(1e-9));
    CHECK_THROWS_AS(frame_time(65, cfg), SimError);

    BusConfig faster = cfg;
    faster.data_rate = 8e6;
    CHECK(frame_time(64, faster) < frame_time(64, cfg));
    BusConfig bad;
    bad.data_rate = 0;
    CHECK_THROWS_AS(frame_time(8, bad), SimError);
}

TEST_CASE("fragmentation sizes and round trip") {
    Bytes big(4608, 0xab);
    auto frames = fragment(big, 7, 0x123);
    CHECK(frames.size() == 79);  // ceil(4608 / 59)
    for (const auto& f : frames) {
        CHECK(f.payload.size() <= 64);
        CHECK(f.can_id == 0x123);
        CHECK(f.msg_id() == 7);
    }
    CHECK(reassemble(frames) == big);

    Bytes small(59, 0x01);
    CHECK(fragment(small, 1, 1).size() == 1);
    CHECK(fragment(Bytes{}, 1, 1).size() == 1);

    // out-of-order arrival
    DeterministicRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Bytes msg = rng.bytes(1 + rng.uniform_below(500));
        auto fr = fragment(msg, static_cast<std::uint8_t>(trial), 5);
        std::mt19937 g(trial);
        std::shuffle(fr.begin(), fr.end(), g);
        CHECK(reassemble(fr) == msg);
    }
}

TEST_CASE("reassembly rejects incomplete or mixed input") {
    Bytes msg(200, 0x42);
    auto frames = fragment(msg, 9, 1);
    REQUIRE(frames.size() == 4);
    auto missing = frames;
    missing.erase(missing.begin() + 1);
    CHECK_THROWS_AS(reassemble(missing), SimError);

    auto mixed = frames;
    mixed[2].payload[0] = 10;  // different msg_id
    CHECK_THROWS_AS(reassemble(mixed), SimError);

    CHECK_THROWS_AS(reassemble({}), SimError);
}

TEST_CASE("arbitration picks the lowest identifier, ties by node") {
    CHECK(arbitrate({{1, 5}, {2, 3}, {3, 9}}) == 1);
    CHECK(arbitrate({{4, 7}}) == 0);
    CHECK(arbitrate({{9, 5}, {2, 5}}) == 1);  // same id, lower node id wins
    CHECK_THROWS_AS(arbitrate({}), SimError);
}

TEST_CASE("cost model returns table cells exactly") {
    auto m = CostModel::reference();
    CHECK(compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 16, m) == 436.9e-3);
    CHECK(compute_cost(NodeClass::Sa1400MHz, AbeOp::ExtractPd1, 32, m) == 1.56e-3);
    CHECK(compute_cost(NodeClass::Sa1400MHz, AbeOp::Transform, 32, m) == 23.6e-3);
    CHECK(m.primitive(NodeClass::Ecu, 0) == 130.8e-6);
    CHECK(m.primitive(NodeClass::Sa600MHz, 1) == 5.4e-6);
    CHECK(m.primitive(NodeClass::Sa1400MHz, 2) == 13.8e-6);
}

TEST_CASE("cost model interpolates between keys and guards the range") {
    auto m = CostModel::reference();
    double mid = compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 6, m);
    CHECK(mid == Catch::Approx((144.7e-3 + 241.1e-3) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 3, m), SimError);
    CHECK_THROWS_AS(compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 33, m), SimError);
    CHECK_THROWS_AS(compute_cost(NodeClass::Ecu, AbeOp::Transform, 8, m), SimError);

    auto loose = m;
    loose.allow_extrapolation = true;
    CHECK(compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 3, loose) == 144.7e-3);
    CHECK(compute_cost(NodeClass::Ecu, AbeOp::EncryptShuffle, 40, loose) == 817.9e-3);
}

TEST_CASE("handler cost combines primitive units and table entries") {
    auto m = CostModel::reference();
    CostTally t;
    t.add_sha(32);        // 1 unit
    t.add_sha(100);       // 3 units
    t.add_aes_enc(48);    // 1 unit
    t.add_aes_dec(96);    // 2 units
    t.add_abe(AbeOp::EncryptShuffle, 8);
    double expect = 4 * 130.8e-6 + 1 * 149.5e-6 + 2 * 198.9e-6 + 241.1e-3;
    CHECK(m.handler_cost(NodeClass::Ecu, t) == Catch::Approx(expect).epsilon(1e-12));
}
