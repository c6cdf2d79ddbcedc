#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "ecsvc/abe.hpp"

using namespace ecsvc;

namespace {

GroupParams tiny() { return named_group("tiny"); }

// Drives the ten-algorithm pipeline end to end and reports whether the
// receiver's output equals the plain message.
struct PipelineRun {
    GroupElement message;
    GroupElement recovered;
    bool ok() const { return recovered == message; }
};

PipelineRun run_pipeline(const GroupParams& params, std::size_t n, const Policy& policy,
                         const AttributeSet& receiver_attrs, Rng& rng) {
    auto mk = setup(params, n, rng);
    auto uk = keygen(mk, 7, receiver_attrs, rng);
    Bytes r_k = rng.bytes(8);
    Scalar omega = time_key_gen(mk.k_group, r_k, params);
    Scalar ak = transform_user_key(omega, uk, params);
    GroupElement m = random_subgroup_uniform(params, rng);
    auto c = encrypt(mk.mpk, policy, omega, m, rng);
    auto sc = shuffle(c, omega);
    auto sc2 = transform_ciphertext(sc, mk.tk, params);
    auto i_hat = inverse_permute_attrs(uk.attrs, omega, n);
    auto ec = extract(sc2, i_hat, params);
    auto pd = proxy_decrypt1(ec, ak, uk.rk, mk.tk, params);
    auto rec = proxy_decrypt2(pd, uk.attrs, i_hat, params);
    return PipelineRun{m, rec};
}

Policy random_policy(std::size_t n, Rng& rng) {
    Policy p;
    p.trits.resize(n);
    bool any = false;
    for (auto& t : p.trits) {
        t = static_cast<std::int8_t>(static_cast<int>(rng.uniform_below(3)) - 1);
        any |= (t == 1);
    }
    if (!any) p.trits[rng.uniform_below(n)] = 1;
    return p;
}

AttributeSet satisfying_set(const Policy& p, Rng& rng) {
    std::vector<std::uint32_t> idx;
    for (std::size_t i = 0; i < p.trits.size(); ++i) {
        if (p.trits[i] == 1) idx.push_back(static_cast<std::uint32_t>(i));
        else if (p.trits[i] == 0 && rng.uniform_below(2) == 0) {
            idx.push_back(static_cast<std::uint32_t>(i));
        }
    }
    return AttributeSet(std::move(idx));
}

}  // namespace

TEST_CASE("setup ties public keys and transformation keys to the master secret") {
    auto g = tiny();
    DeterministicRng rng(100);
    auto mk = setup(g, 3, rng);
    auto gk = g.pow_g(mk.k_s);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(g.mul(mk.mpk.pk_attrs[i], g.pow_g(mk.tk[i])) == gk);
    }
    CHECK_THROWS_AS(setup(g, 0, rng), AbeError);

    // randomness sanity in a scalar space where collisions are negligible
    auto big = named_group("scan");
    DeterministicRng ra(100), rb(101);
    CHECK(setup(big, 3, ra).k_s != setup(big, 3, rb).k_s);
}

TEST_CASE("keygen telescoping identity and errors") {
    auto g = named_group("scan");
    DeterministicRng rng(5);
    auto mk = setup(g, 6, rng);
    AttributeSet attrs({0, 2, 5});
    auto uk = keygen(mk, 12, attrs, rng);

    Scalar sum{0};
    for (const auto& [i, a] : uk.sk) sum = g.scalar_add(sum, a);
    sum = g.scalar_add(sum, uk.rk);
    Scalar expected{(mk.k_s.v * 3) % g.q};
    CHECK(g.pow_g(sum) == g.pow_g(expected));

    auto uk2 = keygen(mk, 13, attrs, rng);
    CHECK(uk2.sk != uk.sk);  // per-user randomness

    CHECK_THROWS_AS(keygen(mk, 14, AttributeSet({6}), rng), AbeError);
    CHECK_THROWS_AS(keygen(mk, 15, AttributeSet{}, rng), AbeError);
}

TEST_CASE("time_key_gen is deterministic, in range, collides at ~1/q in the tiny group") {
    auto g = tiny();
    SymmetricKey kg{};
    kg.fill(9);
    CHECK(time_key_gen(kg, from_hex("0001"), g) == time_key_gen(kg, from_hex("0001"), g));
    int collisions = 0;
    const int n = 10000;
    Scalar prev = time_key_gen(kg, be64(0), g);
    for (int k = 1; k < n; ++k) {
        Scalar cur = time_key_gen(kg, be64(static_cast<std::uint64_t>(k)), g);
        CHECK(cur.v < g.q);
        if (cur == prev) ++collisions;
        prev = cur;
    }
    // consecutive draws collide with probability 1/q = 1/11
    double expected = (n - 1) / 11.0;
    double sigma = std::sqrt((n - 1) * (1.0 / 11) * (10.0 / 11));
    CHECK(std::abs(collisions - expected) < 4 * sigma);
}

TEST_CASE("transform_user_key sums attribute keys plus the time key") {
    auto g = tiny();
    UserKeyMaterial uk;
    uk.attrs = AttributeSet({0, 2});
    uk.sk.emplace(0, Scalar{2});
    uk.sk.emplace(2, Scalar{4});
    CHECK(transform_user_key(Scalar{5}, uk, g).v == 0);  // (2+4+5) mod 11
    CHECK(transform_user_key(Scalar{0}, uk, g).v == 6);
    DeterministicRng rng(3);
    for (int i = 0; i < 50; ++i) {
        CHECK(transform_user_key(random_scalar(g, rng), uk, g).v < g.q);
    }
}

TEST_CASE("worked tiny-group pipeline: encrypt, shuffle, transform, extract") {
    auto g = tiny();
    // a = (3,5,7) so PK = (18,12,8); tuples (9,1,3); r = 2; omega = 5
    MasterPublicKey mpk;
    mpk.params = g;
    mpk.pk_attrs = {GroupElement{18}, GroupElement{12}, GroupElement{8}};
    std::vector<GroupElement> tuples{GroupElement{9}, GroupElement{1}, GroupElement{3}};
    Scalar r{2}, omega{5};

    auto c = encrypt_with(mpk, omega, tuples, r);
    CHECK(c.a.v == 16);           // 4^2
    CHECK(c.b[0].v == 18);        // 9 * 18^2
    CHECK(c.b[1].v == 6);         // 1 * 12^2
    CHECK(c.b[2].v == 8);         // 3 * 8^2
    CHECK(c.d.v == 6);            // 16^5
    CHECK(c.stage == CipherStage::Raw);

    // shuffle: B-hat_i = B_{SH(i)}; verify against the permutation directly
    auto sc = shuffle(c, omega);
    auto perm = keyed_shuffle(omega, 3);
    for (std::uint32_t i = 0; i < 3; ++i) {
        CHECK(sc.b[i] == c.b[perm.forward(i)]);
    }
    CHECK(sc.a == c.a);
    CHECK(sc.d == c.d);
    CHECK(std::multiset<mpz_class>{sc.b[0].v, sc.b[1].v, sc.b[2].v} ==
          std::multiset<mpz_class>{18, 6, 8});

    // transform with s = (1,2,3): B'_i = B-hat_i * A^{s_i}, A = 16
    std::vector<Scalar> tk{Scalar{1}, Scalar{2}, Scalar{3}};
    auto sc2 = transform_ciphertext(sc, tk, g);
    for (std::size_t i = 0; i < 3; ++i) {
        mpz_class expect = sc.b[i].v;
        for (int e = 0; e < tk[i].v.get_si(); ++e) expect = (expect * 16) % 23;
        CHECK(sc2.b[i].v == expect);
    }

    // extract over a singleton and over everything
    auto e1 = extract(sc2, AttributeSet({1}), g);
    CHECK(e1.b_prod == sc2.b[1]);
    auto eall = extract(sc2, AttributeSet({0, 1, 2}), g);
    mpz_class prod = (sc2.b[0].v * sc2.b[1].v) % 23;
    prod = (prod * sc2.b[2].v) % 23;
    CHECK(eall.b_prod.v == prod);

    // stage misuse
    CHECK_THROWS_AS(shuffle(sc, omega), StageError);
    CHECK_THROWS_AS(transform_ciphertext(c, tk, g), StageError);
    CHECK_THROWS_AS(transform_ciphertext(sc2, tk, g), StageError);
    CHECK_THROWS_AS(extract(sc, AttributeSet({0}), g), StageError);
    CHECK_THROWS_AS(extract(sc2, AttributeSet{}, g), AbeError);
}

TEST_CASE("transform with zero keys is the identity; shuffle with N=1 is trivial") {
    auto g = tiny();
    DeterministicRng rng(8);
    MasterPublicKey mpk;
    mpk.params = g;
    mpk.pk_attrs = {random_element(g, rng)};
    auto c = encrypt_with(mpk, Scalar{3}, {GroupElement{9}}, Scalar{4});
    auto sc = shuffle(c, Scalar{3});
    CHECK(sc.b == c.b);  // only one permutation of a single element
    auto sc2 = transform_ciphertext(sc, {Scalar{0}}, g);
    CHECK(sc2.b == sc.b);
}

TEST_CASE("proxy_decrypt1 satisfies the blinding identity") {
    auto g = tiny();
    DeterministicRng rng(77);
    const std::size_t n = 5;
    for (int trial = 0; trial < 200; ++trial) {
        auto mk = setup(g, n, rng);
        Policy policy = random_policy(n, rng);
        AttributeSet attrs = satisfying_set(policy, rng);
        if (attrs.empty()) continue;
        auto uk = keygen(mk, 3, attrs, rng);
        Scalar omega = random_scalar(g, rng);
        Scalar ak = transform_user_key(omega, uk, g);
        GroupElement m = random_subgroup_uniform(g, rng);
        auto tuples = split_message(m, policy.trits, g, rng);
        // nonzero r: blinding is only claimed for a nondegenerate A
        Scalar r = random_nonzero_scalar(g, rng);
        auto c = encrypt_with(mk.mpk, omega, tuples, r);
        auto sc2 = transform_ciphertext(shuffle(c, omega), mk.tk, g);
        auto i_hat = inverse_permute_attrs(attrs, omega, n);
        auto ec = extract(sc2, i_hat, g);
        auto pd = proxy_decrypt1(ec, ak, uk.rk, mk.tk, g);

        // identity: sC'' = (prod over I_r of p_j) * A^(sum over i_hat of s_i - s_SH(i))
        auto perm = keyed_shuffle(omega, n);
        GroupElement tuple_prod = g.one();
        Scalar exp_sum{0};
        for (auto i : i_hat.indices) {
            tuple_prod = g.mul(tuple_prod, tuples[perm.forward(i)]);
            exp_sum = g.scalar_add(exp_sum, g.scalar_sub(mk.tk[i], mk.tk[perm.forward(i)]));
        }
        GroupElement rhs = g.mul(tuple_prod, g.exp(ec.a, exp_sum));
        CHECK(pd.sc_dd == rhs);

        // am is positional: am[i] = A^{s_i}
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(pd.am[i] == g.exp(ec.a, mk.tk[i]));
        }

        // blinding is real whenever the exponent sum is nonzero
        if (exp_sum.v != 0) CHECK(pd.sc_dd != tuple_prod);
    }
}

TEST_CASE("N=1 satisfying pipeline collapses to the plain tuple") {
    auto g = tiny();
    DeterministicRng rng(123);
    auto mk = setup(g, 1, rng);
    Policy policy{{1}};
    auto uk = keygen(mk, 2, AttributeSet({0}), rng);
    Scalar omega = random_scalar(g, rng);
    GroupElement m = random_subgroup_uniform(g, rng);
    auto tuples = split_message(m, policy.trits, g, rng);
    auto c = encrypt_with(mk.mpk, omega, tuples, random_scalar(g, rng));
    auto sc2 = transform_ciphertext(shuffle(c, omega), mk.tk, g);
    auto ec = extract(sc2, AttributeSet({0}), g);
    auto pd = proxy_decrypt1(ec, transform_user_key(omega, uk, g), uk.rk, mk.tk, g);
    CHECK(pd.sc_dd == tuples[0]);
    CHECK(pd.sc_dd == m);
}

TEST_CASE("full pipeline recovers the message for satisfying receivers") {
    auto g = tiny();
    DeterministicRng rng(2024);
    int runs = 0;
    for (int trial = 0; trial < 300; ++trial) {
        std::size_t n = 1 + rng.uniform_below(8);
        Policy policy = random_policy(n, rng);
        AttributeSet attrs = satisfying_set(policy, rng);
        if (attrs.empty()) continue;
        REQUIRE(satisfies(policy, attrs));
        CHECK(run_pipeline(g, n, policy, attrs, rng).ok());
        ++runs;
    }
    CHECK(runs > 200);
}

TEST_CASE("full pipeline recovers the message at 2048-bit parameters") {
    auto g = named_group("big2048");
    DeterministicRng rng(31337);
    for (int trial = 0; trial < 5; ++trial) {
        std::size_t n = 2 + rng.uniform_below(5);
        Policy policy = random_policy(n, rng);
        AttributeSet attrs = satisfying_set(policy, rng);
        if (attrs.empty()) attrs = AttributeSet(
            {static_cast<std::uint32_t>(
                std::find(policy.trits.begin(), policy.trits.end(), 1) - policy.trits.begin())});
        CHECK(run_pipeline(g, n, policy, attrs, rng).ok());
    }
}

TEST_CASE("non-satisfying receivers miss the message at roughly 1/q") {
    auto g = tiny();
    DeterministicRng rng(555);
    int hits = 0, trials = 0;
    while (trials < 400) {
        std::size_t n = 2 + rng.uniform_below(6);
        Policy policy = random_policy(n, rng);
        // random nonempty set that does not satisfy the policy
        std::vector<std::uint32_t> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.uniform_below(2) == 0) idx.push_back(static_cast<std::uint32_t>(i));
        }
        if (idx.empty()) continue;
        AttributeSet attrs(std::move(idx));
        if (satisfies(policy, attrs)) continue;
        if (run_pipeline(g, n, policy, attrs, rng).ok()) ++hits;
        ++trials;
    }
    // expected rate 1/q; reject only wild deviations in the unit suite
    double expected = trials / 11.0;
    double sigma = std::sqrt(trials * (1.0 / 11) * (10.0 / 11));
    CHECK(std::abs(hits - expected) < 4 * sigma);
}

TEST_CASE("satisfies definition") {
    Policy p{{1, 0, -1}};
    CHECK(satisfies(p, AttributeSet({0})));
    CHECK_FALSE(satisfies(p, AttributeSet({0, 2})));  // holds an unrequired attribute
    CHECK_FALSE(satisfies(p, AttributeSet({1})));     // missing the required one
    CHECK(satisfies(p, AttributeSet({0, 1})));
}

TEST_CASE("inverse_permute_attrs is the inverse image") {
    CHECK(inverse_permute_attrs(AttributeSet({0}), Scalar{4}, 1) == AttributeSet({0}));
    auto g = tiny();
    DeterministicRng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + rng.uniform_below(7);
        std::vector<std::uint32_t> idx;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.uniform_below(2) == 0) idx.push_back(static_cast<std::uint32_t>(i));
        }
        if (idx.empty()) idx.push_back(0);
        AttributeSet i_r(std::move(idx));
        Scalar omega = random_scalar(g, rng);
        auto i_hat = inverse_permute_attrs(i_r, omega, n);
        CHECK(i_hat.size() == i_r.size());
        auto perm = keyed_shuffle(omega, n);
        std::vector<std::uint32_t> forward;
        for (auto i : i_hat.indices) forward.push_back(perm.forward(i));
        std::sort(forward.begin(), forward.end());
        CHECK(forward == i_r.indices);
    }
}

TEST_CASE("policy shape is hidden: per-position tuple marginals match across policies") {
    auto g = tiny();
    // Same length, required slot fixed, irrelevant and unrequired swapped.
    Policy p0{{1, 0, -1}};
    Policy p1{{1, -1, 0}};
    const int kDraws = 4000;
    DeterministicRng rng(424242);
    auto mk = setup(g, 3, rng);
    GroupElement m{9};

    auto histogram = [&](const Policy& pol) {
        std::vector<std::map<unsigned, int>> h(3);
        for (int k = 0; k < kDraws; ++k) {
            auto c = encrypt(mk.mpk, pol, random_scalar(g, rng), m, rng);
            for (std::size_t i = 0; i < 3; ++i) {
                h[i][static_cast<unsigned>(c.b[i].v.get_ui())]++;
            }
        }
        return h;
    };
    auto h0 = histogram(p0);
    auto h1 = histogram(p1);

    // two-sample chi-square per position, df = 10, threshold chi2(10, 0.99)
    for (std::size_t pos = 0; pos < 3; ++pos) {
        double chi2 = 0;
        std::set<unsigned> values;
        for (auto& [v, _] : h0[pos]) values.insert(v);
        for (auto& [v, _] : h1[pos]) values.insert(v);
        for (unsigned v : values) {
            double a = h0[pos].count(v) ? h0[pos][v] : 0;
            double b = h1[pos].count(v) ? h1[pos][v] : 0;
            double e = (a + b) / 2.0;
            chi2 += (a - e) * (a - e) / e + (b - e) * (b - e) / e;
        }
        CHECK(chi2 < 23.209);
    }

    // structural shape: identical lengths and stages
    auto c0 = encrypt(mk.mpk, p0, Scalar{5}, m, rng);
    auto c1 = encrypt(mk.mpk, p1, Scalar{5}, m, rng);
    CHECK(c0.b.size() == c1.b.size());
    CHECK(c0.stage == c1.stage);
    for (const auto& b : c0.b) CHECK(g.is_member(b));
    for (const auto& b : c1.b) CHECK(g.is_member(b));
}

TEST_CASE("permuted index sets are uniform over images") {
    // fixed I_r, fresh omegas drawn from a 256-bit scalar space
    auto big = named_group("big2048");
    const std::size_t n = 8;
    AttributeSet i_r({0, 1, 2});
    DeterministicRng rng(808);
    std::map<std::vector<std::uint32_t>, int> counts;
    const int kDraws = 10000;
    for (int k = 0; k < kDraws; ++k) {
        Scalar omega = random_scalar(big, rng);
        counts[inverse_permute_attrs(i_r, omega, n).indices]++;
    }
    const double categories = 56;  // C(8,3)
    CHECK(counts.size() == 56);
    double expected = kDraws / categories;
    double chi2 = 0;
    for (const auto& [img, c] : counts) {
        chi2 += (c - expected) * (c - expected) / expected;
    }
    CHECK(chi2 < 82.292);  // chi2(55, 0.99)
}

TEST_CASE("staged ciphertext and partial decryption codecs round trip") {
    auto g = named_group("scan");
    DeterministicRng rng(66);
    auto mk = setup(g, 4, rng);
    Policy policy{{1, 1, 0, -1}};
    auto c = encrypt(mk.mpk, policy, Scalar{12}, random_subgroup_uniform(g, rng), rng);
    auto enc = encode_staged(c, g);
    CHECK(enc.size() == 1 + g.element_bytes() * 6);
    auto back = decode_staged(enc, 4, g);
    CHECK(back.stage == c.stage);
    CHECK(back.a == c.a);
    CHECK(back.b == c.b);
    CHECK(back.d == c.d);
    CHECK_THROWS_AS(decode_staged(Bytes(5, 0), 4, g), CodecError);

    auto sc2 = transform_ciphertext(shuffle(c, Scalar{12}), mk.tk, g);
    auto ec = extract(sc2, AttributeSet({0, 1}), g);
    auto pd = proxy_decrypt1(ec, Scalar{3}, Scalar{4}, mk.tk, g);
    auto penc = encode_partial(pd, g);
    auto pback = decode_partial(penc, 4, g);
    CHECK(pback.sc_dd == pd.sc_dd);
    CHECK(pback.am == pd.am);

    auto aenc = encode_attr_set(AttributeSet({1, 3}));
    std::size_t off = 0;
    CHECK(decode_attr_set(aenc, off) == AttributeSet({1, 3}));
    CHECK(off == aenc.size());
}

TEST_CASE("proxy_decrypt2 signature checks") {
    auto g = tiny();
    PartialDecryption pd;
    pd.sc_dd = GroupElement{9};
    pd.am = {GroupElement{1}, GroupElement{1}, GroupElement{1}};
    CHECK_THROWS_AS(proxy_decrypt2(pd, AttributeSet({0, 1}), AttributeSet({0}), g), AbeError);
}
