#include "doctest.h"

#include <cmath>
#include <memory>

#include "zoa/knowledge.hpp"
#include "zoa/layered.hpp"
#include "zoa/numerics.hpp"

using namespace zoa;

namespace {

SchemaPtr schema3() {
    auto s = std::make_shared<ParamSchema>();
    s->layers.push_back({"n1", 4});
    s->layers.push_back({"n2", 6});
    s->layers.push_back({"n3", 3});
    return s;
}

LayeredVector random_vec(const SchemaPtr& s, Rng& rng, double scale = 0.5) {
    LayeredVector v(s);
    for (double& x : v.flat()) x = rng.gaussian(0.0, scale);
    return v;
}

// brute-force eviction oracle: full similarity recomputation, argmax pair
// with lexicographic ties, victim is the smaller creation index
struct OracleChoice {
    std::size_t i, j, victim_pos;
    double value;
};

OracleChoice brute_force_choice(const KnowledgeBase& kb) {
    const auto& vs = kb.vectors();
    OracleChoice best{0, 1, 0, -2.0};
    for (std::size_t i = 0; i < vs.size(); ++i)
        for (std::size_t j = i + 1; j < vs.size(); ++j) {
            const double v = layered_cosine(vs[i].delta, vs[j].delta);
            if (v > best.value) {
                best.i = i;
                best.j = j;
                best.value = v;
            }
        }
    best.victim_pos =
        vs[best.i].creation_index < vs[best.j].creation_index ? best.i : best.j;
    return best;
}

} // namespace

TEST_SUITE_BEGIN("knowledge");

TEST_CASE("aggregate of an empty store returns theta-tilde unchanged") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s);
    Rng rng(1);
    const LayeredVector theta = random_vec(s, rng);
    const LayeredVector out = kb.aggregate(theta);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == theta[i]);
}

TEST_CASE("singleton softmax weight is exactly one") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s);
    Rng rng(2);
    const LayeredVector d0 = random_vec(s, rng);
    kb.push(d0, 0.7);
    CHECK(kb.coefficients()[0] == 1.0);
    const LayeredVector out = kb.aggregate(LayeredVector(s));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == d0[i]);
}

TEST_CASE("equal logits average two stored vectors") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s);
    Rng rng(3);
    const LayeredVector a = random_vec(s, rng);
    const LayeredVector b = random_vec(s, rng);
    kb.push(a, 0.3);
    kb.push(b, 0.3);
    const LayeredVector out = kb.aggregate(LayeredVector(s));
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == doctest::Approx(0.5 * (a[i] + b[i])).epsilon(1e-12));
}

TEST_CASE("preserve keeps the aggregated offset fixed") {
    const SchemaPtr s = schema3();
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        KnowledgeBase kb(s, 32);
        const std::size_t n = rng.next_u64() % 8;
        for (std::size_t k = 0; k < n; ++k)
            kb.push(random_vec(s, rng), rng.uniform(-0.5, 0.5));
        LayeredVector theta = random_vec(s, rng, rng.uniform(0.001, 1.0));
        const LayeredVector before = kb.aggregate(theta);
        kb.preserve(theta);
        const LayeredVector after = kb.aggregate(theta);
        double drift = 0.0;
        for (std::size_t i = 0; i < before.size(); ++i)
            drift = std::max(drift, std::abs(after[i] - before[i]));
        CHECK(drift <= 1e-12);
    }
}

TEST_CASE("new coefficient follows the closed form when theta-tilde is large") {
    const SchemaPtr s = schema3();
    Rng rng(5);
    int exercised = 0;
    for (int trial = 0; trial < 100; ++trial) {
        KnowledgeBase kb(s, 32);
        const std::size_t n = 1 + rng.next_u64() % 6;
        for (std::size_t k = 0; k < n; ++k)
            kb.push(random_vec(s, rng), rng.uniform(-0.3, 0.3));
        LayeredVector theta = random_vec(s, rng, 0.2);
        const double m = theta.max_layer_mean_abs();
        if (m <= kb.w_max()) continue;
        ++exercised;
        const double se = m / kb.w_max();
        LayeredVector theta_before = theta;
        const auto res = kb.preserve(theta);
        // alpha_t = (s - 1) / s, read back through the numeric softmax
        CHECK(std::abs(res.alpha_t - (se - 1.0) / se) <= 1e-9);
        // re-initialized theta-tilde shrinks to max layer mean-abs == w_m
        CHECK(std::abs(theta.max_layer_mean_abs() - kb.w_max()) <= 1e-9);
        // elementwise theta' == (1 - alpha_t) * theta
        for (std::size_t i = 0; i < theta.size(); ++i)
            CHECK(theta[i] ==
                  doctest::Approx((1.0 - res.alpha_t) * theta_before[i]).epsilon(1e-9));
    }
    CHECK(exercised > 50);
}

TEST_CASE("small theta-tilde gets a zero coefficient and is untouched") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s, 32);
    Rng rng(6);
    kb.push(random_vec(s, rng), 0.1);
    LayeredVector theta(s);
    for (double& v : theta.flat()) v = 0.001; // mean-abs well below w_m = 0.01
    const LayeredVector saved = theta;
    const auto res = kb.preserve(theta);
    CHECK(res.new_logit == kNegInf);
    CHECK(res.alpha_t == 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(theta[i] == saved[i]);
}

TEST_CASE("preserving a zero theta-tilde stores the pure ensemble") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s, 32);
    Rng rng(7);
    kb.push(random_vec(s, rng), 0.2);
    kb.push(random_vec(s, rng), -0.1);
    LayeredVector theta(s);
    const LayeredVector ensemble = kb.aggregate(theta);
    kb.preserve(theta);
    const auto& stored = kb.vectors().back().delta;
    for (std::size_t i = 0; i < stored.size(); ++i) CHECK(stored[i] == ensemble[i]);
    for (double v : theta.flat()) CHECK(v == 0.0);
}

TEST_CASE("first preserve into an empty store works and keeps the offset") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s, 32);
    Rng rng(8);
    LayeredVector theta = random_vec(s, rng, 0.3);
    const LayeredVector before = kb.aggregate(theta);
    kb.preserve(theta);
    CHECK(kb.size() == 1);
    const LayeredVector after = kb.aggregate(theta);
    for (std::size_t i = 0; i < after.size(); ++i)
        CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
}

TEST_CASE("duplicate vectors score similarity 1") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s);
    Rng rng(9);
    const LayeredVector a = random_vec(s, rng);
    kb.push(random_vec(s, rng), 0.0);
    kb.push(a, 0.0);
    kb.push(a, 0.0);
    const auto pair = kb.most_similar_pair();
    CHECK(pair.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pair.i == 1);
    CHECK(pair.j == 2);
}

TEST_CASE("layerwise cosine averages over layers") {
    auto s = std::make_shared<ParamSchema>();
    s->layers.push_back({"a", 2});
    s->layers.push_back({"b", 2});
    LayeredVector u(s), v(s);
    // layer a: parallel (cos 1); layer b: orthogonal (cos 0)
    u.layer(0)[0] = 1.0;
    v.layer(0)[0] = 2.0;
    u.layer(1)[0] = 1.0;
    v.layer(1)[1] = 1.0;
    CHECK(layered_cosine(u, v) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zero-norm layers contribute zero similarity") {
    auto s = std::make_shared<ParamSchema>();
    s->layers.push_back({"a", 2});
    LayeredVector u(s), v(s);
    v.layer(0)[0] = 1.0;
    CHECK(layered_cosine(u, v) == 0.0);
}

TEST_CASE("orthogonal vectors tie and the smallest index pair wins") {
    auto s = std::make_shared<ParamSchema>();
    s->layers.push_back({"a", 4});
    KnowledgeBase kb(s);
    for (std::size_t k = 0; k < 4; ++k) {
        LayeredVector v(s);
        v.layer(0)[k] = 1.0;
        kb.push(v, 0.0);
    }
    const auto pair = kb.most_similar_pair();
    CHECK(pair.value == 0.0);
    CHECK(pair.i == 0);
    CHECK(pair.j == 1);
}

TEST_CASE("eviction removes the older member of the most similar pair") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s, 5);
    Rng rng(10);
    // creation indices 0..4
    for (int k = 0; k < 5; ++k) kb.push(random_vec(s, rng), 0.0);
    // make creation indices 2 and 5 nearly parallel, then exceed capacity
    const LayeredVector base = kb.vectors()[2].delta;
    LayeredVector near = base;
    near.scale(1.5);
    kb.push(near, 0.0); // creation index 5, size 6 > 5
    const auto evictions = kb.evict_if_full();
    REQUIRE(evictions.size() == 1);
    CHECK(evictions[0].creation_index == 2);
    CHECK(kb.size() == 5);
    // the newer twin survived
    bool found = false;
    for (const auto& dv : kb.vectors())
        if (dv.creation_index == 5) found = true;
    CHECK(found);
}

TEST_CASE("eviction is a no-op under capacity") {
    const SchemaPtr s = schema3();
    KnowledgeBase kb(s, 8);
    Rng rng(11);
    for (int k = 0; k < 5; ++k) kb.push(random_vec(s, rng), 0.0);
    CHECK(kb.evict_if_full().empty());
    CHECK(kb.size() == 5);
}

TEST_CASE("capacity holds over many insertions and matches the brute-force oracle") {
    const SchemaPtr s = schema3();
    const std::size_t cap = 16;
    KnowledgeBase kb(s, cap);
    Rng rng(12);
    for (int step = 0; step < 300; ++step) {
        kb.push(random_vec(s, rng), rng.uniform(-0.5, 0.5));
        if (kb.size() > cap) {
            const OracleChoice expect = brute_force_choice(kb);
            const auto evictions = kb.evict_if_full();
            REQUIRE(evictions.size() == 1);
            CHECK(evictions[0].pair.i == expect.i);
            CHECK(evictions[0].pair.j == expect.j);
            CHECK(evictions[0].position == expect.victim_pos);
        }
        CHECK(kb.size() <= cap);
        // similarity cache equals full recomputation
        if (step % 37 == 0) {
            const auto& vs = kb.vectors();
            for (std::size_t i = 0; i < vs.size(); ++i)
                for (std::size_t j = i + 1; j < vs.size(); ++j)
                    CHECK(kb.similarity(i, j) ==
                          doctest::Approx(layered_cosine(vs[i].delta, vs[j].delta))
                              .epsilon(1e-12));
        }
    }
}

TEST_CASE("eviction choice is deterministic for a fixed state") {
    const SchemaPtr s = schema3();
    Rng rng(13);
    KnowledgeBase a(s, 4), b(s, 4);
    for (int k = 0; k < 6; ++k) {
        const LayeredVector v = random_vec(s, rng);
        a.push(v, 0.0);
        b.push(v, 0.0);
    }
    const auto ea = a.evict_if_full();
    const auto eb = b.evict_if_full();
    REQUIRE(ea.size() == eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i)
        CHECK(ea[i].creation_index == eb[i].creation_index);
}

TEST_SUITE_END();
