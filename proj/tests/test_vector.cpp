#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "sksa/error.hpp"
#include "sksa/vector.hpp"
#include "support.hpp"

using namespace sksa;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Ok;
}

}  // namespace

TEST(Normalize, ThreeFourFive) {
    const std::vector<float> v{3.0f, 4.0f};
    const auto n = normalize(v);
    EXPECT_NEAR(n[0], 0.6, 1e-7);
    EXPECT_NEAR(n[1], 0.8, 1e-7);
}

TEST(Normalize, AlreadyUnit) {
    std::vector<float> v(512, 0.0f);
    v[0] = 1.0f;
    EXPECT_EQ(normalize(v), v);
}

TEST(Normalize, Idempotent) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        const auto v = testing_support::gaussian(rng, 512);
        const auto once = normalize(v);
        const auto twice = normalize(once);
        for (std::size_t j = 0; j < v.size(); ++j) ASSERT_NEAR(once[j], twice[j], 1e-6);
        EXPECT_NEAR(l2_norm(once), 1.0, kNormTolerance);
    }
}

TEST(Normalize, Errors) {
    EXPECT_EQ(code_of([] { normalize(std::vector<float>{0.0f, 0.0f}); }), ErrorCode::ZeroVector);
    EXPECT_EQ(code_of([] { normalize(std::vector<float>{1e-13f, 0.0f}); }), ErrorCode::ZeroVector);
    EXPECT_EQ(code_of([] { normalize(std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()}); }),
              ErrorCode::NonFinite);
    EXPECT_EQ(code_of([] { normalize(std::vector<float>{std::numeric_limits<float>::infinity()}); }), ErrorCode::NonFinite);
}

TEST(Cosine, Examples) {
    EXPECT_DOUBLE_EQ(cosine_similarity(std::vector<float>{2, 3}, std::vector<float>{2, 3}), 1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
    EXPECT_NEAR(cosine_similarity(std::vector<float>{1, 1}, std::vector<float>{1, 0}), 1.0 / std::sqrt(2.0), 1e-4);
}

TEST(Cosine, ClampedAndChecked) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 100; ++i) {
        const auto a = testing_support::gaussian(rng, 16);
        const double c = cosine_similarity(a, a);
        EXPECT_LE(c, 1.0);
        EXPECT_GE(cosine_similarity(a, testing_support::gaussian(rng, 16)), -1.0);
    }
    EXPECT_EQ(code_of([] { cosine_similarity(std::vector<float>{1, 0}, std::vector<float>{1, 0, 0}); }),
              ErrorCode::DimensionMismatch);
    EXPECT_EQ(code_of([] { cosine_similarity(std::vector<float>{0, 0}, std::vector<float>{1, 0}); }), ErrorCode::ZeroVector);
}

TEST(Hashing, Fnv1aKnownValues) {
    // Published FNV-1a 64 test vectors.
    EXPECT_EQ(fnv1a64(std::string_view("")), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64(std::string_view("a")), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64(std::string_view("foobar")), 0x85944171f73967e8ULL);
}

TEST(Hashing, SplitmixReference) {
    // Reference outputs of splitmix64 seeded with 1234567.
    std::uint64_t s = 1234567;
    EXPECT_EQ(splitmix64(s), 6457827717110365317ULL);
    EXPECT_EQ(splitmix64(s), 3203168211198807973ULL);
    EXPECT_EQ(splitmix64(s), 9817491932198370423ULL);
}

TEST(Hashing, HexRoundTrip) {
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
    EXPECT_EQ(parse_hex64("0000000000000abc"), 0xabcULL);
    EXPECT_EQ(parse_hex64(hex64(0xfedcba9876543210ULL)), 0xfedcba9876543210ULL);
    EXPECT_THROW(parse_hex64("xyz"), Error);
}

TEST(Hashing, VectorDigestIsByteHash) {
    const std::vector<float> v{1.0f, -2.5f};
    std::vector<std::uint8_t> bytes(sizeof(float) * 2);
    std::memcpy(bytes.data(), v.data(), bytes.size());
    EXPECT_EQ(vector_digest(v), fnv1a64(bytes));
}
