#include <gtest/gtest.h>

#include <cmath>

#include "iscc/rng.hpp"

using namespace iscc;

TEST(Streams, Deterministic) {
    auto a = make_stream(42, {1, 2, 3});
    auto b = make_stream(42, {1, 2, 3});
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Streams, PathsDiffer) {
    auto a = make_stream(42, {1, 2});
    auto b = make_stream(42, {2, 1});
    auto c = make_stream(43, {1, 2});
    auto d = make_stream(42, {1});
    const auto x = a();
    EXPECT_NE(x, b());
    EXPECT_NE(x, c());
    EXPECT_NE(x, d());
}

TEST(Streams, NearlyUncorrelated) {
    auto a = make_stream(7, {static_cast<std::uint64_t>(StreamTag::kSensing)});
    auto b = make_stream(7, {static_cast<std::uint64_t>(StreamTag::kChannel)});
    NormalDist n(0.0, 1.0);
    const int m = 200000;
    double sxy = 0;
    for (int i = 0; i < m; ++i) sxy += n(a) * n(b);
    EXPECT_LT(std::abs(sxy / m), 5.0 / std::sqrt(m));
}

TEST(IsotropicGaussian, TotalVariance) {
    auto rng = make_stream(1);
    const int dim = 5, reps = 40000;
    double sum_sq = 0;
    for (int r = 0; r < reps; ++r)
        for (double v : isotropic_gaussian(dim, 2.5, rng)) sum_sq += v * v;
    // E = 2.5, sd of the mean = 2.5 * sqrt(2 / (dim * reps))
    EXPECT_NEAR(sum_sq / reps, 2.5, 4 * 2.5 * std::sqrt(2.0 / (dim * reps)));
}

TEST(IsotropicGaussian, ZeroVarianceAndEmpty) {
    auto rng = make_stream(1);
    for (double v : isotropic_gaussian(4, 0.0, rng)) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(isotropic_gaussian(0, 1.0, rng).empty());
}
