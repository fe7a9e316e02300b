#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "xbt/rng.hpp"

using namespace xbt;

TEST(SplitMix, KnownValues) {
  // Reference stream of splitmix64 seeded with 0: each output is mix(state += golden).
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_NE(splitmix64(1), splitmix64(2));
}

TEST(Rng, SameSeedSameSequence) {
  RngStream a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, FrozenFirstDraws) {
  // Frozen so a change of generator or seeding shows up as a test failure.
  RngStream r(0);
  const std::uint64_t first = r.next_u64();
  RngStream again(0);
  EXPECT_EQ(again.next_u64(), first);
  EXPECT_EQ(first, 0x99ec5f36cb75f2b4ULL);
}

TEST(Rng, UniformRange) {
  RngStream r(1);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(Rng, BelowIsUnbiasedAndInRange) {
  RngStream r(2);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, NormalMoments) {
  RngStream r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
