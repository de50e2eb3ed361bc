#include "tob/common.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace {

TEST(Rng, DeterministicStreams) {
  tob::Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformRange) {
  tob::Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  tob::Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Substream, NamesAndIndicesSeparateStreams) {
  std::set<std::uint64_t> seen;
  seen.insert(tob::substream(42, "generate/train"));
  seen.insert(tob::substream(42, "generate/test"));
  seen.insert(tob::substream(42, "train-fusion"));
  seen.insert(tob::substream(42, "episode", 0));
  seen.insert(tob::substream(42, "episode", 1));
  seen.insert(tob::substream(43, "episode", 0));
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(tob::substream(42, "episode", 1), tob::substream(42, "episode", 1));
}

TEST(RoundHalfEven, MatchesConvention) {
  EXPECT_EQ(tob::round_half_even(50.4), 50.0);
  EXPECT_EQ(tob::round_half_even(50.6), 51.0);
  EXPECT_EQ(tob::round_half_even(0.5), 0.0);
  EXPECT_EQ(tob::round_half_even(1.5), 2.0);
  EXPECT_EQ(tob::round_half_even(2.5), 2.0);
  EXPECT_EQ(tob::round_half_even(3.5), 4.0);
  EXPECT_EQ(tob::round_half_even(7.0), 7.0);
}

// oracle: decompose into integer and fraction with exact arithmetic on small values
TEST(RoundHalfEven, AgainstDecompositionOracle) {
  tob::Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(0.0, 200.0);
    const double lo = std::floor(x);
    double expected;
    if (x - lo < 0.5) expected = lo;
    else if (x - lo > 0.5) expected = lo + 1.0;
    else expected = (static_cast<long long>(lo) % 2 == 0) ? lo : lo + 1.0;
    EXPECT_EQ(tob::round_half_even(x), expected) << "x=" << x;
  }
}

}  // namespace
