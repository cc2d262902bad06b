#include <gtest/gtest.h>

#include <cmath>

#include "tswm/rng.hpp"

using tswm::Rng;

TEST(Rng, MatchesReferenceSplitmix64) {
  // First outputs of the reference splitmix64 generator seeded with 0.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
}

TEST(Rng, UniformRanges) {
  Rng rng(5);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double o = rng.uniform_open();
    ASSERT_GT(o, 0.0);
    ASSERT_LT(o, 1.0);
    ASSERT_LT(rng.below(7), 7u);
  }
}

TEST(Rng, MomentsOfDerivedVariates) {
  Rng rng(11);
  const int n = 200000;
  double sn = 0, sn2 = 0, sg = 0, sgu = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    sg += rng.gamma(3.0);
    sgu += rng.gumbel();
  }
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
  EXPECT_NEAR(sg / n, 3.0, 0.02);
  EXPECT_NEAR(sgu / n, 0.5772156649, 0.01); // Euler-Mascheroni
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_NE(tswm::derive_seed(1, 0), tswm::derive_seed(1, 1));
  EXPECT_NE(tswm::derive_seed(1, 0), tswm::derive_seed(2, 0));
  EXPECT_EQ(tswm::derive_seed(9, 4), tswm::derive_seed(9, 4));
}
