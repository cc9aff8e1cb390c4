#include <gtest/gtest.h>

#include <set>

#include "glua/rng.hpp"
#include "glua/tensor.hpp"

using namespace glua;

TEST(Tensor, DataLengthMatchesShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.last_dim(), 4u);
  for (float v : t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, RejectsMismatchedPayload) {
  EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
}

TEST(Tensor, RowMajorAccess) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 0), 4.0);
  EXPECT_EQ(t.at(0, 2), 3.0);
  EXPECT_EQ(shape_str(t.shape()), "[2x3]");
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> r = t.reshaped({3, 2});
  EXPECT_EQ(r.vec(), t.vec());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, CastPreservesShape) {
  Tensor<double> t({1, 2}, {0.5, -1.25});
  Tensor<float> f = t.cast<float>();
  EXPECT_EQ(f.shape(), t.shape());
  EXPECT_EQ(f[1], -1.25f);
  EXPECT_EQ(Tensor<float>::dtype, DType::f32);
  EXPECT_EQ(Tensor<double>::dtype, DType::f64);
}

TEST(Tensor, ItemNeedsSingleElement) {
  EXPECT_EQ(Tensor<double>::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor<double>({2}).item(), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = rng.uniform(-2.0, 3.0);
    ASSERT_GE(v, -2.0);
    ASSERT_LT(v, 3.0);
  }
}

TEST(Rng, BelowCoversRange) {
  Rng rng(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = rng.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_NEAR(var, 4.0, 0.08);
}

TEST(Rng, DerivedSeedsAreDistinct) {
  EXPECT_NE(derive_seed(1, "blocks.0.attn.w_q"), derive_seed(1, "blocks.0.attn.w_k"));
  EXPECT_NE(derive_seed(1, "x"), derive_seed(2, "x"));
  EXPECT_EQ(derive_seed(5, "x"), derive_seed(5, "x"));
  EXPECT_NE(derive_seed(5, std::uint64_t{0}), derive_seed(5, std::uint64_t{1}));
}

TEST(Rng, Fnv1aReferenceValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
