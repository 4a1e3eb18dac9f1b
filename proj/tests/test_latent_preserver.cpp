#include <gtest/gtest.h>

#include "support.hpp"

using namespace edloc;

namespace {

bool rows_equal(std::span<const float> a, std::span<const float> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

PreservationPlan default_plan() {
  PreservationPlan p;
  p.schedule = linear_schedule(kDefaultTimesteps);
  return p;
}

}  // namespace

TEST(InvertedLatent, Endpoints) {
  Xoshiro256ss rng(1);
  auto zi = support::random_gaussian(rng, 6, 4), zs = support::random_gaussian(rng, 6, 4);
  EXPECT_EQ(inverted_latent(zi, zs, 0.0f), zs);
  EXPECT_EQ(inverted_latent(zi, zs, 1.0f), zi);
}

TEST(InvertedLatent, HandConvexCombination) {
  auto out = inverted_latent(Matrix(1, 2, std::vector<float>{4, 0}),
                             Matrix(1, 2, std::vector<float>{0, 4}), 0.25f);
  EXPECT_EQ(out, Matrix(1, 2, std::vector<float>{1, 3}));
}

TEST(InvertedLatent, Errors) {
  EXPECT_THROW(inverted_latent(Matrix(2, 2), Matrix(2, 3), 0.5f), Error);
  EXPECT_THROW(inverted_latent(Matrix(2, 2), Matrix(2, 2), 1.5f), Error);
  EXPECT_THROW(inverted_latent(Matrix(2, 2), Matrix(2, 2), -0.1f), Error);
}

TEST(Blend, AllOnesAllZeros) {
  Xoshiro256ss rng(2);
  auto zc = support::random_gaussian(rng, 5, 3), zv = support::random_gaussian(rng, 5, 3);
  EXPECT_EQ(blend(zc, zv, EditMask::from_bits(std::vector<std::uint8_t>(5, 1))), zc);
  EXPECT_EQ(blend(zc, zv, EditMask::from_bits(std::vector<std::uint8_t>(5, 0))), zv);
}

TEST(Blend, RowSelection) {
  Matrix zc(2, 2, std::vector<float>{1, 2, 3, 4}), zv(2, 2, std::vector<float>{5, 6, 7, 8});
  EXPECT_EQ(blend(zc, zv, EditMask::from_bits({1, 0})), Matrix(2, 2, std::vector<float>{1, 2, 7, 8}));
}

TEST(Blend, Errors) {
  EXPECT_THROW(blend(Matrix(2, 2), Matrix(2, 2), EditMask::from_bits({1})), Error);
  EXPECT_THROW(blend(Matrix(2, 2), Matrix(3, 2), EditMask::from_bits({1, 0})), Error);
}

TEST(ApplyPlan, SkipsUnappliedSteps) {
  Xoshiro256ss rng(3);
  auto z = support::random_gaussian(rng, 4, 2);
  auto plan = default_plan();
  EXPECT_EQ(apply_plan(plan, 4, z, Matrix(4, 2), Matrix(4, 2), nullptr), z);
}

TEST(ApplyPlan, ZeroMaskZeroSigmaGivesSource) {
  Xoshiro256ss rng(4);
  auto zc = support::random_gaussian(rng, 4, 2), zi = support::random_gaussian(rng, 4, 2),
       zs = support::random_gaussian(rng, 4, 2);
  auto plan = default_plan();
  plan.apply_at = {27};  // sigma = 0 at the last step
  auto mask = EditMask::from_bits(std::vector<std::uint8_t>(4, 0));
  EXPECT_EQ(apply_plan(plan, 27, zc, zi, zs, &mask), zs);
}

TEST(ApplyPlan, MissingMaskOnAppliedStep) {
  auto plan = default_plan();
  try {
    apply_plan(plan, 10, Matrix(2, 2), Matrix(2, 2), Matrix(2, 2), nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_record);
  }
}

TEST(ApplyPlan, DefaultConfigurationBlendsThreeTimes) {
  auto plan = default_plan();
  EXPECT_NO_THROW(plan.validate());
  Xoshiro256ss rng(5);
  auto zi = support::random_gaussian(rng, 8, 3), zs = support::random_gaussian(rng, 8, 3);
  auto mask = support::random_mask(rng, 8, 0.5);
  int blends = 0;
  for (std::uint32_t step = 0; step < kDefaultTimesteps; ++step) {
    auto zc = support::random_gaussian(rng, 8, 3);
    if (apply_plan(plan, step, zc, zi, zs, &mask) != zc) ++blends;
  }
  EXPECT_EQ(blends, 3);
}

TEST(ApplyPlan, ValidateRejectsOutOfRangeSteps) {
  PreservationPlan plan;
  plan.schedule = linear_schedule(8);
  EXPECT_THROW(plan.validate(), Error);
  plan.apply_at = {1, 7};
  EXPECT_NO_THROW(plan.validate());
}

TEST(Properties, RegionConservationAndIdempotence) {
  Xoshiro256ss rng(6);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 1 + rng.below(40), d = 1 + rng.below(8);
    auto zc = support::random_gaussian(rng, n, d), zi = support::random_gaussian(rng, n, d),
         zs = support::random_gaussian(rng, n, d);
    const auto sigma = static_cast<float>(rng.uniform());
    auto m = support::random_mask(rng, n, 0.5);
    auto zinv = inverted_latent(zi, zs, sigma);
    auto out = blend(zc, zinv, m);
    ASSERT_TRUE(out.same_shape(zc));
    for (std::size_t r = 0; r < n; ++r)
      ASSERT_TRUE(rows_equal(out.row(r), m[r] ? zc.row(r) : zinv.row(r)));
    ASSERT_EQ(blend(out, zinv, m), out);
  }
}
