#include <gtest/gtest.h>

#include "support.hpp"

using namespace edloc;

namespace {

AttentionBundle bundle(Matrix sa, Matrix ca, std::uint32_t layer = 0) {
  return AttentionBundle{layer, 0, Stream::target, std::move(ca), std::move(sa)};
}

AttentionMap map_of(std::vector<double> v) {
  AttentionMap m;
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST(Propagate, IdentityTransition) {
  Matrix ca(3, 2, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.05f});
  MatrixD out = propagate(Matrix::identity(3), ca);
  for (std::size_t i = 0; i < ca.size(); ++i)
    EXPECT_EQ(out.values()[i], static_cast<double>(ca.values()[i]));
}

TEST(Propagate, HandMultiply) {
  Matrix sa(2, 2, 0.5f);
  MatrixD out = propagate(sa, Matrix::identity(2));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Propagate, ZeroSelfAttention) {
  Xoshiro256ss rng(1);
  MatrixD out = propagate(Matrix(4, 4), support::random_substochastic(rng, 4, 3));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Propagate, DimensionMismatch) {
  EXPECT_THROW(propagate(Matrix(3, 3), Matrix(2, 2)), Error);
}

TEST(Propagate, MatchesBruteForceOracle) {
  Xoshiro256ss rng(2);
  for (int i = 0; i < 200; ++i) {
    auto b = support::random_bundle(rng, 16, 16);
    MatrixD fast = propagate(b);
    MatrixD slow = brute_matmul(b.sa, b.ca);
    for (std::size_t k = 0; k < fast.size(); ++k)
      ASSERT_NEAR(fast.values()[k], slow.values()[k], 1e-5);
  }
}

TEST(Propagate, RowMassBounded) {
  Xoshiro256ss rng(3);
  for (int i = 0; i < 100; ++i) {
    auto b = support::random_bundle(rng, 12, 5);
    MatrixD out = propagate(b);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double sum = 0, sa_sum = 0;
      for (double v : out.row(r)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      for (float v : b.sa.row(r)) sa_sum += v;
      EXPECT_LE(sum, sa_sum + 1e-6);
    }
  }
}

TEST(Aggregate, SingleColumnNormalized) {
  MatrixD m(3, 1, std::vector<double>{0.2, 0.8, 0.4});
  std::vector<std::uint32_t> sel = {0};
  auto map = aggregate(std::span<const MatrixD>(&m, 1), sel);
  EXPECT_DOUBLE_EQ(map.values[0], 0.0);
  EXPECT_DOUBLE_EQ(map.values[1], 1.0);
  EXPECT_NEAR(map.values[2], 1.0 / 3.0, 1e-12);
}

TEST(Aggregate, ConstantMapIsZero) {
  MatrixD m(2, 1, std::vector<double>{0.5, 0.5});
  std::vector<std::uint32_t> sel = {0};
  auto map = aggregate(std::span<const MatrixD>(&m, 1), sel);
  EXPECT_EQ(map.values, (std::vector<double>{0.0, 0.0}));
}

TEST(Aggregate, LayerSumThenDegenerate) {
  std::vector<MatrixD> layers = {MatrixD(2, 1, std::vector<double>{1, 0}),
                                 MatrixD(2, 1, std::vector<double>{0, 1})};
  std::vector<std::uint32_t> sel = {0};
  EXPECT_EQ(aggregate(layers, sel).values, (std::vector<double>{0.0, 0.0}));
}

TEST(Aggregate, SumsSelectedColumnsOnly) {
  MatrixD m(2, 3, std::vector<double>{1, 0, 5, 0, 1, 0});
  std::vector<std::uint32_t> sel = {0, 1};
  EXPECT_EQ(aggregate(std::span<const MatrixD>(&m, 1), sel).values,
            (std::vector<double>{0.0, 0.0}));
  sel = {2};
  EXPECT_EQ(aggregate(std::span<const MatrixD>(&m, 1), sel).values,
            (std::vector<double>{1.0, 0.0}));
}

TEST(Aggregate, Errors) {
  std::vector<std::uint32_t> sel = {0};
  EXPECT_THROW(aggregate({}, sel), Error);
  MatrixD m(2, 1);
  EXPECT_THROW(aggregate(std::span<const MatrixD>(&m, 1), {}), Error);
  std::vector<std::uint32_t> bad = {1};
  EXPECT_THROW(aggregate(std::span<const MatrixD>(&m, 1), bad), Error);
}

TEST(Threshold, StrictBoundary) {
  auto mask = threshold(map_of({0.0, 0.49, 0.51, 1.0}), 0.5);
  EXPECT_EQ(mask.bits, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_EQ(threshold(map_of({0.5}), 0.5).bits, (std::vector<std::uint8_t>{0}));
}

TEST(Threshold, DefaultTau) { EXPECT_EQ(kDefaultTau, 0.5); }

TEST(Threshold, ZeroMapEmpty) {
  for (double tau : {0.01, 0.5, 0.99}) EXPECT_TRUE(threshold(map_of({0, 0, 0}), tau).none());
}

TEST(Threshold, TauRange) {
  for (double tau : {0.0, 1.0, -0.1, 1.5, std::nan("")})
    EXPECT_THROW(threshold(map_of({0.2}), tau), Error);
}

TEST(RawMask, IdentityMatchesPropagated) {
  Xoshiro256ss rng(4);
  for (int i = 0; i < 50; ++i) {
    auto b = support::random_bundle(rng, 16, 6);
    b.sa = Matrix::identity(16);
    std::vector<std::uint32_t> sel = {1, 3};
    auto bs = std::span<const AttentionBundle>(&b, 1);
    EXPECT_TRUE(attention_mask(bs, sel, 0.5).same_bits(
        attention_mask_without_propagation(bs, sel, 0.5)));
  }
}

TEST(RawMask, HotColumnSelectsOneToken) {
  Matrix ca(5, 2, 0.1f);
  ca(3, 1) = 0.9f;
  auto b = bundle(Matrix::identity(5), ca);
  std::vector<std::uint32_t> sel = {1};
  auto m = attention_mask_without_propagation(std::span<const AttentionBundle>(&b, 1), sel, 0.5);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 0, 0, 1, 0}));
  EXPECT_EQ(m.stage, MaskStage::attention_raw);
}

TEST(RawMask, PropagationImprovesCoverageOnSmearedScene) {
  double raw = 0, prop = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneParams p;
    p.task = Task::addition;
    p.seed = seed;
    SyntheticScene sc(p);
    std::vector<AttentionBundle> bs;
    for (auto l : sc.layers()) bs.push_back(sc.attention(Stream::target, l, 4));
    auto sel = sc.instruction().selected_text_indices;
    auto gt = sc.ground_truth();
    raw += iou(attention_mask_without_propagation(bs, sel, 0.5), gt);
    prop += iou(attention_mask(bs, sel, 0.5), gt);
  }
  EXPECT_GT(prop, raw);
}

// Positive rescaling of the summed map leaves the normalized map unchanged.
TEST(Properties, ScaleCovariance) {
  Xoshiro256ss rng(5);
  for (int i = 0; i < 300; ++i) {
    MatrixD m(16, 3);
    for (auto& v : m.values()) v = rng.uniform();
    MatrixD scaled = m;
    const double k = std::exp(rng.uniform(-5.0, 5.0));
    for (auto& v : scaled.values()) v *= k;
    std::vector<std::uint32_t> sel = {0, 2};
    auto a = aggregate(std::span<const MatrixD>(&m, 1), sel);
    auto b = aggregate(std::span<const MatrixD>(&scaled, 1), sel);
    for (std::size_t j = 0; j < a.values.size(); ++j)
      ASSERT_NEAR(a.values[j], b.values[j], 1e-12);
    const double tau = rng.uniform(0.05, 0.95);
    // exclude ties sitting within rounding of tau
    bool near_tau = std::any_of(a.values.begin(), a.values.end(),
                                [&](double v) { return std::abs(v - tau) < 1e-9; });
    if (!near_tau) {
      EXPECT_TRUE(threshold(a, tau).same_bits(threshold(b, tau)));
    }
  }
}

TEST(Properties, ThresholdMonotone) {
  Xoshiro256ss rng(6);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(64);
    for (auto& x : v) x = rng.below(4) == 0 ? 0.5 : rng.uniform();
    double t1 = rng.uniform(0.001, 0.999), t2 = rng.uniform(0.001, 0.999);
    if (t1 > t2) std::swap(t1, t2);
    ASSERT_TRUE(threshold(map_of(v), t2).subset_of(threshold(map_of(v), t1)));
  }
}
