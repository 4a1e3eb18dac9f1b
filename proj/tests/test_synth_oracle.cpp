#include <gtest/gtest.h>

#include "support.hpp"

using namespace edloc;

TEST(Iou, HandExamples) {
  EXPECT_NEAR(iou(EditMask::from_bits({1, 1, 0, 0}), EditMask::from_bits({0, 1, 1, 0})),
              1.0 / 3.0, 1e-12);
  EXPECT_EQ(iou(EditMask::from_bits({0, 0}), EditMask::from_bits({0, 0})), 1.0);
  EXPECT_EQ(iou(EditMask::from_bits({1, 0}), EditMask::from_bits({0, 0})), 0.0);
  EXPECT_THROW(iou(EditMask::from_bits({1}), EditMask::from_bits({1, 0})), Error);
}

TEST(BruteMatmul, IdentityAndZero) {
  Xoshiro256ss rng(1);
  auto m = support::random_gaussian(rng, 4, 3);
  auto out = brute_matmul(Matrix::identity(4), m);
  for (std::size_t i = 0; i < m.size(); ++i)
    EXPECT_EQ(out.values()[i], static_cast<double>(m.values()[i]));
  const auto zero = brute_matmul(Matrix(2, 4), m);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(brute_matmul(Matrix(2, 2), m), Error);
}

TEST(LinearSchedule, Endpoints) {
  auto s = linear_schedule(5);
  EXPECT_EQ(s.sigma.front(), 1.0f);
  EXPECT_EQ(s.sigma.back(), 0.0f);
  EXPECT_EQ(s.sigma[2], 0.5f);
}

TEST(Scene, InfeasibleGeometryRejected) {
  SceneParams p;
  p.object_scale_min = 0.3;
  p.object_scale_max = 0.9;
  EXPECT_THROW(p.validate(), Error);
  SceneParams tiny;
  tiny.grid_h = 2;
  EXPECT_THROW(tiny.validate(), Error);
}

TEST(Scene, SameSeedSameBytes) {
  SceneParams p;
  p.seed = 77;
  p.grid_h = p.grid_w = 8;
  p.n_layers = 2;
  p.n_timesteps = 2;
  support::TempDir a("synth_a"), b("synth_b");
  SyntheticScene(p).write(a.path());
  SyntheticScene(p).write(b.path());
  auto ta = support::tree_contents(a.path()), tb = support::tree_contents(b.path());
  ASSERT_FALSE(ta.empty());
  EXPECT_EQ(ta, tb);
  p.seed = 78;
  support::TempDir c("synth_c");
  SyntheticScene(p).write(c.path());
  EXPECT_NE(ta, support::tree_contents(c.path()));
}

TEST(Scene, WrittenSceneValidatesAndReloads) {
  SceneParams p;
  p.seed = 3;
  p.n_layers = 3;
  p.n_timesteps = 2;
  SyntheticScene sc(p);
  support::TempDir dir("synth_rt");
  sc.write(dir.path());
  EXPECT_TRUE(validate_store(dir.path()).ok());
  RecordStore store(dir.path());
  EXPECT_EQ(store.layers(), sc.layers());
  EXPECT_TRUE(store.ground_truth().same_bits(sc.ground_truth()));
  EXPECT_EQ(store.attention(Stream::source, 1, 1).ca, sc.attention(Stream::source, 1, 1).ca);
  EXPECT_EQ(store.features(Stream::target, 2, 0).f, sc.features(Stream::target, 2, 0).f);
}

TEST(Scene, GroundTruthFollowsTaskPolicy) {
  for (Task task : kAllTasks) {
    SyntheticScene sc(SceneParams::noiseless(task, 5));
    auto gt = sc.ground_truth();
    EXPECT_FALSE(gt.none()) << to_string(task);
    EXPECT_TRUE(gt.same_bits(combine(task, sc.ground_truth(Stream::target),
                                     sc.ground_truth(Stream::source))));
  }
}

TEST(Scene, NoiselessLocalizationIsExact) {
  for (Task task : {Task::addition, Task::removal, Task::replacement})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SyntheticScene sc(SceneParams::noiseless(task, seed));
      LocalizeConfig cfg;
      cfg.morphology.dilation_radius = 0;
      for (auto t : sc.timesteps()) {
        auto loc = localize_timestep(sc, cfg, t);
        EXPECT_EQ(iou(loc.postprocessed, sc.ground_truth()), 1.0)
            << to_string(task) << " seed " << seed << " t " << t;
      }
    }
}

TEST(Scene, RemovalPrefersSourceStream) {
  double src = 0, tgt = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SceneParams p;
    p.task = Task::removal;
    p.seed = seed;
    SyntheticScene sc(p);
    auto loc = localize_timestep(sc, LocalizeConfig{}, sc.timesteps()[3]);
    src += iou(loc.src.feature, sc.ground_truth());
    tgt += iou(loc.tgt.feature, sc.ground_truth());
  }
  EXPECT_GT(src, tgt);
}

TEST(Scene, AttentionRowsSubstochastic) {
  SceneParams p;
  p.seed = 9;
  SyntheticScene sc(p);
  auto b = sc.attention(Stream::target, 0, 0);
  for (std::size_t i = 0; i < b.ca.rows(); ++i) {
    double sa = 0, ca = 0;
    for (float v : b.sa.row(i)) sa += v;
    for (float v : b.ca.row(i)) ca += v;
    EXPECT_LE(sa, 1.0 + 1e-6);
    EXPECT_LE(ca, 1.0 + 1e-6);
  }
  EXPECT_THROW(sc.attention(Stream::target, 99, 0), Error);
  EXPECT_THROW(sc.latent(LatentRole::current, 99), Error);
}

TEST(Rng, DeriveIsStableAndDistinct) {
  auto a = Xoshiro256ss::derive(1, {2, 3}), b = Xoshiro256ss::derive(1, {2, 3}),
       c = Xoshiro256ss::derive(1, {3, 2});
  const auto x = a.next();
  EXPECT_EQ(x, b.next());
  EXPECT_NE(x, c.next());
}
