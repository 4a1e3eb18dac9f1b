#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace edloc;

namespace {

SceneParams small_scene(Task task, std::uint64_t seed) {
  SceneParams p;
  p.task = task;
  p.seed = seed;
  p.n_layers = 3;
  p.n_timesteps = 3;
  return p;
}

}  // namespace

TEST(Csv, EmptyIsHeaderOnly) {
  EXPECT_EQ(format_csv({}), std::string(kCsvHeader) + "\n");
  EXPECT_TRUE(parse_csv(format_csv({})).empty());
}

TEST(Csv, RoundTrip) {
  SyntheticScene sc(small_scene(Task::replacement, 1));
  auto rows = sweep_timesteps(sc, sc.ground_truth(), LocalizeConfig{}, "s1");
  auto text = format_csv(rows);
  auto back = parse_csv(text);
  sort_rows(rows);
  EXPECT_EQ(back, rows);
  EXPECT_EQ(format_csv(back), text);
}

TEST(Csv, StableColumnOrderAndSorting) {
  AnalysisRow a{"b", Task::addition, Stream::target, MaskStage::feature, 3, 1, 0.5, 2, 0.25};
  AnalysisRow b{"a", Task::removal, Stream::source, MaskStage::attention_raw, -1, 0, 0.3, 0, 1};
  auto text = format_csv({a, b});
  auto first_row = text.substr(text.find('\n') + 1);
  EXPECT_EQ(first_row.substr(0, first_row.find('\n')), "a,removal,src,attention_raw,-1,0,0.3,0,1");
  EXPECT_EQ(text, format_csv({b, a}));
}

TEST(Csv, MalformedRejected) {
  EXPECT_THROW(parse_csv("bogus\n"), Error);
  EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\nx,addition,tgt\n"), Error);
  EXPECT_THROW(parse_csv(""), Error);
}

TEST(Sweeps, RowCounts) {
  SyntheticScene sc(small_scene(Task::addition, 2));
  auto gt = sc.ground_truth();
  EXPECT_EQ(sweep_timesteps(sc, gt, LocalizeConfig{}, "x").size(), 3u * (6 + 4));
  EXPECT_EQ(sweep_tau(sc, gt, LocalizeConfig{}, kDefaultTauGrid, "x").size(), 3u * 5 * 4);
  EXPECT_EQ(sweep_layers(sc, gt, LocalizeConfig{}, {}, "x").size(), 3u * 3 * 3);
}

TEST(Sweeps, MissingLayerNamed) {
  SyntheticScene sc(small_scene(Task::addition, 3));
  try {
    sweep_layers(sc, sc.ground_truth(), LocalizeConfig{}, {7}, "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_record);
    EXPECT_NE(std::string(e.what()).find("layer 7"), std::string::npos);
  }
}

TEST(Sweeps, SingleLayerDump) {
  auto p = small_scene(Task::replacement, 4);
  p.n_layers = 1;
  SyntheticScene sc(p);
  auto rows = sweep_layers(sc, sc.ground_truth(), LocalizeConfig{}, {}, "x");
  std::set<std::tuple<std::uint32_t, int>> combos;
  for (const auto& r : rows) {
    EXPECT_EQ(r.layer, 0);
    EXPECT_TRUE(combos.emplace(r.timestep, static_cast<int>(r.stream)).second);
  }
  EXPECT_EQ(rows.size(), 3u * 3);
}

TEST(Sweeps, NoiselessFeatureRowsExact) {
  SyntheticScene sc(SceneParams::noiseless(Task::replacement, 5));
  LocalizeConfig cfg;
  cfg.morphology.dilation_radius = 0;
  auto rows = sweep_timesteps(sc, sc.ground_truth(), cfg, "x");
  RowFilter f{Task::replacement, Stream::combined, MaskStage::feature, {}, {}};
  EXPECT_EQ(mean_iou(rows, f), 1.0);
  EXPECT_EQ(mean_iou(rows, {{}, Stream::combined, MaskStage::postprocessed, {}, {}}), 1.0);
}

TEST(Aggregation, MeanAndEmptyFilter) {
  std::vector<AnalysisRow> rows = {
      {"a", Task::addition, Stream::target, MaskStage::feature, 0, 0, 0.5, 0, 0.2},
      {"b", Task::addition, Stream::target, MaskStage::feature, 0, 0, 0.5, 0, 0.6}};
  EXPECT_DOUBLE_EQ(mean_iou(rows, {}), 0.4);
  EXPECT_THROW(mean_iou(rows, {Task::removal, {}, {}, {}, {}}), Error);
}

TEST(Plot, CurveFiles) {
  std::vector<AnalysisRow> rows = {
      {"a", Task::addition, Stream::combined, MaskStage::feature, 0, 1, 0.5, 0, 0.2},
      {"b", Task::addition, Stream::combined, MaskStage::feature, 0, 1, 0.5, 0, 0.6},
      {"a", Task::addition, Stream::combined, MaskStage::feature, 0, 0, 0.5, 0, 1.0}};
  support::TempDir dir("plot");
  auto files = emit_plotdata(rows, dir.path(), PlotAxis::timestep);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].filename(), "curve_addition_comb_feature.dat");
  EXPECT_EQ(kv::read_text_file(files[0].string()), "# timestep mean_iou count\n0 1 1\n1 0.4 2\n");
}
