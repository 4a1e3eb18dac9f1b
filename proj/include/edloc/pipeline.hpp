#pragma once

// End-to-end localization for one timestep over any record source: the
// on-disk RecordStore or an in-memory SyntheticScene.

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "edloc/attention_localizer.hpp"
#include "edloc/error.hpp"
#include "edloc/feature_assigner.hpp"
#include "edloc/record_store.hpp"
#include "edloc/task_mask.hpp"
#include "edloc/types.hpp"

namespace edloc {

template <typename S>
concept RecordSource = requires(const S& s, Stream st, std::uint32_t i) {
  { s.layout() } -> std::convertible_to<const TokenLayout&>;
  { s.instruction() } -> std::convertible_to<const InstructionSpec&>;
  { s.schedule() } -> std::convertible_to<const NoiseSchedule&>;
  { s.layers() } -> std::convertible_to<std::vector<std::uint32_t>>;
  { s.timesteps() } -> std::convertible_to<std::vector<std::uint32_t>>;
  { s.attention(st, i, i) } -> std::same_as<AttentionBundle>;
  { s.features(st, i, i) } -> std::same_as<FeatureBundle>;
};

struct LocalizeConfig {
  double tau = kDefaultTau;
  // Layers summed for the attention map; empty means every captured layer.
  std::vector<std::uint32_t> attention_layers;
  // Feature layer for refinement; unset means the deepest captured layer.
  std::optional<std::uint32_t> feature_layer;
  MorphologyConfig morphology;
  double epsilon = kPoolingEpsilon;
  std::optional<Task> task;
  std::optional<std::vector<std::uint32_t>> selected_text_indices;
};

// Values a config resolves to against a concrete record source.
struct ResolvedLocalize {
  std::vector<std::uint32_t> attention_layers;
  std::uint32_t feature_layer = 0;
  Task task = Task::replacement;
  std::vector<std::uint32_t> selected_text_indices;
};

template <RecordSource Source>
ResolvedLocalize resolve(const Source& src, const LocalizeConfig& cfg) {
  ResolvedLocalize r;
  const auto available = src.layers();
  if (available.empty()) throw missing_record("record source has no layers");
  r.attention_layers = cfg.attention_layers.empty() ? available : cfg.attention_layers;
  for (auto l : r.attention_layers)
    if (!std::binary_search(available.begin(), available.end(), l))
      throw missing_record("layer " + std::to_string(l) + " not present in records");
  r.feature_layer = cfg.feature_layer.value_or(available.back());
  if (!std::binary_search(available.begin(), available.end(), r.feature_layer))
    throw missing_record("feature layer " + std::to_string(r.feature_layer) +
                         " not present in records");
  r.task = cfg.task.value_or(src.instruction().task);
  r.selected_text_indices =
      cfg.selected_text_indices.value_or(src.instruction().selected_text_indices);
  InstructionSpec check{r.task, r.selected_text_indices, {}};
  check.validate(src.layout().n_txt);
  return r;
}

// Both attention maps for one stream and timestep; threshold-independent.
struct StreamMaps {
  Stream stream = Stream::target;
  std::uint32_t timestep = 0;
  AttentionMap raw;
  AttentionMap propagated;
};

template <RecordSource Source>
StreamMaps compute_maps(const Source& src, Stream s, std::uint32_t t,
                        const ResolvedLocalize& r) {
  std::vector<AttentionBundle> bundles;
  bundles.reserve(r.attention_layers.size());
  for (auto l : r.attention_layers) bundles.push_back(src.attention(s, l, t));
  StreamMaps maps;
  maps.stream = s;
  maps.timestep = t;
  maps.raw = raw_attention_map(bundles, r.selected_text_indices);
  maps.propagated = propagated_attention_map(bundles, r.selected_text_indices);
  return maps;
}

struct StreamMasks {
  EditMask raw;
  EditMask propagated;
  EditMask feature;
};

inline StreamMasks stream_masks(const StreamMaps& maps, const FeatureBundle& features,
                                double tau, double epsilon) {
  StreamMasks m;
  m.raw = threshold(maps.raw, tau, MaskStage::attention_raw);
  m.propagated = threshold(maps.propagated, tau, MaskStage::attention_propagated);
  m.feature = refine(features, m.propagated, epsilon);
  return m;
}

struct TimestepLocalization {
  std::uint32_t timestep = 0;
  Task task = Task::replacement;
  StreamMaps maps_tgt, maps_src;
  StreamMasks tgt, src;
  // Task rule applied to each per-stream stage; combined_feature is the
  // task_combined mask that postprocessing consumes.
  EditMask combined_raw, combined_propagated, combined_feature;
  EditMask postprocessed;
  PostprocessReport report;
};

// Task rule applied to one per-stream stage; `stage` labels the result.
inline EditMask combine_stage(Task task, const EditMask& a, const EditMask& b,
                              MaskStage stage) {
  EditMask out = combine(task, a, b);
  out.stage = stage;
  out.degenerate = a.degenerate || b.degenerate;
  return out;
}

inline TimestepLocalization localize_from_maps(const StreamMaps& maps_tgt,
                                               const StreamMaps& maps_src,
                                               const FeatureBundle& feat_tgt,
                                               const FeatureBundle& feat_src,
                                               const Grid& grid, Task task,
                                               double tau, double epsilon,
                                               const MorphologyConfig& morph) {
  TimestepLocalization out;
  out.timestep = maps_tgt.timestep;
  out.task = task;
  out.maps_tgt = maps_tgt;
  out.maps_src = maps_src;
  out.tgt = stream_masks(maps_tgt, feat_tgt, tau, epsilon);
  out.src = stream_masks(maps_src, feat_src, tau, epsilon);
  out.combined_raw =
      combine_stage(task, out.tgt.raw, out.src.raw, MaskStage::attention_raw);
  out.combined_propagated = combine_stage(task, out.tgt.propagated, out.src.propagated,
                                          MaskStage::attention_propagated);
  out.combined_feature = combine_stage(task, out.tgt.feature, out.src.feature,
                                       MaskStage::task_combined);
  out.postprocessed = postprocess(out.combined_feature, grid, morph, &out.report);
  out.postprocessed.layer = out.combined_feature.layer;
  out.postprocessed.timestep = out.timestep;
  return out;
}

template <RecordSource Source>
TimestepLocalization localize_timestep(const Source& src, const LocalizeConfig& cfg,
                                       const ResolvedLocalize& r, std::uint32_t t) {
  const auto steps = src.timesteps();
  if (!std::binary_search(steps.begin(), steps.end(), t))
    throw missing_record("timestep " + std::to_string(t) + " not present in records");
  StreamMaps mt = compute_maps(src, Stream::target, t, r);
  StreamMaps ms = compute_maps(src, Stream::source, t, r);
  return localize_from_maps(mt, ms, src.features(Stream::target, r.feature_layer, t),
                            src.features(Stream::source, r.feature_layer, t),
                            src.layout().grid(), r.task, cfg.tau, cfg.epsilon,
                            cfg.morphology);
}

template <RecordSource Source>
TimestepLocalization localize_timestep(const Source& src, const LocalizeConfig& cfg,
                                       std::uint32_t t) {
  ResolvedLocalize r = resolve(src, cfg);
  return localize_timestep(src, cfg, r, t);
}

}  // namespace edloc
