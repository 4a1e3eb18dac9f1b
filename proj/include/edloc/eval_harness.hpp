#pragma once

// Localization analysis: IoU curves over timesteps, thresholds and layers.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/pipeline.hpp"
#include "edloc/synth_oracle.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline const std::vector<double> kDefaultTauGrid = {0.1, 0.3, 0.5, 0.7, 0.9};

struct AnalysisRow {
  std::string scene_id;
  Task task = Task::replacement;
  Stream stream = Stream::combined;
  MaskStage stage = MaskStage::feature;
  // -1 for attention stages, which aggregate several layers
  std::int64_t layer = -1;
  std::uint32_t timestep = 0;
  double tau = kDefaultTau;
  std::uint32_t dilation_radius = 0;
  double iou = 0.0;

  auto key() const {
    return std::tuple(scene_id, static_cast<int>(task), timestep, tau, layer,
                      static_cast<int>(stream), static_cast<int>(stage));
  }
  friend bool operator==(const AnalysisRow&, const AnalysisRow&) = default;
};

inline void sort_rows(std::vector<AnalysisRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AnalysisRow& a, const AnalysisRow& b) {
                     return a.key() < b.key();
                   });
}

// Ground truth for a record source: the task-level mask (combined stream).
template <typename Source>
EditMask ground_truth_of(const Source& src) {
  if (!src.has_ground_truth())
    throw missing_record("no ground-truth mask available for evaluation");
  return src.ground_truth(Stream::combined);
}

namespace detail {

inline AnalysisRow make_row(const std::string& id, Task task, Stream stream,
                            MaskStage stage, std::int64_t layer, std::uint32_t t,
                            double tau, std::uint32_t radius, const EditMask& pred,
                            const EditMask& gt) {
  return AnalysisRow{id, task, stream, stage, layer, t, tau, radius, iou(pred, gt)};
}

inline void emit_localization_rows(std::vector<AnalysisRow>& rows,
                                   const std::string& id,
                                   const TimestepLocalization& loc,
                                   std::uint32_t feature_layer, double tau,
                                   std::uint32_t radius, const EditMask& gt,
                                   bool per_stream) {
  const auto t = loc.timestep;
  const std::int64_t fl = feature_layer;
  auto add = [&](Stream s, MaskStage st, std::int64_t layer, const EditMask& m) {
    rows.push_back(make_row(id, loc.task, s, st, layer, t, tau, radius, m, gt));
  };
  if (per_stream) {
    for (const auto* sm : {&loc.tgt, &loc.src}) {
      const Stream s = sm == &loc.tgt ? Stream::target : Stream::source;
      add(s, MaskStage::attention_raw, -1, sm->raw);
      add(s, MaskStage::attention_propagated, -1, sm->propagated);
      add(s, MaskStage::feature, fl, sm->feature);
    }
  }
  add(Stream::combined, MaskStage::attention_raw, -1, loc.combined_raw);
  add(Stream::combined, MaskStage::attention_propagated, -1, loc.combined_propagated);
  add(Stream::combined, MaskStage::feature, fl, loc.combined_feature);
  add(Stream::combined, MaskStage::postprocessed, fl, loc.postprocessed);
}

}  // namespace detail

// One row per (timestep, stream, stage) against the task ground truth.
template <RecordSource Source>
std::vector<AnalysisRow> sweep_timesteps(const Source& src, const EditMask& gt,
                                         const LocalizeConfig& cfg,
                                         const std::string& scene_id) {
  const ResolvedLocalize r = resolve(src, cfg);
  std::vector<AnalysisRow> rows;
  for (auto t : src.timesteps()) {
    auto loc = localize_timestep(src, cfg, r, t);
    detail::emit_localization_rows(rows, scene_id, loc, r.feature_layer, cfg.tau,
                                   cfg.morphology.dilation_radius, gt, true);
  }
  return rows;
}

// Combined-stream rows for every threshold in `taus`; attention maps are
// computed once per timestep and re-thresholded.
template <RecordSource Source>
std::vector<AnalysisRow> sweep_tau(const Source& src, const EditMask& gt,
                                   const LocalizeConfig& cfg,
                                   const std::vector<double>& taus,
                                   const std::string& scene_id) {
  if (taus.empty()) throw config_error("sweep_tau: empty threshold grid");
  const ResolvedLocalize r = resolve(src, cfg);
  std::vector<AnalysisRow> rows;
  for (auto t : src.timesteps()) {
    StreamMaps mt = compute_maps(src, Stream::target, t, r);
    StreamMaps ms = compute_maps(src, Stream::source, t, r);
    FeatureBundle ft = src.features(Stream::target, r.feature_layer, t);
    FeatureBundle fs = src.features(Stream::source, r.feature_layer, t);
    for (double tau : taus) {
      auto loc = localize_from_maps(mt, ms, ft, fs, src.layout().grid(), r.task, tau,
                                    cfg.epsilon, cfg.morphology);
      detail::emit_localization_rows(rows, scene_id, loc, r.feature_layer, tau,
                                     cfg.morphology.dilation_radius, gt, false);
    }
  }
  return rows;
}

// Feature-stage rows per refinement layer; attention seeds are shared.
template <RecordSource Source>
std::vector<AnalysisRow> sweep_layers(const Source& src, const EditMask& gt,
                                      const LocalizeConfig& cfg,
                                      std::vector<std::uint32_t> layers,
                                      const std::string& scene_id) {
  const ResolvedLocalize r = resolve(src, cfg);
  const auto available = src.layers();
  if (layers.empty()) layers = available;
  for (auto l : layers)
    if (!std::binary_search(available.begin(), available.end(), l))
      throw missing_record("sweep_layers: layer " + std::to_string(l) +
                           " not present in records");
  std::vector<AnalysisRow> rows;
  for (auto t : src.timesteps()) {
    StreamMaps mt = compute_maps(src, Stream::target, t, r);
    StreamMaps ms = compute_maps(src, Stream::source, t, r);
    for (auto l : layers) {
      auto loc = localize_from_maps(mt, ms, src.features(Stream::target, l, t),
                                    src.features(Stream::source, l, t),
                                    src.layout().grid(), r.task, cfg.tau, cfg.epsilon,
                                    cfg.morphology);
      const std::int64_t layer = l;
      auto add = [&](Stream s, const EditMask& m) {
        rows.push_back(detail::make_row(scene_id, r.task, s, MaskStage::feature, layer,
                                        t, cfg.tau, cfg.morphology.dilation_radius, m,
                                        gt));
      };
      add(Stream::target, loc.tgt.feature);
      add(Stream::source, loc.src.feature);
      add(Stream::combined, loc.combined_feature);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// aggregation

struct RowFilter {
  std::optional<Task> task;
  std::optional<Stream> stream;
  std::optional<MaskStage> stage;
  std::optional<double> tau;
  std::optional<std::int64_t> layer;

  bool matches(const AnalysisRow& r) const {
    return (!task || r.task == *task) && (!stream || r.stream == *stream) &&
           (!stage || r.stage == *stage) && (!tau || r.tau == *tau) &&
           (!layer || r.layer == *layer);
  }
};

// Mean IoU over matching rows, accumulated in sorted row order.
inline double mean_iou(std::vector<AnalysisRow> rows, const RowFilter& filter) {
  sort_rows(rows);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (filter.matches(r)) {
      sum += r.iou;
      ++n;
    }
  if (n == 0) throw validation_error("mean_iou: no rows match the filter");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// output

inline constexpr std::string_view kCsvHeader =
    "scene_id,task,stream,stage,layer,timestep,tau,dilation_radius,iou";

inline std::string format_csv(std::vector<AnalysisRow> rows) {
  sort_rows(rows);
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += r.scene_id;
    out += ',';
    out += to_string(r.task);
    out += ',';
    out += to_string(r.stream);
    out += ',';
    out += to_string(r.stage);
    out += ',';
    out += std::to_string(r.layer);
    out += ',';
    out += std::to_string(r.timestep);
    out += ',';
    out += kv::format_double(r.tau);
    out += ',';
    out += std::to_string(r.dilation_radius);
    out += ',';
    out += kv::format_double(r.iou);
    out += '\n';
  }
  return out;
}

inline void emit_csv(const std::vector<AnalysisRow>& rows,
                     const std::filesystem::path& path) {
  kv::write_text_file(path.string(), format_csv(rows));
}

inline std::vector<AnalysisRow> parse_csv(std::string_view text) {
  std::vector<AnalysisRow> rows;
  std::size_t pos = 0;
  bool header = true;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (header) {
      if (line != kCsvHeader) throw validation_error("csv: unexpected header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::size_t p = 0;
    while (true) {
      std::size_t comma = line.find(',', p);
      f.push_back(line.substr(p, comma == std::string_view::npos ? line.size() - p
                                                                 : comma - p));
      if (comma == std::string_view::npos) break;
      p = comma + 1;
    }
    if (f.size() != 9)
      throw validation_error("csv:" + std::to_string(line_no) + ": expected 9 fields");
    constexpr auto k = ErrorKind::validation;
    AnalysisRow r;
    r.scene_id = std::string(f[0]);
    r.task = parse_task(f[1]);
    r.stream = parse_stream(f[2]);
    r.stage = parse_mask_stage(f[3]);
    r.layer = kv::parse_number<std::int64_t>(f[4], "layer", k);
    r.timestep = kv::parse_number<std::uint32_t>(f[5], "timestep", k);
    r.tau = kv::parse_number<double>(f[6], "tau", k);
    r.dilation_radius = kv::parse_number<std::uint32_t>(f[7], "dilation_radius", k);
    r.iou = kv::parse_number<double>(f[8], "iou", k);
    if (r.iou < 0.0 || r.iou > 1.0)
      throw validation_error("csv:" + std::to_string(line_no) + ": iou outside [0, 1]");
    rows.push_back(std::move(r));
  }
  if (header) throw validation_error("csv: missing header");
  return rows;
}

enum class PlotAxis { timestep, tau, layer };

inline std::string_view to_string(PlotAxis a) {
  switch (a) {
    case PlotAxis::timestep: return "timestep";
    case PlotAxis::tau: return "tau";
    case PlotAxis::layer: return "layer";
  }
  return "?";
}

// One whitespace-separated series file per (task, stream, stage) curve:
// "x mean_iou count", x ascending, means over samples.
inline std::vector<std::filesystem::path> emit_plotdata(
    const std::vector<AnalysisRow>& rows, const std::filesystem::path& dir,
    PlotAxis axis) {
  std::filesystem::create_directories(dir);
  using CurveKey = std::tuple<int, int, int>;
  std::map<CurveKey, std::map<double, std::pair<double, std::size_t>>> curves;
  std::vector<AnalysisRow> sorted = rows;
  sort_rows(sorted);
  for (const auto& r : sorted) {
    double x = axis == PlotAxis::timestep ? r.timestep
               : axis == PlotAxis::tau    ? r.tau
                                          : static_cast<double>(r.layer);
    auto& cell = curves[{static_cast<int>(r.task), static_cast<int>(r.stream),
                         static_cast<int>(r.stage)}][x];
    cell.first += r.iou;
    cell.second += 1;
  }
  std::vector<std::filesystem::path> written;
  for (const auto& [key, series] : curves) {
    auto [task, stream, stage] = key;
    std::string name = "curve_" + std::string(to_string(static_cast<Task>(task))) +
                       "_" + std::string(to_string(static_cast<Stream>(stream))) +
                       "_" + std::string(to_string(static_cast<MaskStage>(stage))) +
                       ".dat";
    std::string text = "# " + std::string(to_string(axis)) + " mean_iou count\n";
    for (const auto& [x, acc] : series) {
      text += kv::format_double(x);
      text += ' ';
      text += kv::format_double(acc.first / static_cast<double>(acc.second));
      text += ' ';
      text += std::to_string(acc.second);
      text += '\n';
    }
    kv::write_text_file((dir / name).string(), text);
    written.push_back(dir / name);
  }
  return written;
}

}  // namespace edloc
