#pragma once

// Subcommand bodies. Each throws edloc::Error on failure; run_command maps
// errors to process exit codes.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "edloc/config.hpp"
#include "edloc/error.hpp"
#include "edloc/eval_harness.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/latent_preserver.hpp"
#include "edloc/pgm.hpp"
#include "edloc/pipeline.hpp"
#include "edloc/record_store.hpp"
#include "edloc/rng.hpp"
#include "edloc/synth_oracle.hpp"

namespace edloc {

inline constexpr std::string_view kProvenanceName = "provenance.txt";

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

namespace cmd_detail {

inline void prepare_output(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create '" + dir.string() + "': " + ec.message());
}

inline void write_resolved(const RunConfig& cfg, unsigned command,
                           const std::filesystem::path& dir) {
  kv::write_text_file((dir / kResolvedConfigName).string(),
                      cfg.to_document(command).format("resolved run configuration"));
}

// Fills config fields that were left to the record store.
inline RunConfig resolved_copy(const RunConfig& cfg, const ResolvedLocalize& r) {
  RunConfig out = cfg;
  out.task = r.task;
  out.localize.selected_text_indices = r.selected_text_indices;
  out.localize.attention_layers = r.attention_layers;
  out.localize.feature_layer = r.feature_layer;
  return out;
}

inline LocalizeConfig localize_config(const RunConfig& cfg) {
  LocalizeConfig lc = cfg.localize;
  lc.task = cfg.task;
  return lc;
}

inline std::string scene_id_of(const std::filesystem::path& dir) {
  auto norm = dir.lexically_normal();
  auto name = norm.filename().string();
  if (name.empty()) name = norm.parent_path().filename().string();
  return name.empty() || name == "." ? std::string("scene") : name;
}

inline std::string padded(std::uint32_t k, int width) {
  std::string s = std::to_string(k);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

}  // namespace cmd_detail

// Seed of scene k of `task` in a suite built from `base`.
inline std::uint64_t suite_scene_seed(std::uint64_t base, Task task, std::uint32_t k) {
  return Xoshiro256ss::derive(base, {static_cast<std::uint64_t>(task) + 1, k}).next();
}

// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  cmd_detail::prepare_output(cfg.output_dir);
  if (cfg.scenes_per_task == 0) {
    SceneParams p = cfg.scene_params(cfg.task.value_or(Task::replacement), cfg.seed);
    p.validate();
    SyntheticScene scene(p);
    scene.write(cfg.output_dir);
    cmd_detail::write_resolved(cfg, kSynth, cfg.output_dir);
    out << "wrote scene " << to_string(p.task) << " seed " << p.seed << " to "
        << cfg.output_dir.string() << "\n";
    return 0;
  }
  if (cfg.tasks.empty()) throw config_error("field tasks: empty");
  std::string index = "# scene_id task seed\n";
  std::size_t n = 0;
  for (Task task : cfg.tasks)
    for (std::uint32_t k = 0; k < cfg.scenes_per_task; ++k) {
      SceneParams p = cfg.scene_params(task, suite_scene_seed(cfg.seed, task, k));
      p.validate();
      const std::string id = std::string(to_string(task)) + "_" + cmd_detail::padded(k, 3);
      SyntheticScene(p).write(cfg.output_dir / id);
      index += id + " " + std::string(to_string(task)) + " " + std::to_string(p.seed) + "\n";
      ++n;
    }
  kv::write_text_file((cfg.output_dir / "suite.txt").string(), index);
  cmd_detail::write_resolved(cfg, kSynth, cfg.output_dir);
  out << "wrote " << n << " scenes to " << cfg.output_dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

inline int cmd_localize(const RunConfig& cfg, std::ostream& out) {
  RecordStore store(cfg.require_record_dir());
  const LocalizeConfig lc = cmd_detail::localize_config(cfg);
  const ResolvedLocalize r = resolve(store, lc);
  lc.morphology.validate(store.layout().grid());
  const auto& dir = cfg.output_dir;
  cmd_detail::prepare_output(dir);
  cmd_detail::prepare_output(dir / "pgm");
  const TokenLayout* lay = &store.layout();
  const Grid grid = store.layout().grid();

  std::optional<EditMask> gt;
  if (store.has_ground_truth()) gt = store.ground_truth();

  kv::Document prov;
  prov.set("command", "localize");
  prov.set("task", std::string(to_string(r.task)));
  prov.set("stream_policy", std::string(to_string(policy_for(r.task))));
  prov.set("selected_text_indices", kv::join(r.selected_text_indices));
  prov.set("attention_layers", kv::join(r.attention_layers));
  prov.set("feature_layer", std::to_string(r.feature_layer));
  prov.set("tau", kv::format_double(lc.tau));
  prov.set("ground_truth", gt ? "present" : "absent");

  double iou_sum = 0.0;
  std::size_t n_steps = 0;
  for (auto t : store.timesteps()) {
    auto loc = localize_timestep(store, lc, r, t);
    const std::vector<const EditMask*> masks = {
        &loc.tgt.raw,      &loc.tgt.propagated,      &loc.tgt.feature,
        &loc.src.raw,      &loc.src.propagated,      &loc.src.feature,
        &loc.combined_raw, &loc.combined_propagated, &loc.combined_feature,
        &loc.postprocessed};
    for (const EditMask* m : masks) write_bundle(*m, dir / mask_filename(*m), lay);

    const std::string ts = "_T" + std::to_string(t) + ".pgm";
    for (const StreamMaps* m : {&loc.maps_tgt, &loc.maps_src}) {
      const std::string s(to_string(m->stream));
      write_pgm(dir / "pgm" / ("map_raw_" + s + ts), gray_levels(m->raw.values), grid);
      write_pgm(dir / "pgm" / ("map_prop_" + s + ts), gray_levels(m->propagated.values),
                grid);
    }
    write_pgm(dir / "pgm" / ("mask_post_comb" + ts), gray_levels(loc.postprocessed), grid);

    const std::string key = "T" + std::to_string(t) + ".";
    std::string degenerate;
    if (loc.tgt.feature.degenerate) degenerate = "tgt";
    if (loc.src.feature.degenerate) degenerate += degenerate.empty() ? "src" : ",src";
    prov.set(key + "degenerate_streams", degenerate.empty() ? "none" : degenerate);
    prov.set(key + "components", std::to_string(loc.report.components.sizes.size()));
    prov.set(key + "holes_filled", std::to_string(loc.report.holes_filled));
    prov.set(key + "postprocessed_size", std::to_string(loc.report.final_size));
    if (gt) {
      const double v = iou(loc.postprocessed, *gt);
      prov.set(key + "iou", kv::format_double(v));
      out << "T" << t << " iou " << fixed3(v) << "\n";
      iou_sum += v;
      ++n_steps;
    }
  }
  if (gt) {
    write_pgm(dir / "pgm" / "mask_gt_comb.pgm", gray_levels(*gt), grid);
    const double mean = iou_sum / static_cast<double>(n_steps);
    prov.set("iou_mean", kv::format_double(mean));
    out << "IoU " << fixed3(mean) << "\n";
  }
  kv::write_text_file((dir / kProvenanceName).string(),
                      prov.format("localization provenance"));
  cmd_detail::write_resolved(cmd_detail::resolved_copy(cfg, r), kLocalize, dir);
  return 0;
}

// ---------------------------------------------------------------------------

// Postprocessed combined mask for step t from a localize output directory.
inline EditMask find_postprocessed_mask(const std::filesystem::path& dir,
                                        std::uint32_t t, const TokenLayout& layout) {
  if (!std::filesystem::is_directory(dir))
    throw missing_record("mask directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> hits;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto id = identity_from_filename(e.path().filename().string());
    constexpr auto kPost = static_cast<std::uint8_t>(
        static_cast<std::uint8_t>(RecordKind::mask_base) +
        static_cast<std::uint8_t>(MaskStage::postprocessed));
    if (id && id->kind == kPost &&
        id->stream == static_cast<std::uint32_t>(Stream::combined) && id->timestep == t)
      hits.push_back(e.path());
  }
  if (hits.empty())
    throw missing_record("no postprocessed mask for timestep " + std::to_string(t) +
                         " in '" + dir.string() + "'");
  if (hits.size() > 1)
    throw validation_error("several postprocessed masks for timestep " +
                           std::to_string(t) + " in '" + dir.string() + "'");
  return read_bundle_as<EditMask>(hits.front(), &layout);
}

inline int cmd_blend(const RunConfig& cfg, std::ostream& out) {
  RecordStore store(cfg.require_record_dir());
  const std::uint32_t n_steps = store.layout().n_timesteps;
  PreservationPlan plan;
  plan.apply_at = cfg.apply_at;
  plan.schedule = store.schedule();
  plan.pinned_mask_step = cfg.pin_mask_step;
  for (auto s : plan.apply_at)
    if (s >= n_steps)
      throw config_error("field apply_at: step " + std::to_string(s) +
                         " outside the " + std::to_string(n_steps) +
                         " recorded timesteps; set --apply-at");
  if (plan.pinned_mask_step && *plan.pinned_mask_step >= n_steps)
    throw config_error("field pin_mask_step: outside the recorded timesteps");
  plan.validate();

  const LocalizeConfig lc = cmd_detail::localize_config(cfg);
  std::optional<ResolvedLocalize> r;
  auto mask_for = [&](std::uint32_t step) {
    if (!cfg.mask_dir.empty())
      return find_postprocessed_mask(cfg.mask_dir, step, store.layout());
    if (!r) r = resolve(store, lc);
    return localize_timestep(store, lc, *r, step).postprocessed;
  };

  const auto& dir = cfg.output_dir;
  cmd_detail::prepare_output(dir);
  const TokenLayout* lay = &store.layout();
  const Matrix z_init = store.latent(LatentRole::initial_noise).z;
  const Matrix z_src = store.latent(LatentRole::source).z;

  kv::Document prov;
  prov.set("command", "blend");
  prov.set("replay", "offline");
  prov.set("trajectory",
           "recorded latent_cur per step, unmodified; blended outputs are not "
           "fed back into later steps");
  prov.set("mask_source", cfg.mask_dir.empty() ? std::string("recomputed")
                                               : cfg.mask_dir.generic_string());
  std::optional<EditMask> pinned;
  if (plan.pinned_mask_step) pinned = mask_for(*plan.pinned_mask_step);
  for (auto step : plan.apply_at) {
    const EditMask mask = pinned ? *pinned : mask_for(step);
    const Matrix z_cur = store.latent(LatentRole::current, step).z;
    LatentRecord rec{LatentRole::blended, step,
                     apply_plan(plan, step, z_cur, z_init, z_src, &mask)};
    write_bundle(rec, dir / latent_filename(LatentRole::blended, step), lay);
    const std::string key = "T" + std::to_string(step) + ".";
    prov.set(key + "sigma", kv::format_float(plan.schedule.sigma[step]));
    prov.set(key + "mask_step",
             std::to_string(plan.pinned_mask_step.value_or(step)));
    prov.set(key + "edited_rows", std::to_string(mask.count()));
    out << "T" << step << " blended, " << mask.count() << " edited rows\n";
  }
  kv::write_text_file((dir / kProvenanceName).string(), prov.format("blend provenance"));
  RunConfig echo = r ? cmd_detail::resolved_copy(cfg, *r) : cfg;
  cmd_detail::write_resolved(echo, kBlend, dir);
  return 0;
}

// ---------------------------------------------------------------------------

// Scene directories under `root`: the root itself when it holds a manifest,
// otherwise every immediate subdirectory that does, sorted by name.
inline std::vector<std::filesystem::path> scene_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root))
    throw missing_record("record directory '" + root.string() + "' does not exist");
  if (std::filesystem::exists(root / kManifestName)) return {root};
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / kManifestName))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty())
    throw missing_record("no manifest in '" + root.string() + "' or its subdirectories");
  return out;
}

struct EvalResult {
  std::vector<AnalysisRow> timesteps, taus, layers;
};

inline EvalResult evaluate_scenes(const RunConfig& cfg) {
  const auto root = cfg.require_record_dir();
  const auto dirs = scene_dirs(root);
  const bool single = dirs.size() == 1 && dirs.front() == root;
  const LocalizeConfig lc = cmd_detail::localize_config(cfg);
  EvalResult res;
  for (const auto& d : dirs) {
    RecordStore store(d);
    const std::string id = cmd_detail::scene_id_of(d);
    EditMask gt;
    if (cfg.gt_dir.empty()) {
      gt = ground_truth_of(store);
    } else {
      auto p = (single ? cfg.gt_dir : cfg.gt_dir / id) / RecordStore::ground_truth_filename();
      if (!std::filesystem::exists(p))
        throw missing_record("missing ground truth '" + p.string() + "'");
      gt = read_bundle_as<EditMask>(p, &store.layout());
    }
    auto append = [](std::vector<AnalysisRow>& into, std::vector<AnalysisRow> rows) {
      into.insert(into.end(), rows.begin(), rows.end());
    };
    append(res.timesteps, sweep_timesteps(store, gt, lc, id));
    append(res.taus, sweep_tau(store, gt, lc, cfg.eval_taus, id));
    append(res.layers, sweep_layers(store, gt, lc, cfg.eval_layers, id));
  }
  for (auto* rows : {&res.timesteps, &res.taus, &res.layers}) sort_rows(*rows);
  return res;
}

inline std::string format_summary(const EvalResult& res) {
  std::vector<Task> tasks;
  for (const auto& r : res.timesteps)
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end())
      tasks.push_back(r.task);
  std::sort(tasks.begin(), tasks.end());
  std::string out = "# mean IoU by task, stream and stage over timesteps and scenes\n";
  for (Task task : tasks) {
    for (Stream s : {Stream::target, Stream::source, Stream::combined})
      for (MaskStage st : {MaskStage::attention_raw, MaskStage::attention_propagated,
                           MaskStage::feature, MaskStage::postprocessed}) {
        RowFilter f{task, s, st, {}, {}};
        if (std::none_of(res.timesteps.begin(), res.timesteps.end(),
                         [&](const AnalysisRow& r) { return f.matches(r); }))
          continue;
        out += std::string(to_string(task)) + "." + std::string(to_string(s)) + "." +
               std::string(to_string(st)) + " = " +
               kv::format_double(mean_iou(res.timesteps, f)) + "\n";
      }
    std::vector<double> taus;
    for (const auto& r : res.taus)
      if (r.task == task && std::find(taus.begin(), taus.end(), r.tau) == taus.end())
        taus.push_back(r.tau);
    std::sort(taus.begin(), taus.end());
    for (double tau : taus)
      out += std::string(to_string(task)) + ".comb.feature.tau_" + kv::format_double(tau) +
             " = " +
             kv::format_double(mean_iou(
                 res.taus, {task, Stream::combined, MaskStage::feature, tau, {}})) +
             "\n";
  }
  return out;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  EvalResult res = evaluate_scenes(cfg);
  const auto& dir = cfg.output_dir;
  cmd_detail::prepare_output(dir);
  emit_csv(res.timesteps, dir / "eval_timesteps.csv");
  emit_csv(res.taus, dir / "eval_tau.csv");
  emit_csv(res.layers, dir / "eval_layers.csv");
  emit_plotdata(res.timesteps, dir / "plot" / "timestep", PlotAxis::timestep);
  emit_plotdata(res.taus, dir / "plot" / "tau", PlotAxis::tau);
  emit_plotdata(res.layers, dir / "plot" / "layer", PlotAxis::layer);
  const std::string summary = format_summary(res);
  kv::write_text_file((dir / "summary.txt").string(), summary);
  cmd_detail::write_resolved(cfg, kEval, dir);
  out << summary;
  return 0;
}

// ---------------------------------------------------------------------------

// 0 when every check passes, 3 when any record is invalid, 2 when records are
// only missing.
inline int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  const auto report = validate_store(cfg.require_record_dir());
  bool invalid = false;
  for (const auto& e : report.entries) {
    if (e.ok) continue;
    out << "FAIL " << e.file << ": " << e.message << "\n";
    if (e.message != "missing record" &&
        e.message.find("missing manifest") == std::string::npos)
      invalid = true;
  }
  std::size_t ok = std::count_if(report.entries.begin(), report.entries.end(),
                                 [](const ValidationEntry& e) { return e.ok; });
  out << ok << " of " << report.entries.size() << " checks passed\n";
  if (invalid) return exit_code(ErrorKind::validation);
  if (report.missing) return exit_code(ErrorKind::missing_record);
  return 0;
}

// ---------------------------------------------------------------------------

inline int run_command(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::io);
  }
}

}  // namespace edloc
