#pragma once

// Run configuration: flat "key = value" text. Command-line flags use the same
// keys with '_' spelled '-'.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/eval_harness.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/latent_preserver.hpp"
#include "edloc/pipeline.hpp"
#include "edloc/synth_oracle.hpp"
#include "edloc/task_mask.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline constexpr std::string_view kRecordDirEnv = "EDLOC_RECORD_DIR";
inline constexpr std::string_view kResolvedConfigName = "config.resolved.txt";

enum CommandBit : unsigned {
  kSynth = 1u << 0,
  kLocalize = 1u << 1,
  kBlend = 1u << 2,
  kEval = 1u << 3,
  kValidate = 1u << 4,
};

struct ConfigKey {
  std::string_view name;
  unsigned commands;
  std::string_view help;
};

// The default noted in each help string is the one used by the published
// editing setup where one exists.
inline constexpr ConfigKey kConfigKeys[] = {
    {"record_dir", kLocalize | kBlend | kEval | kValidate,
     "record store directory (or suite directory for eval); "
     "defaults to $EDLOC_RECORD_DIR"},
    {"output_dir", kSynth | kLocalize | kBlend | kEval, "output directory"},
    {"task", kSynth | kLocalize | kBlend | kEval,
     "edit task; synth: scene task, otherwise overrides the manifest"},
    {"selected_text_indices", kLocalize | kBlend | kEval,
     "comma list of selected text tokens; default from the manifest"},
    {"tau", kLocalize | kBlend | kEval,
     "attention threshold, strict (default 0.5, published setting)"},
    {"attention_layers", kLocalize | kBlend | kEval,
     "comma list of layers summed for the attention map; default all captured"},
    {"feature_layer", kLocalize | kBlend | kEval,
     "feature layer for refinement (default deepest captured, published "
     "setting uses a deep layer)"},
    {"connectivity", kLocalize | kBlend | kEval, "4 or 8 (default 8)"},
    {"dilation_radius", kLocalize | kBlend | kEval,
     "3x3 dilation iterations (default 2)"},
    {"fill_holes", kLocalize | kBlend | kEval, "true|false (default true)"},
    {"epsilon", kLocalize | kBlend | kEval,
     "centroid pooling epsilon (default 1e-8)"},
    {"apply_at", kBlend,
     "comma list of blending steps (default 5,10,15 of 28, published setting)"},
    {"pin_mask_step", kBlend, "use this step's mask at every applied step"},
    {"mask_dir", kBlend,
     "directory with postprocessed masks from localize; default recompute"},
    {"gt_dir", kEval,
     "directory holding mask_gt_comb.edloc; default the record directory"},
    {"eval_taus", kEval, "threshold grid (default 0.1,0.3,0.5,0.7,0.9)"},
    {"eval_layers", kEval, "layer sweep; default all captured"},
    {"seed", kSynth, "base seed (default 0)"},
    {"scenes_per_task", kSynth,
     "0 writes one scene; N > 0 writes a suite of N scenes per task"},
    {"tasks", kSynth, "suite tasks (default addition,removal,replacement)"},
    {"noiseless", kSynth, "noise-free, distractor-free scenes (default false)"},
    {"grid", kSynth, "HxW image grid (default 16x16)"},
    {"n_layers", kSynth, "captured layers (default 8)"},
    {"n_timesteps", kSynth, "captured timesteps (default 8)"},
    {"noise_level", kSynth, "feature noise (default 0.1)"},
    {"attention_noise", kSynth, "attention jitter (default 0.3)"},
    {"distractor_fraction", kSynth, "off-object attention share (default 0.2)"},
    {"separation", kSynth, "deepest-layer cluster separation (default 1)"},
};

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : kConfigKeys)
    if (k.name == name) return &k;
  return nullptr;
}

struct RunConfig {
  std::filesystem::path record_dir;
  std::filesystem::path output_dir = "edloc_out";
  std::optional<Task> task;
  LocalizeConfig localize;
  std::set<std::uint32_t> apply_at = kDefaultApplyAt;
  std::optional<std::uint32_t> pin_mask_step;
  std::filesystem::path mask_dir;
  std::filesystem::path gt_dir;
  std::vector<double> eval_taus = kDefaultTauGrid;
  std::vector<std::uint32_t> eval_layers;

  std::uint64_t seed = 0;
  std::uint32_t scenes_per_task = 0;
  std::vector<Task> tasks = {Task::addition, Task::removal, Task::replacement};
  bool noiseless = false;
  SceneParams scene;

  void set(std::string_view key, std::string_view raw) {
    const std::string value(kv::trim(raw));
    auto u32 = [&] { return kv::parse_number<std::uint32_t>(value, key); };
    auto dbl = [&] { return kv::parse_number<double>(value, key); };
    auto u32_list = [&] { return kv::parse_list<std::uint32_t>(value, key); };
    auto optional_u32 = [&]() -> std::optional<std::uint32_t> {
      if (value.empty() || value == "auto") return std::nullopt;
      return u32();
    };
    auto task_of = [&](std::string_view s) {
      try {
        return parse_task(kv::trim(s));
      } catch (const Error& e) {
        throw config_error("field " + std::string(key) + ": " + e.what());
      }
    };

    if (key == "record_dir") record_dir = value;
    else if (key == "output_dir") output_dir = value;
    else if (key == "task")
      task = value.empty() || value == "auto" ? std::nullopt
                                              : std::optional(task_of(value));
    else if (key == "selected_text_indices") {
      if (value.empty() || value == "auto") localize.selected_text_indices.reset();
      else localize.selected_text_indices = u32_list();
    } else if (key == "tau") {
      localize.tau = dbl();
      if (!(localize.tau > 0.0 && localize.tau < 1.0))
        throw config_error("field tau: must lie in (0, 1)");
    } else if (key == "attention_layers") {
      localize.attention_layers = value == "all" ? std::vector<std::uint32_t>{}
                                                 : u32_list();
      std::set<std::uint32_t> uniq(localize.attention_layers.begin(),
                                   localize.attention_layers.end());
      localize.attention_layers.assign(uniq.begin(), uniq.end());
    } else if (key == "feature_layer") localize.feature_layer = optional_u32();
    else if (key == "connectivity") {
      try {
        localize.morphology.connectivity = parse_connectivity(static_cast<int>(u32()));
      } catch (const Error& e) {
        throw config_error(std::string("field connectivity: ") + e.what());
      }
    } else if (key == "dilation_radius") localize.morphology.dilation_radius = u32();
    else if (key == "fill_holes") localize.morphology.fill_holes = kv::parse_bool(value, key);
    else if (key == "epsilon") {
      localize.epsilon = dbl();
      if (!(localize.epsilon > 0.0)) throw config_error("field epsilon: must be > 0");
    } else if (key == "apply_at") {
      auto xs = u32_list();
      apply_at = std::set<std::uint32_t>(xs.begin(), xs.end());
    } else if (key == "pin_mask_step") pin_mask_step = optional_u32();
    else if (key == "mask_dir") mask_dir = value;
    else if (key == "gt_dir") gt_dir = value;
    else if (key == "eval_taus") {
      eval_taus = kv::parse_list<double>(value, key);
      if (eval_taus.empty()) throw config_error("field eval_taus: empty");
      for (double t : eval_taus)
        if (!(t > 0.0 && t < 1.0))
          throw config_error("field eval_taus: values must lie in (0, 1)");
    } else if (key == "eval_layers") {
      eval_layers = value == "all" ? std::vector<std::uint32_t>{} : u32_list();
    } else if (key == "seed") seed = kv::parse_number<std::uint64_t>(value, key);
    else if (key == "scenes_per_task") scenes_per_task = u32();
    else if (key == "tasks") {
      tasks.clear();
      std::size_t pos = 0;
      while (pos <= value.size()) {
        auto comma = value.find(',', pos);
        if (comma == std::string::npos) comma = value.size();
        tasks.push_back(task_of(std::string_view(value).substr(pos, comma - pos)));
        pos = comma + 1;
      }
    } else if (key == "noiseless") noiseless = kv::parse_bool(value, key);
    else if (key == "grid") {
      auto x = value.find('x');
      if (x == std::string::npos) throw config_error("field grid: expected HxW");
      scene.grid_h = kv::parse_number<std::uint32_t>(value.substr(0, x), key);
      scene.grid_w = kv::parse_number<std::uint32_t>(value.substr(x + 1), key);
    } else if (key == "n_layers") scene.n_layers = u32();
    else if (key == "n_timesteps") scene.n_timesteps = u32();
    else if (key == "noise_level") scene.noise_level = dbl();
    else if (key == "attention_noise") scene.attention_noise = dbl();
    else if (key == "distractor_fraction") scene.distractor_fraction = dbl();
    else if (key == "separation") scene.separation = dbl();
    else throw config_error("unknown config key '" + std::string(key) + "'");
  }

  void apply(const kv::Document& doc) {
    for (const auto& [k, v] : doc.entries()) set(k, v);
  }

  void load_file(const std::filesystem::path& path) {
    std::string text;
    try {
      text = kv::read_text_file(path.string());
    } catch (const Error& e) {
      throw config_error(e.what());
    }
    apply(kv::parse(text, path.filename().string(), ErrorKind::config));
  }

  // Record dir from the environment when not configured.
  void apply_environment() {
    if (!record_dir.empty()) return;
    if (const char* env = std::getenv(std::string(kRecordDirEnv).c_str()); env && *env)
      record_dir = env;
  }

  std::filesystem::path require_record_dir() const {
    if (record_dir.empty())
      throw config_error("record_dir not set (flag --record-dir or $" +
                         std::string(kRecordDirEnv) + ")");
    return record_dir;
  }

  // Scene parameters for a synth run, with the noise switch applied.
  SceneParams scene_params(Task t, std::uint64_t scene_seed) const {
    SceneParams p = scene;
    p.task = t;
    p.seed = scene_seed;
    if (noiseless) {
      p.noise_level = 0.0;
      p.attention_noise = 0.0;
      p.distractor_fraction = 0.0;
    }
    return p;
  }

  // Every key relevant to `commands`, defaults expanded.
  kv::Document to_document(unsigned commands) const {
    kv::Document doc;
    auto put = [&](std::string_view key, std::string value) {
      const ConfigKey* k = find_config_key(key);
      if (k && (k->commands & commands)) doc.set(std::string(key), std::move(value));
    };
    put("record_dir", record_dir.generic_string());
    put("output_dir", output_dir.generic_string());
    put("task", task ? std::string(to_string(*task)) : "auto");
    put("selected_text_indices", localize.selected_text_indices
                                     ? kv::join(*localize.selected_text_indices)
                                     : "auto");
    put("tau", kv::format_double(localize.tau));
    put("attention_layers",
        localize.attention_layers.empty() ? "all" : kv::join(localize.attention_layers));
    put("feature_layer",
        localize.feature_layer ? std::to_string(*localize.feature_layer) : "auto");
    put("connectivity",
        std::to_string(static_cast<int>(localize.morphology.connectivity)));
    put("dilation_radius", std::to_string(localize.morphology.dilation_radius));
    put("fill_holes", localize.morphology.fill_holes ? "true" : "false");
    put("epsilon", kv::format_double(localize.epsilon));
    put("apply_at", kv::join(std::vector<std::uint32_t>(apply_at.begin(), apply_at.end())));
    put("pin_mask_step", pin_mask_step ? std::to_string(*pin_mask_step) : "auto");
    put("mask_dir", mask_dir.generic_string());
    put("gt_dir", gt_dir.generic_string());
    put("eval_taus", kv::join(eval_taus));
    put("eval_layers", eval_layers.empty() ? "all" : kv::join(eval_layers));
    put("seed", std::to_string(seed));
    put("scenes_per_task", std::to_string(scenes_per_task));
    std::string task_list;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (i) task_list += ',';
      task_list += to_string(tasks[i]);
    }
    put("tasks", task_list);
    put("noiseless", noiseless ? "true" : "false");
    put("grid", std::to_string(scene.grid_h) + "x" + std::to_string(scene.grid_w));
    put("n_layers", std::to_string(scene.n_layers));
    put("n_timesteps", std::to_string(scene.n_timesteps));
    put("noise_level", kv::format_double(scene.noise_level));
    put("attention_noise", kv::format_double(scene.attention_noise));
    put("distractor_fraction", kv::format_double(scene.distractor_fraction));
    put("separation", kv::format_double(scene.separation));
    return doc;
  }
};

}  // namespace edloc
