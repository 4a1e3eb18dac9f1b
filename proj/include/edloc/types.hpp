#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "edloc/error.hpp"

namespace edloc {

enum class Stream : std::uint32_t {
  target = 0,
  source = 1,
  combined = 2,
};

inline std::string_view to_string(Stream s) {
  switch (s) {
    case Stream::target: return "tgt";
    case Stream::source: return "src";
    case Stream::combined: return "comb";
  }
  return "?";
}

inline Stream parse_stream(std::string_view s) {
  if (s == "tgt" || s == "target") return Stream::target;
  if (s == "src" || s == "source") return Stream::source;
  if (s == "comb" || s == "combined") return Stream::combined;
  throw config_error("unknown stream '" + std::string(s) + "'");
}

// Editing task taxonomy. The first three are the subject-centric primitives.
enum class Task : std::uint8_t {
  addition,
  removal,
  replacement,
  color,
  material,
  text_change,
  position,
  count,
  background,
};

inline constexpr std::array<Task, 9> kAllTasks = {
    Task::addition, Task::removal,  Task::replacement,
    Task::color,    Task::material, Task::text_change,
    Task::position, Task::count,    Task::background,
};

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::addition: return "addition";
    case Task::removal: return "removal";
    case Task::replacement: return "replacement";
    case Task::color: return "color";
    case Task::material: return "material";
    case Task::text_change: return "text_change";
    case Task::position: return "position";
    case Task::count: return "count";
    case Task::background: return "background";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  throw config_error("unknown task '" + std::string(s) + "'");
}

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const noexcept { return h * w; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

// Index geometry of the unified token sequence: text, then target image
// tokens, then source image tokens.
struct TokenLayout {
  std::uint32_t n_txt = 0;
  std::uint32_t n_img = 0;
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t d = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t n_timesteps = 0;
  std::uint32_t n_heads = 1;

  Grid grid() const noexcept { return {grid_h, grid_w}; }

  std::uint32_t text_begin() const noexcept { return 0; }
  std::uint32_t target_begin() const noexcept { return n_txt; }
  std::uint32_t source_begin() const noexcept { return n_txt + n_img; }
  std::uint32_t sequence_length() const noexcept { return n_txt + 2 * n_img; }

  void validate() const {
    if (n_txt < 1) throw validation_error("layout field n_txt: must be >= 1");
    if (n_img < 1) throw validation_error("layout field n_img: must be >= 1");
    if (d < 1) throw validation_error("layout field d: must be >= 1");
    if (n_layers < 1)
      throw validation_error("layout field n_layers: must be >= 1");
    if (n_timesteps < 1)
      throw validation_error("layout field n_timesteps: must be >= 1");
    if (n_heads < 1) throw validation_error("layout field n_heads: must be >= 1");
    if (std::uint64_t{grid_h} * grid_w != n_img)
      throw validation_error("layout field grid_h/grid_w: grid mismatch (" +
                             std::to_string(grid_h) + "x" +
                             std::to_string(grid_w) +
                             " != n_img=" + std::to_string(n_img) + ")");
  }

  friend bool operator==(const TokenLayout&, const TokenLayout&) = default;
};

// sigma[t] for denoising step t; step 0 is the pure-noise end.
struct NoiseSchedule {
  std::vector<float> sigma;

  void validate(std::optional<std::uint32_t> n_timesteps = std::nullopt) const {
    if (n_timesteps && sigma.size() != *n_timesteps)
      throw validation_error("schedule field sigma: length " +
                             std::to_string(sigma.size()) +
                             " != n_timesteps " + std::to_string(*n_timesteps));
    for (std::size_t t = 0; t < sigma.size(); ++t) {
      float s = sigma[t];
      if (!std::isfinite(s) || s < 0.0f || s > 1.0f)
        throw validation_error("schedule field sigma: value at step " +
                               std::to_string(t) + " outside [0, 1]");
      if (t > 0 && s > sigma[t - 1])
        throw validation_error("schedule field sigma: increases at step " +
                               std::to_string(t));
    }
  }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

struct InstructionSpec {
  Task task = Task::replacement;
  std::vector<std::uint32_t> selected_text_indices;
  std::string label;

  void validate(std::uint32_t n_txt) const {
    if (selected_text_indices.empty())
      throw validation_error(
          "instruction field selected_text_indices: must be non-empty");
    for (std::size_t k = 0; k < selected_text_indices.size(); ++k) {
      if (selected_text_indices[k] >= n_txt)
        throw validation_error(
            "instruction field selected_text_indices: index " +
            std::to_string(selected_text_indices[k]) + " >= n_txt " +
            std::to_string(n_txt));
      if (k > 0 && selected_text_indices[k] <= selected_text_indices[k - 1])
        throw validation_error(
            "instruction field selected_text_indices: not strictly increasing");
    }
    for (char c : label)
      if (c == '\n' || c == '\r')
        throw validation_error("instruction field label: contains a newline");
  }

  friend bool operator==(const InstructionSpec&, const InstructionSpec&) = default;
};

enum class MaskStage : std::uint8_t {
  attention_raw = 0,
  attention_propagated = 1,
  feature = 2,
  task_combined = 3,
  postprocessed = 4,
  ground_truth = 5,
};

inline constexpr std::uint8_t kMaskStageCount = 6;

inline std::string_view to_string(MaskStage s) {
  switch (s) {
    case MaskStage::attention_raw: return "attention_raw";
    case MaskStage::attention_propagated: return "attention_propagated";
    case MaskStage::feature: return "feature";
    case MaskStage::task_combined: return "task_combined";
    case MaskStage::postprocessed: return "postprocessed";
    case MaskStage::ground_truth: return "ground_truth";
  }
  return "?";
}

// Short tag used in record file names.
inline std::string_view file_tag(MaskStage s) {
  switch (s) {
    case MaskStage::attention_raw: return "raw";
    case MaskStage::attention_propagated: return "prop";
    case MaskStage::feature: return "feat";
    case MaskStage::task_combined: return "task";
    case MaskStage::postprocessed: return "post";
    case MaskStage::ground_truth: return "gt";
  }
  return "?";
}

inline MaskStage parse_mask_stage(std::string_view s) {
  for (std::uint8_t i = 0; i < kMaskStageCount; ++i) {
    auto stage = static_cast<MaskStage>(i);
    if (to_string(stage) == s || file_tag(stage) == s) return stage;
  }
  throw config_error("unknown mask stage '" + std::string(s) + "'");
}

// Binary mask over image tokens, row-major over the token grid.
struct EditMask {
  Stream stream = Stream::combined;
  MaskStage stage = MaskStage::attention_raw;
  std::optional<std::uint32_t> timestep;
  std::optional<std::uint32_t> layer;
  std::vector<std::uint8_t> bits;
  // Set when a refinement step fell back to its input.
  bool degenerate = false;

  std::size_t size() const noexcept { return bits.size(); }
  bool operator[](std::size_t i) const { return bits[i] != 0; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool none() const noexcept { return count() == 0; }
  bool all() const noexcept { return count() == bits.size(); }

  bool at(const Grid& g, std::size_t r, std::size_t c) const {
    return bits[r * g.w + c] != 0;
  }

  static EditMask from_bits(std::vector<std::uint8_t> bits,
                            MaskStage stage = MaskStage::attention_raw,
                            Stream stream = Stream::combined) {
    EditMask m;
    m.stream = stream;
    m.stage = stage;
    m.bits = std::move(bits);
    for (auto& b : m.bits) b = b ? 1 : 0;
    return m;
  }

  // Membership only; provenance is not compared.
  bool same_bits(const EditMask& other) const { return bits == other.bits; }
  bool subset_of(const EditMask& other) const {
    if (bits.size() != other.bits.size()) return false;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i] && !other.bits[i]) return false;
    return true;
  }
};

}  // namespace edloc
