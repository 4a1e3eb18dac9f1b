#pragma once

// Task-aware combination of per-stream masks and grid morphology.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/types.hpp"

namespace edloc {

enum class StreamPolicy : std::uint8_t {
  target_only,
  source_only,
  union_of_streams,
};

inline std::string_view to_string(StreamPolicy p) {
  switch (p) {
    case StreamPolicy::target_only: return "target_only";
    case StreamPolicy::source_only: return "source_only";
    case StreamPolicy::union_of_streams: return "union";
  }
  return "?";
}

// Addition shows up in the target stream, removal in the source stream;
// color and material edits are read from the source stream, everything
// else from both.
constexpr StreamPolicy policy_for(Task task) {
  switch (task) {
    case Task::addition: return StreamPolicy::target_only;
    case Task::removal:
    case Task::color:
    case Task::material: return StreamPolicy::source_only;
    case Task::replacement:
    case Task::text_change:
    case Task::position:
    case Task::count:
    case Task::background: return StreamPolicy::union_of_streams;
  }
  return StreamPolicy::union_of_streams;
}

inline EditMask combine(Task task, const EditMask& m_tgt, const EditMask& m_src) {
  if (m_tgt.size() != m_src.size())
    throw validation_error("combine: mask lengths differ (" +
                           std::to_string(m_tgt.size()) + " vs " +
                           std::to_string(m_src.size()) + ")");
  EditMask out;
  switch (policy_for(task)) {
    case StreamPolicy::target_only: out.bits = m_tgt.bits; break;
    case StreamPolicy::source_only: out.bits = m_src.bits; break;
    case StreamPolicy::union_of_streams:
      out.bits.resize(m_tgt.size());
      for (std::size_t i = 0; i < out.bits.size(); ++i)
        out.bits[i] = (m_tgt.bits[i] || m_src.bits[i]) ? 1 : 0;
      break;
  }
  out.stream = Stream::combined;
  out.stage = MaskStage::task_combined;
  out.timestep = m_tgt.timestep ? m_tgt.timestep : m_src.timestep;
  out.layer = m_tgt.layer ? m_tgt.layer : m_src.layer;
  return out;
}

enum class Connectivity : std::uint8_t { four = 4, eight = 8 };

inline Connectivity dual(Connectivity c) {
  return c == Connectivity::eight ? Connectivity::four : Connectivity::eight;
}

inline Connectivity parse_connectivity(int c) {
  if (c == 4) return Connectivity::four;
  if (c == 8) return Connectivity::eight;
  throw config_error("connectivity must be 4 or 8, got " + std::to_string(c));
}

struct MorphologyConfig {
  Connectivity connectivity = Connectivity::eight;
  std::uint32_t dilation_radius = 2;
  bool fill_holes = true;

  void validate(const Grid& g) const {
    if (dilation_radius > std::min(g.h, g.w))
      throw validation_error("morphology: dilation_radius " +
                             std::to_string(dilation_radius) +
                             " exceeds min(grid_h, grid_w)");
  }
};

namespace detail {

inline void check_grid(const EditMask& m, const Grid& g, const char* op) {
  if (m.size() != g.size())
    throw validation_error(std::string(op) + ": mask length " +
                           std::to_string(m.size()) + " != grid " +
                           std::to_string(g.h) + "x" + std::to_string(g.w));
}

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // Keeps the smaller index as root.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

// Two-pass union-find labeling of cells whose value equals `value`.
// Returns, per cell, the row-major index of its component's first cell, or
// npos for cells of the other value.
inline std::vector<std::size_t> label_components(
    const std::vector<std::uint8_t>& bits, const Grid& g, Connectivity conn,
    std::uint8_t value = 1) {
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  detail::DisjointSet ds(bits.size());
  auto on = [&](std::size_t r, std::size_t c) {
    return (bits[r * g.w + c] != 0) == (value != 0);
  };
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t c = 0; c < g.w; ++c) {
      if (!on(r, c)) continue;
      const std::size_t i = r * g.w + c;
      if (c > 0 && on(r, c - 1)) ds.unite(i, i - 1);
      if (r > 0) {
        if (on(r - 1, c)) ds.unite(i, i - g.w);
        if (conn == Connectivity::eight) {
          if (c > 0 && on(r - 1, c - 1)) ds.unite(i, i - g.w - 1);
          if (c + 1 < g.w && on(r - 1, c + 1)) ds.unite(i, i - g.w + 1);
        }
      }
    }
  std::vector<std::size_t> labels(bits.size(), npos);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if ((bits[i] != 0) == (value != 0)) labels[i] = ds.find(i);
  return labels;
}

struct ComponentSummary {
  std::vector<std::size_t> sizes;  // ordered by first cell
  std::size_t kept = 0;            // size of the retained component
};

// Keeps only the largest component; ties go to the component whose first
// row-major cell comes first.
inline EditMask largest_component(const EditMask& mask, const Grid& g,
                                  Connectivity conn = Connectivity::eight,
                                  ComponentSummary* summary = nullptr) {
  detail::check_grid(mask, g, "largest_component");
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  auto labels = label_components(mask.bits, g, conn);
  std::vector<std::size_t> size_by_root(mask.size(), 0);
  for (auto l : labels)
    if (l != npos) ++size_by_root[l];
  std::size_t best = npos;
  for (std::size_t root = 0; root < size_by_root.size(); ++root) {
    if (size_by_root[root] == 0) continue;
    if (summary) summary->sizes.push_back(size_by_root[root]);
    if (best == npos || size_by_root[root] > size_by_root[best]) best = root;
  }
  EditMask out = mask;
  for (std::size_t i = 0; i < out.bits.size(); ++i)
    out.bits[i] = (best != npos && labels[i] == best) ? 1 : 0;
  if (summary) summary->kept = best == npos ? 0 : size_by_root[best];
  return out;
}

// Sets every 0-region that does not reach the grid border. Background
// regions are connected with the dual of the foreground connectivity.
inline EditMask fill_holes(const EditMask& mask, const Grid& g,
                           Connectivity conn = Connectivity::eight,
                           std::size_t* filled = nullptr) {
  detail::check_grid(mask, g, "fill_holes");
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  auto labels = label_components(mask.bits, g, dual(conn), 0);
  std::vector<std::uint8_t> touches_border(mask.size(), 0);
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t c = 0; c < g.w; ++c) {
      if (r != 0 && c != 0 && r + 1 != g.h && c + 1 != g.w) continue;
      auto l = labels[r * g.w + c];
      if (l != npos) touches_border[l] = 1;
    }
  EditMask out = mask;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.bits.size(); ++i)
    if (labels[i] != npos && !touches_border[labels[i]]) {
      out.bits[i] = 1;
      ++n;
    }
  if (filled) *filled = n;
  return out;
}

// `radius` rounds of dilation with a 3x3 structuring element.
inline EditMask dilate(const EditMask& mask, const Grid& g, std::uint32_t radius) {
  detail::check_grid(mask, g, "dilate");
  EditMask out = mask;
  std::vector<std::uint8_t> next(mask.size());
  for (std::uint32_t step = 0; step < radius; ++step) {
    // separable: horizontal then vertical max
    for (std::size_t r = 0; r < g.h; ++r)
      for (std::size_t c = 0; c < g.w; ++c) {
        const std::size_t i = r * g.w + c;
        std::uint8_t v = out.bits[i];
        if (c > 0) v |= out.bits[i - 1];
        if (c + 1 < g.w) v |= out.bits[i + 1];
        next[i] = v;
      }
    for (std::size_t r = 0; r < g.h; ++r)
      for (std::size_t c = 0; c < g.w; ++c) {
        const std::size_t i = r * g.w + c;
        std::uint8_t v = next[i];
        if (r > 0) v |= next[i - g.w];
        if (r + 1 < g.h) v |= next[i + g.w];
        out.bits[i] = v;
      }
  }
  return out;
}

struct PostprocessReport {
  ComponentSummary components;
  std::size_t holes_filled = 0;
  std::size_t final_size = 0;
};

// largest component, then hole filling, then dilation.
inline EditMask postprocess(const EditMask& mask, const Grid& g,
                            const MorphologyConfig& config = {},
                            PostprocessReport* report = nullptr) {
  config.validate(g);
  PostprocessReport local;
  PostprocessReport& rep = report ? *report : local;
  EditMask out = largest_component(mask, g, config.connectivity, &rep.components);
  if (config.fill_holes) out = fill_holes(out, g, config.connectivity, &rep.holes_filled);
  out = dilate(out, g, config.dilation_radius);
  out.stage = MaskStage::postprocessed;
  rep.final_size = out.count();
  return out;
}

}  // namespace edloc
