#pragma once

// Attention-derived coarse edit masks for one image stream.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/matrix.hpp"
#include "edloc/record_store.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline constexpr double kDefaultTau = 0.5;

struct AttentionMap {
  Stream stream = Stream::target;
  std::optional<std::uint32_t> timestep;
  std::vector<double> values;  // n_img, in [0, 1]
  std::vector<std::uint32_t> layers_used;
};

// Diffuses cross-attention one step along the self-attention affinities:
// returns sa * ca (n_img x n_txt).
inline MatrixD propagate(const Matrix& sa, const Matrix& ca) {
  if (sa.rows() != sa.cols() || sa.cols() != ca.rows())
    throw validation_error("propagate: dimension mismatch, sa " +
                           std::to_string(sa.rows()) + "x" +
                           std::to_string(sa.cols()) + " vs ca " +
                           std::to_string(ca.rows()) + "x" +
                           std::to_string(ca.cols()));
  const std::size_t n = sa.rows();
  const std::size_t m = ca.cols();
  MatrixD out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto acc = out.row(i);
    auto sa_row = sa.row(i);
    for (std::size_t k = 0; k < n; ++k) {
      const double w = sa_row[k];
      if (w == 0.0) continue;
      auto ca_row = ca.row(k);
      for (std::size_t j = 0; j < m; ++j) acc[j] += w * ca_row[j];
    }
  }
  return out;
}

inline MatrixD propagate(const AttentionBundle& bundle) {
  return propagate(bundle.sa, bundle.ca);
}

// Copies the raw cross-attention slice; the no-propagation baseline.
inline MatrixD cross_attention(const AttentionBundle& bundle) {
  const Matrix& ca = bundle.ca;
  MatrixD out(ca.rows(), ca.cols());
  for (std::size_t i = 0; i < ca.size(); ++i) out.values()[i] = ca.values()[i];
  return out;
}

// Min-max normalizes in place; a constant vector becomes all zeros.
inline void min_max_normalize(std::vector<double>& v) {
  if (v.empty()) return;
  auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (auto& x : v) x = std::clamp((x - lo) / range, 0.0, 1.0);
}

// Sums the diffused maps over layers, then over the selected text columns,
// and min-max normalizes the result.
inline AttentionMap aggregate(std::span<const MatrixD> diffused,
                              std::span<const std::uint32_t> selected_text_indices) {
  if (diffused.empty()) throw validation_error("aggregate: empty layer list");
  if (selected_text_indices.empty())
    throw validation_error("aggregate: empty text index subset");
  const std::size_t n = diffused.front().rows();
  const std::size_t n_txt = diffused.front().cols();
  for (const auto& m : diffused)
    if (m.rows() != n || m.cols() != n_txt)
      throw validation_error("aggregate: layer maps differ in shape");
  for (std::size_t k = 0; k < selected_text_indices.size(); ++k) {
    if (selected_text_indices[k] >= n_txt)
      throw validation_error("aggregate: text index " +
                             std::to_string(selected_text_indices[k]) +
                             " out of range");
    if (k > 0 && selected_text_indices[k] <= selected_text_indices[k - 1])
      throw validation_error("aggregate: text indices not strictly increasing");
  }

  MatrixD summed(n, n_txt);
  for (const auto& m : diffused)
    for (std::size_t i = 0; i < m.size(); ++i) summed.values()[i] += m.values()[i];

  AttentionMap map;
  map.values.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : selected_text_indices) map.values[i] += summed(i, j);
  min_max_normalize(map.values);
  return map;
}

// bits[i] = values[i] > tau, strictly.
inline EditMask threshold(const AttentionMap& map, double tau,
                          MaskStage stage = MaskStage::attention_propagated) {
  if (!(tau > 0.0 && tau < 1.0))
    throw validation_error("threshold: tau must lie in (0, 1)");
  EditMask mask;
  mask.stream = map.stream;
  mask.stage = stage;
  mask.timestep = map.timestep;
  mask.bits.resize(map.values.size());
  for (std::size_t i = 0; i < map.values.size(); ++i)
    mask.bits[i] = map.values[i] > tau ? 1 : 0;
  return mask;
}

namespace detail {

template <typename Transform>
AttentionMap attention_map_impl(std::span<const AttentionBundle> bundles,
                                std::span<const std::uint32_t> selected,
                                Transform&& transform) {
  if (bundles.empty()) throw validation_error("attention map: no bundles");
  std::vector<MatrixD> maps;
  maps.reserve(bundles.size());
  for (const auto& b : bundles) {
    if (b.stream != bundles.front().stream ||
        b.timestep != bundles.front().timestep)
      throw validation_error(
          "attention map: bundles mix streams or timesteps");
    maps.push_back(transform(b));
  }
  AttentionMap map = aggregate(maps, selected);
  map.stream = bundles.front().stream;
  map.timestep = bundles.front().timestep;
  for (const auto& b : bundles) map.layers_used.push_back(b.layer);
  return map;
}

}  // namespace detail

// Layer-aggregated map with propagation, for one stream and timestep.
inline AttentionMap propagated_attention_map(
    std::span<const AttentionBundle> bundles,
    std::span<const std::uint32_t> selected_text_indices) {
  return detail::attention_map_impl(
      bundles, selected_text_indices,
      [](const AttentionBundle& b) { return propagate(b); });
}

inline AttentionMap raw_attention_map(
    std::span<const AttentionBundle> bundles,
    std::span<const std::uint32_t> selected_text_indices) {
  return detail::attention_map_impl(bundles, selected_text_indices,
                                    [](const AttentionBundle& b) {
                                      return cross_attention(b);
                                    });
}

inline EditMask attention_mask(std::span<const AttentionBundle> bundles,
                               std::span<const std::uint32_t> selected_text_indices,
                               double tau) {
  return threshold(propagated_attention_map(bundles, selected_text_indices), tau,
                   MaskStage::attention_propagated);
}

inline EditMask attention_mask_without_propagation(
    std::span<const AttentionBundle> bundles,
    std::span<const std::uint32_t> selected_text_indices, double tau) {
  return threshold(raw_attention_map(bundles, selected_text_indices), tau,
                   MaskStage::attention_raw);
}

}  // namespace edloc
