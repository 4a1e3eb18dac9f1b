#pragma once

// Feature-space refinement of attention-derived masks: L2 normalization,
// masked average pooling into two centroids, nearest-centroid assignment.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/matrix.hpp"
#include "edloc/record_store.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline constexpr double kPoolingEpsilon = 1e-8;

struct CentroidPair {
  Stream stream = Stream::target;
  std::optional<std::uint32_t> layer;
  std::optional<std::uint32_t> timestep;
  std::vector<double> c1;  // edited region
  std::vector<double> c0;  // preserved region
  std::size_t n1 = 0;
  std::size_t n0 = 0;
};

// Rows scaled to unit Euclidean norm; all-zero rows stay zero.
template <typename T>
MatrixD l2_normalize(const BasicMatrix<T>& f) {
  MatrixD out(f.rows(), f.cols());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto src = f.row(i);
    double sq = 0.0;
    for (auto x : src) sq += static_cast<double>(x) * static_cast<double>(x);
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * inv;
  }
  return out;
}

inline CentroidPair compute_centroids(const MatrixD& f_hat, const EditMask& seed,
                                      double epsilon = kPoolingEpsilon) {
  if (seed.size() != f_hat.rows())
    throw validation_error("compute_centroids: mask length " +
                           std::to_string(seed.size()) + " != token count " +
                           std::to_string(f_hat.rows()));
  CentroidPair c;
  c.stream = seed.stream;
  c.timestep = seed.timestep;
  c.c1.assign(f_hat.cols(), 0.0);
  c.c0.assign(f_hat.cols(), 0.0);
  for (std::size_t i = 0; i < f_hat.rows(); ++i) {
    auto& target = seed[i] ? c.c1 : c.c0;
    (seed[i] ? c.n1 : c.n0) += 1;
    auto row = f_hat.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) target[j] += row[j];
  }
  const double d1 = static_cast<double>(c.n1) + epsilon;
  const double d0 = static_cast<double>(c.n0) + epsilon;
  for (auto& x : c.c1) x /= d1;
  for (auto& x : c.c0) x /= d0;
  return c;
}

// bits[i] = <f_hat[i], c1> > <f_hat[i], c0>. Ties go to class 0.
// Unchecked core; see assign() for the degenerate-centroid guard.
inline EditMask assign_nearest(const MatrixD& f_hat, const CentroidPair& c) {
  if (c.c1.size() != f_hat.cols() || c.c0.size() != f_hat.cols())
    throw validation_error("assign: centroid dimension mismatch");
  EditMask out;
  out.stream = c.stream;
  out.stage = MaskStage::feature;
  out.layer = c.layer;
  out.timestep = c.timestep;
  out.bits.resize(f_hat.rows());
  for (std::size_t i = 0; i < f_hat.rows(); ++i) {
    auto row = f_hat.row(i);
    double s1 = 0.0, s0 = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      s1 += row[j] * c.c1[j];
      s0 += row[j] * c.c0[j];
    }
    out.bits[i] = s1 > s0 ? 1 : 0;
  }
  return out;
}

// Nearest-centroid assignment. When either class of the seed was empty the
// seed is returned unchanged and flagged degenerate.
inline EditMask assign(const MatrixD& f_hat, const CentroidPair& c,
                       const EditMask& seed) {
  if (c.n1 == 0 || c.n0 == 0) {
    EditMask out = seed;
    out.stage = MaskStage::feature;
    out.layer = c.layer;
    out.degenerate = true;
    return out;
  }
  return assign_nearest(f_hat, c);
}

struct NoRefineObserver {
  void operator()(const CentroidPair&) const noexcept {}
};

// One centroid/assign pass over the stream's features. `on_pass` is invoked
// once per centroid computation.
template <typename Observer = NoRefineObserver>
EditMask refine(const FeatureBundle& features, const EditMask& seed,
                double epsilon = kPoolingEpsilon, Observer&& on_pass = {}) {
  if (seed.size() != features.f.rows())
    throw validation_error("refine: seed length " + std::to_string(seed.size()) +
                           " != token count " +
                           std::to_string(features.f.rows()));
  MatrixD f_hat = l2_normalize(features.f);
  CentroidPair c = compute_centroids(f_hat, seed, epsilon);
  c.stream = features.stream;
  c.layer = features.layer;
  c.timestep = features.timestep;
  on_pass(c);
  EditMask out = assign(f_hat, c, seed);
  out.stream = features.stream;
  out.timestep = features.timestep;
  return out;
}

}  // namespace edloc
