#pragma once

// Mask-guided latent preservation. The host denoising loop calls apply_plan
// between steps; nothing here runs a model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>

#include "edloc/error.hpp"
#include "edloc/matrix.hpp"
#include "edloc/record_store.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline const std::set<std::uint32_t> kDefaultApplyAt = {5, 10, 15};
inline constexpr std::uint32_t kDefaultTimesteps = 28;

// sigma * z_init + (1 - sigma) * z_src, element-wise.
inline Matrix inverted_latent(const Matrix& z_init, const Matrix& z_src,
                              float sigma) {
  if (!z_init.same_shape(z_src))
    throw validation_error("inverted_latent: shape mismatch");
  if (!std::isfinite(sigma) || sigma < 0.0f || sigma > 1.0f)
    throw validation_error("inverted_latent: sigma outside [0, 1]");
  Matrix out(z_init.rows(), z_init.cols());
  const float keep = 1.0f - sigma;
  auto a = z_init.values();
  auto b = z_src.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigma * a[i] + keep * b[i];
  return out;
}

// Rows with mask 1 copied from z_cur, rows with mask 0 from z_inv.
inline Matrix blend(const Matrix& z_cur, const Matrix& z_inv, const EditMask& mask) {
  if (!z_cur.same_shape(z_inv))
    throw validation_error("blend: latent shapes differ");
  if (mask.size() != z_cur.rows())
    throw validation_error("blend: mask length " + std::to_string(mask.size()) +
                           " != token count " + std::to_string(z_cur.rows()));
  Matrix out(z_cur.rows(), z_cur.cols());
  for (std::size_t i = 0; i < z_cur.rows(); ++i) {
    auto src = mask[i] ? z_cur.row(i) : z_inv.row(i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

struct PreservationPlan {
  std::set<std::uint32_t> apply_at = kDefaultApplyAt;
  NoiseSchedule schedule;
  // When set, this step's mask is used at every applied step.
  std::optional<std::uint32_t> pinned_mask_step;

  bool applies(std::uint32_t step) const { return apply_at.contains(step); }

  void validate() const {
    schedule.validate();
    for (auto s : apply_at)
      if (s >= schedule.sigma.size())
        throw validation_error("preservation plan: step " + std::to_string(s) +
                               " outside [0, " +
                               std::to_string(schedule.sigma.size()) + ")");
    if (pinned_mask_step && *pinned_mask_step >= schedule.sigma.size())
      throw validation_error("preservation plan: pinned mask step out of range");
  }
};

// Returns z_cur untouched when `step` is not an applied step; otherwise
// blends toward the timestep-aligned inverted latent. `mask` must be
// provided for applied steps.
inline Matrix apply_plan(const PreservationPlan& plan, std::uint32_t step,
                         const Matrix& z_cur, const Matrix& z_init,
                         const Matrix& z_src, const EditMask* mask) {
  if (step >= plan.schedule.sigma.size())
    throw validation_error("apply_plan: step " + std::to_string(step) +
                           " outside the schedule");
  if (!plan.applies(step)) return z_cur;
  if (!mask)
    throw missing_record("apply_plan: missing mask for applied step " +
                         std::to_string(step));
  return blend(z_cur, inverted_latent(z_init, z_src, plan.schedule.sigma[step]),
               *mask);
}

}  // namespace edloc
