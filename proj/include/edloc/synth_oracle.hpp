#pragma once

// Synthetic dual-stream scenes with known ground truth, and brute-force
// reference implementations used to check the production paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/matrix.hpp"
#include "edloc/record_store.hpp"
#include "edloc/rng.hpp"
#include "edloc/task_mask.hpp"
#include "edloc/types.hpp"

namespace edloc {

// ---------------------------------------------------------------------------
// brute-force oracles

template <typename A, typename B>
MatrixD brute_matmul(const BasicMatrix<A>& a, const BasicMatrix<B>& b) {
  if (a.cols() != b.rows()) throw validation_error("brute_matmul: dimension mismatch");
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        s += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
      out(i, j) = s;
    }
  return out;
}

namespace oracle_detail {

inline std::vector<std::pair<int, int>> offsets(Connectivity conn) {
  std::vector<std::pair<int, int>> o = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  if (conn == Connectivity::eight)
    o.insert(o.end(), {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}});
  return o;
}

// Stack flood fill from `start` over cells equal to `value`.
inline std::vector<std::size_t> flood(const std::vector<std::uint8_t>& bits,
                                      const Grid& g, Connectivity conn,
                                      std::size_t start, std::uint8_t value,
                                      std::vector<std::uint8_t>& visited) {
  std::vector<std::size_t> component;
  std::vector<std::size_t> stack = {start};
  visited[start] = 1;
  const auto offs = offsets(conn);
  while (!stack.empty()) {
    std::size_t i = stack.back();
    stack.pop_back();
    component.push_back(i);
    const int r = static_cast<int>(i / g.w);
    const int c = static_cast<int>(i % g.w);
    for (auto [dr, dc] : offs) {
      const int rr = r + dr, cc = c + dc;
      if (rr < 0 || cc < 0 || rr >= static_cast<int>(g.h) ||
          cc >= static_cast<int>(g.w))
        continue;
      const std::size_t j = static_cast<std::size_t>(rr) * g.w + cc;
      if (visited[j] || (bits[j] != 0) != (value != 0)) continue;
      visited[j] = 1;
      stack.push_back(j);
    }
  }
  std::sort(component.begin(), component.end());
  return component;
}

}  // namespace oracle_detail

// Connected components of 1-cells, in order of their first row-major cell.
inline std::vector<std::vector<std::size_t>> brute_components(
    const EditMask& mask, const Grid& g, Connectivity conn) {
  std::vector<std::uint8_t> visited(mask.size(), 0);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.bits[i] && !visited[i])
      out.push_back(oracle_detail::flood(mask.bits, g, conn, i, 1, visited));
  return out;
}

inline EditMask brute_largest_component(const EditMask& mask, const Grid& g,
                                        Connectivity conn) {
  auto comps = brute_components(mask, g, conn);
  EditMask out = mask;
  std::fill(out.bits.begin(), out.bits.end(), 0);
  const std::vector<std::size_t>* best = nullptr;
  for (const auto& c : comps)
    if (!best || c.size() > best->size()) best = &c;
  if (best)
    for (auto i : *best) out.bits[i] = 1;
  return out;
}

// Breadth-first flood of the background from every border cell; whatever
// background the flood misses is a hole.
inline EditMask brute_fill_holes(const EditMask& mask, const Grid& g,
                                 Connectivity conn) {
  const Connectivity bg = dual(conn);
  std::vector<std::uint8_t> reached(mask.size(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t c = 0; c < g.w; ++c) {
      if (r != 0 && c != 0 && r + 1 != g.h && c + 1 != g.w) continue;
      std::size_t i = r * g.w + c;
      if (!mask.bits[i] && !reached[i]) {
        reached[i] = 1;
        queue.push_back(i);
      }
    }
  const auto offs = oracle_detail::offsets(bg);
  while (!queue.empty()) {
    std::size_t i = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(i / g.w), c = static_cast<int>(i % g.w);
    for (auto [dr, dc] : offs) {
      const int rr = r + dr, cc = c + dc;
      if (rr < 0 || cc < 0 || rr >= static_cast<int>(g.h) ||
          cc >= static_cast<int>(g.w))
        continue;
      std::size_t j = static_cast<std::size_t>(rr) * g.w + cc;
      if (mask.bits[j] || reached[j]) continue;
      reached[j] = 1;
      queue.push_back(j);
    }
  }
  EditMask out = mask;
  for (std::size_t i = 0; i < out.bits.size(); ++i)
    if (!out.bits[i] && !reached[i]) out.bits[i] = 1;
  return out;
}

// A cell is set iff some input cell lies within Chebyshev distance `radius`.
inline EditMask brute_dilate(const EditMask& mask, const Grid& g,
                             std::uint32_t radius) {
  EditMask out = mask;
  const long rad = radius;
  for (std::size_t r = 0; r < g.h; ++r)
    for (std::size_t c = 0; c < g.w; ++c) {
      bool hit = false;
      for (std::size_t rr = 0; rr < g.h && !hit; ++rr)
        for (std::size_t cc = 0; cc < g.w && !hit; ++cc) {
          if (!mask.bits[rr * g.w + cc]) continue;
          long dist = std::max(std::labs(static_cast<long>(rr) - static_cast<long>(r)),
                               std::labs(static_cast<long>(cc) - static_cast<long>(c)));
          hit = dist <= rad;
        }
      out.bits[r * g.w + c] = hit ? 1 : 0;
    }
  return out;
}

// |pred & gt| / |pred | gt|; two empty masks score 1.
inline double iou(const EditMask& pred, const EditMask& gt) {
  if (pred.size() != gt.size())
    throw validation_error("iou: mask lengths differ (" +
                           std::to_string(pred.size()) + " vs " +
                           std::to_string(gt.size()) + ")");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.bits[i], q = gt.bits[i];
    inter += p && q;
    uni += p || q;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// scene generation

struct SceneParams {
  Task task = Task::replacement;
  std::uint64_t seed = 0;

  std::uint32_t grid_h = 16;
  std::uint32_t grid_w = 16;
  std::uint32_t n_txt = 12;
  std::uint32_t d = 32;
  std::uint32_t n_layers = 8;
  std::uint32_t n_timesteps = 8;

  // standard deviation of isotropic feature noise (per dimension)
  double noise_level = 0.1;
  // relative multiplicative jitter on attention entries
  double attention_noise = 0.3;
  // share of selected-token attention mass placed on non-GT tokens
  double distractor_fraction = 0.2;
  // object/background centroid distance at the deepest layer
  double separation = 1.0;

  // object half-extent as a fraction of the grid side
  double object_scale_min = 0.16;
  double object_scale_max = 0.28;
  std::uint32_t background_segments = 3;
  double background_texture = 0.45;
  // inner part of the object whose features match the attention peak
  double core_radius = 0.5;
  // cosine-like alignment of the object's periphery with its core
  double periphery_alignment = 0.4;
  double profile_decay = 1.0;
  double affinity_bandwidth = 2.0;
  // self-attention weight across segment boundaries, relative to within
  double boundary_leak = 0.8;
  // per-token distractor value, relative to the attention peak
  double spike_level = 0.6;
  double attention_peak = 0.25;
  double self_attention_mass = 0.6;
  double text_floor = 0.02;
  double latent_drift = 0.1;

  static SceneParams noiseless(Task task, std::uint64_t seed) {
    SceneParams p;
    p.task = task;
    p.seed = seed;
    p.noise_level = 0.0;
    p.attention_noise = 0.0;
    p.distractor_fraction = 0.0;
    return p;
  }

  void validate() const {
    if (grid_h < 3 || grid_w < 3)
      throw validation_error("scene: grid must be at least 3x3");
    if (n_txt < 2) throw validation_error("scene: n_txt must be >= 2");
    if (d < 2) throw validation_error("scene: d must be >= 2");
    if (n_layers < 1 || n_timesteps < 1)
      throw validation_error("scene: need at least one layer and timestep");
    if (!(noise_level >= 0.0) || !(attention_noise >= 0.0))
      throw validation_error("scene: noise levels must be >= 0");
    if (!(distractor_fraction >= 0.0 && distractor_fraction < 1.0))
      throw validation_error("scene: distractor_fraction must lie in [0, 1)");
    if (!(object_scale_min > 0.0 && object_scale_min <= object_scale_max))
      throw validation_error("scene: bad object scale range");
    if (object_scale_max > 0.5)
      throw validation_error(
          "scene: infeasible geometry, object larger than the grid");
    if (!(periphery_alignment >= -1.0 && periphery_alignment <= 1.0))
      throw validation_error("scene: periphery_alignment must lie in [-1, 1]");
    if (!(self_attention_mass > 0.0 && self_attention_mass <= 1.0))
      throw validation_error("scene: self_attention_mass must lie in (0, 1]");
    if (background_segments < 1)
      throw validation_error("scene: need at least one background segment");
  }

  kv::Document to_document() const {
    kv::Document doc;
    doc.set("task", std::string(to_string(task)));
    doc.set("seed", std::to_string(seed));
    doc.set("grid_h", std::to_string(grid_h));
    doc.set("grid_w", std::to_string(grid_w));
    doc.set("n_txt", std::to_string(n_txt));
    doc.set("d", std::to_string(d));
    doc.set("n_layers", std::to_string(n_layers));
    doc.set("n_timesteps", std::to_string(n_timesteps));
    doc.set("noise_level", kv::format_double(noise_level));
    doc.set("attention_noise", kv::format_double(attention_noise));
    doc.set("distractor_fraction", kv::format_double(distractor_fraction));
    doc.set("separation", kv::format_double(separation));
    doc.set("object_scale_min", kv::format_double(object_scale_min));
    doc.set("object_scale_max", kv::format_double(object_scale_max));
    doc.set("background_segments", std::to_string(background_segments));
    doc.set("background_texture", kv::format_double(background_texture));
    doc.set("core_radius", kv::format_double(core_radius));
    doc.set("periphery_alignment", kv::format_double(periphery_alignment));
    doc.set("profile_decay", kv::format_double(profile_decay));
    doc.set("affinity_bandwidth", kv::format_double(affinity_bandwidth));
    doc.set("boundary_leak", kv::format_double(boundary_leak));
    doc.set("spike_level", kv::format_double(spike_level));
    doc.set("attention_peak", kv::format_double(attention_peak));
    doc.set("self_attention_mass", kv::format_double(self_attention_mass));
    doc.set("text_floor", kv::format_double(text_floor));
    doc.set("latent_drift", kv::format_double(latent_drift));
    return doc;
  }
};

// Linear schedule from 1 (pure noise) down to 0 at the last step.
inline NoiseSchedule linear_schedule(std::uint32_t n_timesteps) {
  NoiseSchedule s;
  s.sigma.resize(n_timesteps);
  for (std::uint32_t t = 0; t < n_timesteps; ++t)
    s.sigma[t] = n_timesteps == 1
                     ? 1.0f
                     : static_cast<float>(n_timesteps - 1 - t) /
                           static_cast<float>(n_timesteps - 1);
  return s;
}

// A generated scene. Records are produced on demand and depend only on
// (params, seed, record identity), never on call order.
class SyntheticScene {
 public:
  explicit SyntheticScene(const SceneParams& params) : p_(params) {
    p_.validate();
    build();
  }

  const SceneParams& params() const noexcept { return p_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  const TokenLayout& layout() const noexcept { return manifest_.layout; }
  const InstructionSpec& instruction() const noexcept {
    return manifest_.instruction;
  }
  const NoiseSchedule& schedule() const noexcept { return manifest_.schedule; }
  std::vector<std::uint32_t> layers() const { return manifest_.layers(); }
  std::vector<std::uint32_t> timesteps() const { return manifest_.timesteps(); }
  bool has_ground_truth() const { return true; }

  // Per-stream ground truth; Stream::combined gives the task-level mask.
  EditMask ground_truth(Stream s = Stream::combined) const {
    EditMask m;
    m.stage = MaskStage::ground_truth;
    m.stream = s;
    m.bits = s == Stream::target   ? gt_tgt_
             : s == Stream::source ? gt_src_
                                   : gt_task_;
    return m;
  }

  AttentionBundle attention(Stream s, std::uint32_t layer, std::uint32_t t) const {
    check_cell(s, layer, t);
    const StreamModel& sm = stream_model(s);
    const std::size_t n = layout().n_img, n_txt = layout().n_txt;
    auto rng = Xoshiro256ss::derive(p_.seed, {kTagAttention, stream_tag(s), layer, t});
    const auto distractors = distractor_tokens(s, t);
    const double an = p_.attention_noise;
    auto jitter = [&](double v) { return v * std::max(0.0, 1.0 + an * rng.normal()); };

    AttentionBundle b;
    b.layer = layer;
    b.timestep = t;
    b.stream = s;
    b.ca = Matrix(n, n_txt);
    for (std::size_t i = 0; i < n; ++i) {
      double v = sm.profile[i] > 0.0 ? jitter(sm.profile[i]) : 0.0;
      if (distractors.value[i] > 0.0) v += jitter(distractors.value[i]);
      v += p_.text_floor * (1.0 + an * rng.uniform(-1.0, 1.0));
      v *= p_.attention_peak;
      double row_sum = 0.0;
      for (std::size_t j = 0; j < n_txt; ++j) {
        double x = selected_[j] ? v * column_weight_[j]
                                : p_.attention_peak * p_.text_floor *
                                      (1.0 + an * rng.uniform(-1.0, 1.0));
        b.ca(i, j) = static_cast<float>(x);
        row_sum += b.ca(i, j);
      }
      if (row_sum > kMaxCrossMass) {
        const double scale = kMaxCrossMass / row_sum;
        for (std::size_t j = 0; j < n_txt; ++j)
          b.ca(i, j) = static_cast<float>(b.ca(i, j) * scale);
      }
    }

    b.sa = Matrix(n, n);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        row[k] = sm.affinity(i, k) * (1.0 + an / 3.0 * rng.uniform());
        sum += row[k];
      }
      // mass slightly under the target so float rounding cannot exceed it
      const double scale = p_.self_attention_mass * (1.0 - 1e-6) / sum;
      for (std::size_t k = 0; k < n; ++k) b.sa(i, k) = static_cast<float>(row[k] * scale);
    }
    return b;
  }

  FeatureBundle features(Stream s, std::uint32_t layer, std::uint32_t t) const {
    check_cell(s, layer, t);
    const StreamModel& sm = stream_model(s);
    const std::size_t n = layout().n_img, d = layout().d;
    auto rng = Xoshiro256ss::derive(p_.seed, {kTagFeature, stream_tag(s), layer, t});
    const double sep =
        p_.separation * (0.25 + 0.75 * (layer + 1.0) / static_cast<double>(p_.n_layers));
    const double rho = p_.periphery_alignment;
    const double ortho = std::sqrt(std::max(0.0, 1.0 - rho * rho));

    FeatureBundle fb;
    fb.layer = layer;
    fb.timestep = t;
    fb.stream = s;
    fb.f = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double mean = mu0_[j];
        if (sm.in_object[i]) {
          const auto& u = sm.object_u;
          const auto& v = sm.object_v;
          mean += sm.radius[i] < p_.core_radius ? sep * u[j]
                                                : sep * (rho * u[j] + ortho * v[j]);
        } else {
          mean += p_.background_texture * background_dirs_[segment_[i]][j];
        }
        fb.f(i, j) = static_cast<float>(mean + p_.noise_level * rng.normal());
      }
    }
    return fb;
  }

  LatentRecord latent(LatentRole role, std::optional<std::uint32_t> t = {}) const {
    LatentRecord r;
    r.role = role;
    switch (role) {
      case LatentRole::initial_noise: r.z = z_init_; break;
      case LatentRole::source: r.z = z_src_; break;
      case LatentRole::current: {
        if (!t || *t >= p_.n_timesteps)
          throw missing_record("latent_cur: timestep out of range");
        r.timestep = t;
        const float sigma = schedule().sigma[*t];
        r.z = Matrix(z_init_.rows(), z_init_.cols());
        for (std::size_t i = 0; i < r.z.size(); ++i)
          r.z.values()[i] = sigma * z_init_.values()[i] +
                            (1.0f - sigma) * z_edit_.values()[i];
        break;
      }
      case LatentRole::blended:
        throw validation_error("synthetic scenes do not produce blended latents");
    }
    return r;
  }

  // Writes manifest, every record, ground-truth masks and a parameter
  // sidecar into `dir`.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_manifest(manifest_, dir);
    kv::write_text_file((dir / "scene.txt").string(),
                        p_.to_document().format("synthetic scene parameters"));
    const TokenLayout* lay = &layout();
    for (auto l : layers())
      for (auto t : timesteps())
        for (Stream s : {Stream::target, Stream::source}) {
          write_bundle(attention(s, l, t), dir / attention_filename(l, t, s), lay);
          write_bundle(features(s, l, t), dir / feature_filename(l, t, s), lay);
        }
    write_bundle(latent(LatentRole::initial_noise),
                 dir / latent_filename(LatentRole::initial_noise), lay);
    write_bundle(latent(LatentRole::source), dir / latent_filename(LatentRole::source),
                 lay);
    for (auto t : timesteps())
      write_bundle(latent(LatentRole::current, t),
                   dir / latent_filename(LatentRole::current, t), lay);
    for (Stream s : {Stream::target, Stream::source, Stream::combined}) {
      EditMask gt = ground_truth(s);
      write_bundle(gt, dir / mask_filename(gt), lay);
    }
  }

 private:
  static constexpr std::uint64_t kTagGeometry = 0x67656f6d;
  static constexpr std::uint64_t kTagAttention = 0x6174746e;
  static constexpr std::uint64_t kTagFeature = 0x66656174;
  static constexpr std::uint64_t kTagDistractor = 0x64697374;
  static constexpr std::uint64_t kTagLatent = 0x6c61746e;
  static constexpr double kMaxCrossMass = 0.95;

  struct Ellipse {
    double cy = 0, cx = 0, ry = 1, rx = 1;
    double radius(double y, double x) const {
      const double a = (y - cy) / ry, b = (x - cx) / rx;
      return std::sqrt(a * a + b * b);
    }
  };

  struct StreamModel {
    std::vector<std::uint8_t> in_object;
    std::vector<double> radius;   // normalized elliptic radius, 0 outside
    std::vector<double> profile;  // attention signal on object tokens
    std::vector<double> object_u, object_v;
    MatrixD affinity;             // unnormalized self-attention affinity
    double signal_mass = 0.0;
  };

  struct Distractors {
    std::vector<double> value;
  };

  static std::uint64_t stream_tag(Stream s) { return static_cast<std::uint64_t>(s) + 1; }

  void check_cell(Stream s, std::uint32_t layer, std::uint32_t t) const {
    if (s != Stream::target && s != Stream::source)
      throw validation_error("scene: stream must be target or source");
    if (layer >= p_.n_layers || t >= p_.n_timesteps)
      throw missing_record("scene: no record for layer " + std::to_string(layer) +
                           " timestep " + std::to_string(t));
  }

  const StreamModel& stream_model(Stream s) const {
    return s == Stream::target ? target_ : source_;
  }

  std::vector<std::uint8_t> rasterize(const Ellipse& e) const {
    std::vector<std::uint8_t> bits(layout().n_img, 0);
    for (std::uint32_t r = 0; r < p_.grid_h; ++r)
      for (std::uint32_t c = 0; c < p_.grid_w; ++c)
        bits[r * p_.grid_w + c] = e.radius(r, c) <= 1.0 ? 1 : 0;
    return bits;
  }

  Ellipse draw_ellipse(Xoshiro256ss& rng) const {
    Ellipse e;
    e.ry = rng.uniform(p_.object_scale_min, p_.object_scale_max) * p_.grid_h;
    e.rx = rng.uniform(p_.object_scale_min, p_.object_scale_max) * p_.grid_w;
    e.cy = rng.uniform(0.25, 0.75) * (p_.grid_h - 1);
    e.cx = rng.uniform(0.25, 0.75) * (p_.grid_w - 1);
    return e;
  }

  // Single hole-free 8-connected region, so the postprocessed GT is itself.
  bool well_formed(const std::vector<std::uint8_t>& bits) const {
    EditMask m = EditMask::from_bits(bits);
    if (m.none()) return false;
    MorphologyConfig cfg;
    cfg.dilation_radius = 0;
    return postprocess(m, layout().grid(), cfg).same_bits(m);
  }

  // Gram-Schmidt against `basis`; falls back to the raw draw when the
  // dimension is exhausted.
  std::vector<double> random_direction(Xoshiro256ss& rng,
                                       const std::vector<std::vector<double>>& basis) const {
    std::vector<double> v(p_.d);
    for (auto& x : v) x = rng.normal();
    std::vector<double> raw = v;
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * b[j];
      for (std::size_t j = 0; j < v.size(); ++j) v[j] -= dot * b[j];
    }
    double norm = 0.0;
    for (auto x : v) norm += x * x;
    if (norm < 1e-12) {
      v = raw;
      norm = 0.0;
      for (auto x : v) norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
  }

  void build_stream(StreamModel& sm, const std::optional<Ellipse>& object,
                    Xoshiro256ss& rng, std::vector<std::vector<double>>& basis) {
    const std::size_t n = layout().n_img;
    sm.in_object.assign(n, 0);
    sm.radius.assign(n, 0.0);
    sm.profile.assign(n, 0.0);
    if (object) {
      sm.in_object = rasterize(*object);
      for (std::uint32_t r = 0; r < p_.grid_h; ++r)
        for (std::uint32_t c = 0; c < p_.grid_w; ++c) {
          const std::size_t i = r * p_.grid_w + c;
          if (!sm.in_object[i]) continue;
          sm.radius[i] = std::min(1.0, object->radius(r, c));
          sm.profile[i] = std::exp(-p_.profile_decay * sm.radius[i] * sm.radius[i]);
          sm.signal_mass += sm.profile[i];
        }
    }
    sm.object_u = random_direction(rng, basis);
    basis.push_back(sm.object_u);
    sm.object_v = random_direction(rng, basis);
    basis.push_back(sm.object_v);

    sm.affinity = MatrixD(n, n);
    const double h2 = 2.0 * p_.affinity_bandwidth * p_.affinity_bandwidth;
    for (std::size_t i = 0; i < n; ++i) {
      const double ri = static_cast<double>(i / p_.grid_w);
      const double ci = static_cast<double>(i % p_.grid_w);
      const int li = sm.in_object[i] ? -1 : static_cast<int>(segment_[i]);
      for (std::size_t k = 0; k < n; ++k) {
        const double dr = ri - static_cast<double>(k / p_.grid_w);
        const double dc = ci - static_cast<double>(k % p_.grid_w);
        const int lk = sm.in_object[k] ? -1 : static_cast<int>(segment_[k]);
        sm.affinity(i, k) =
            std::exp(-(dr * dr + dc * dc) / h2) * (li == lk ? 1.0 : p_.boundary_leak);
      }
    }
  }

  Distractors distractor_tokens(Stream s, std::uint32_t t) const {
    const StreamModel& sm = stream_model(s);
    Distractors d;
    d.value.assign(layout().n_img, 0.0);
    if (p_.distractor_fraction <= 0.0) return d;
    // A stream without the object still receives the same nominal mass.
    const double mass = (sm.signal_mass > 0.0 ? sm.signal_mass : nominal_mass_) *
                        p_.distractor_fraction / (1.0 - p_.distractor_fraction);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < sm.in_object.size(); ++i)
      if (!sm.in_object[i]) candidates.push_back(i);
    if (candidates.empty()) return d;
    auto count = static_cast<std::size_t>(std::lround(mass / p_.spike_level));
    count = std::clamp<std::size_t>(count, 1, candidates.size());
    auto rng = Xoshiro256ss::derive(p_.seed, {kTagDistractor, stream_tag(s), t});
    // partial Fisher-Yates
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t j = k + rng.below(candidates.size() - k);
      std::swap(candidates[k], candidates[j]);
      d.value[candidates[k]] = mass / static_cast<double>(count);
    }
    return d;
  }

  void build() {
    TokenLayout& lay = manifest_.layout;
    lay.n_txt = p_.n_txt;
    lay.grid_h = p_.grid_h;
    lay.grid_w = p_.grid_w;
    lay.n_img = p_.grid_h * p_.grid_w;
    lay.d = p_.d;
    lay.n_layers = p_.n_layers;
    lay.n_timesteps = p_.n_timesteps;
    lay.n_heads = 1;
    manifest_.schedule = linear_schedule(p_.n_timesteps);

    auto rng = Xoshiro256ss::derive(p_.seed, {kTagGeometry});

    // instruction tokens: a contiguous run of 1-3 tokens after token 0
    const std::uint32_t run =
        1 + static_cast<std::uint32_t>(rng.below(std::min<std::uint32_t>(3, p_.n_txt - 1)));
    const std::uint32_t first =
        1 + static_cast<std::uint32_t>(rng.below(p_.n_txt - run));
    InstructionSpec& ins = manifest_.instruction;
    ins.task = p_.task;
    for (std::uint32_t k = 0; k < run; ++k) ins.selected_text_indices.push_back(first + k);
    ins.label = "synthetic " + std::string(to_string(p_.task)) + " scene " +
                std::to_string(p_.seed);
    selected_.assign(p_.n_txt, 0);
    column_weight_.assign(p_.n_txt, 0.0);
    double wsum = 0.0;
    for (auto j : ins.selected_text_indices) {
      selected_[j] = 1;
      column_weight_[j] = rng.uniform(0.5, 1.5);
      wsum += column_weight_[j];
    }
    for (auto& w : column_weight_) w /= wsum;

    // background segmentation: nearest of K random sites
    std::vector<std::pair<double, double>> sites(p_.background_segments);
    for (auto& [y, x] : sites) {
      y = rng.uniform(0.0, p_.grid_h);
      x = rng.uniform(0.0, p_.grid_w);
    }
    segment_.assign(lay.n_img, 0);
    for (std::uint32_t r = 0; r < p_.grid_h; ++r)
      for (std::uint32_t c = 0; c < p_.grid_w; ++c) {
        double best = 1e300;
        for (std::size_t k = 0; k < sites.size(); ++k) {
          const double dy = r - sites[k].first, dx = c - sites[k].second;
          const double dist = dy * dy + dx * dx;
          if (dist < best) {
            best = dist;
            segment_[r * p_.grid_w + c] = static_cast<std::uint32_t>(k);
          }
        }
      }

    // objects
    const StreamPolicy policy = policy_for(p_.task);
    std::optional<Ellipse> tgt_obj, src_obj;
    constexpr int kMaxAttempts = 1000;
    int attempt = 0;
    for (; attempt < kMaxAttempts; ++attempt) {
      Ellipse e = draw_ellipse(rng);
      tgt_obj.reset();
      src_obj.reset();
      if (policy == StreamPolicy::target_only) {
        tgt_obj = e;
      } else if (policy == StreamPolicy::source_only) {
        src_obj = e;
      } else {
        src_obj = e;
        Ellipse f = e;
        const double shift = std::max(1.0, std::floor(std::min(p_.grid_h, p_.grid_w) / 8.0));
        f.cy += std::round(rng.uniform(-shift, shift));
        f.cx += std::round(rng.uniform(-shift, shift));
        f.ry *= rng.uniform(0.8, 1.2);
        f.rx *= rng.uniform(0.8, 1.2);
        tgt_obj = f;
      }
      gt_tgt_ = tgt_obj ? rasterize(*tgt_obj) : std::vector<std::uint8_t>(lay.n_img, 0);
      gt_src_ = src_obj ? rasterize(*src_obj) : std::vector<std::uint8_t>(lay.n_img, 0);
      gt_task_ = combine(p_.task, EditMask::from_bits(gt_tgt_),
                         EditMask::from_bits(gt_src_))
                     .bits;
      bool ok = well_formed(gt_task_);
      if (tgt_obj) ok = ok && well_formed(gt_tgt_);
      if (src_obj) ok = ok && well_formed(gt_src_);
      if (ok) break;
    }
    if (attempt == kMaxAttempts)
      throw validation_error("scene: infeasible geometry, no well-formed object");

    // feature directions: mu0, background textures, then object directions
    std::vector<std::vector<double>> basis;
    mu0_ = random_direction(rng, basis);
    basis.push_back(mu0_);
    for (std::uint32_t k = 0; k < p_.background_segments; ++k) {
      background_dirs_.push_back(random_direction(rng, basis));
      basis.push_back(background_dirs_.back());
    }
    build_stream(source_, src_obj, rng, basis);
    build_stream(target_, tgt_obj, rng, basis);
    nominal_mass_ = std::max({target_.signal_mass, source_.signal_mass, 1.0});

    // latents: initial noise, source latent, and the edited endpoint that
    // the synthetic trajectory moves toward
    auto lrng = Xoshiro256ss::derive(p_.seed, {kTagLatent});
    z_init_ = Matrix(lay.n_img, lay.d);
    z_src_ = Matrix(lay.n_img, lay.d);
    z_edit_ = Matrix(lay.n_img, lay.d);
    for (auto& x : z_init_.values()) x = static_cast<float>(lrng.normal());
    for (auto& x : z_src_.values()) x = static_cast<float>(lrng.normal());
    for (std::size_t i = 0; i < lay.n_img; ++i)
      for (std::size_t j = 0; j < lay.d; ++j) {
        const double drift = p_.latent_drift * lrng.normal();
        const double fresh = lrng.normal();
        z_edit_(i, j) = static_cast<float>(gt_task_[i] ? fresh : z_src_(i, j) + drift);
      }
  }

  SceneParams p_;
  Manifest manifest_;
  std::vector<std::uint8_t> selected_;
  std::vector<double> column_weight_;
  std::vector<std::uint32_t> segment_;
  std::vector<std::uint8_t> gt_tgt_, gt_src_, gt_task_;
  std::vector<double> mu0_;
  std::vector<std::vector<double>> background_dirs_;
  StreamModel target_, source_;
  double nominal_mass_ = 1.0;
  Matrix z_init_, z_src_, z_edit_;
};

inline SyntheticScene generate_scene(const SceneParams& params) {
  return SyntheticScene(params);
}

}  // namespace edloc
