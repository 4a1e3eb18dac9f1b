#pragma once

// On-disk record format for model internals.
//
// Each record file is a fixed 30-byte header followed by row-major
// little-endian IEEE-754 binary32 values:
//
//   offset  size  field
//   0       8     magic "EDLOC1\0\0"
//   8       1     format version (1)
//   9       1     record kind (see RecordKind)
//   10      4     layer     (u32 LE, 0xFFFFFFFF when absent)
//   14      4     timestep  (u32 LE, 0xFFFFFFFF when absent)
//   18      4     stream    (u32 LE: 0 target, 1 source, 2 combined)
//   22      4     rows      (u32 LE)
//   26      4     cols      (u32 LE)
//   30      ...   payload
//
// Attention records carry two matrices: the cross-attention slice
// (rows x cols = n_img x n_txt) followed by the self-attention slice
// (rows x rows). Every other kind carries one rows x cols matrix; masks
// are n_img x 1 with values 0.0 or 1.0.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/matrix.hpp"
#include "edloc/types.hpp"

namespace edloc {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

inline constexpr std::array<char, 8> kRecordMagic = {'E', 'D', 'L', 'O',
                                                     'C', '1', '\0', '\0'};
inline constexpr std::uint8_t kRecordVersion = 1;
inline constexpr std::size_t kRecordHeaderSize = 30;
inline constexpr std::uint32_t kAbsent = 0xFFFFFFFFu;
inline constexpr double kRowSumTolerance = 1e-4;

enum class RecordKind : std::uint8_t {
  attention = 1,
  feature = 2,
  latent_initial = 3,
  latent_source = 4,
  latent_current = 5,
  latent_blended = 6,
  // mask kinds are mask_base + MaskStage
  mask_base = 16,
};

enum class LatentRole : std::uint8_t {
  initial_noise,
  source,
  current,
  blended,
};

inline std::string_view to_string(LatentRole r) {
  switch (r) {
    case LatentRole::initial_noise: return "initial_noise";
    case LatentRole::source: return "source";
    case LatentRole::current: return "current";
    case LatentRole::blended: return "blended";
  }
  return "?";
}

// Cross- and self-attention slices of one image stream's rows of the joint
// attention matrix, for one (layer, timestep).
struct AttentionBundle {
  std::uint32_t layer = 0;
  std::uint32_t timestep = 0;
  Stream stream = Stream::target;
  Matrix ca;  // n_img x n_txt
  Matrix sa;  // n_img x n_img

  friend bool operator==(const AttentionBundle&, const AttentionBundle&) = default;
};

struct FeatureBundle {
  std::uint32_t layer = 0;
  std::uint32_t timestep = 0;
  Stream stream = Stream::target;
  Matrix f;  // n_img x d

  friend bool operator==(const FeatureBundle&, const FeatureBundle&) = default;
};

struct LatentRecord {
  LatentRole role = LatentRole::current;
  std::optional<std::uint32_t> timestep;  // current and blended only
  Matrix z;                               // n_img x d

  friend bool operator==(const LatentRecord&, const LatentRecord&) = default;
};

using Record = std::variant<AttentionBundle, FeatureBundle, LatentRecord, EditMask>;

// ---------------------------------------------------------------------------
// validation

namespace detail {

inline void check_finite(const Matrix& m, std::string_view what) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      if (!std::isfinite(m(r, c)))
        throw validation_error(std::string(what) + ": non-finite value at (" +
                               std::to_string(r) + ", " + std::to_string(c) +
                               ")");
}

inline void check_probability_rows(const Matrix& m, std::string_view what) {
  check_finite(m, what);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      float v = m(r, c);
      if (v < 0.0f || v > 1.0f)
        throw validation_error(std::string(what) + ": value outside [0, 1] at (" +
                               std::to_string(r) + ", " + std::to_string(c) +
                               ")");
      sum += v;
    }
    if (sum > 1.0 + kRowSumTolerance)
      throw validation_error(std::string(what) + ": row-sum violation at row " +
                             std::to_string(r) + " (sum " +
                             kv::format_double(sum) + " > 1)");
  }
}

inline void check_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                        std::string_view what) {
  if (m.rows() != rows || m.cols() != cols)
    throw validation_error(std::string(what) + ": shape mismatch, got " +
                           std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " +
                           std::to_string(rows) + "x" + std::to_string(cols));
}

inline void check_image_stream(Stream s, std::string_view what) {
  if (s != Stream::target && s != Stream::source)
    throw validation_error(std::string(what) +
                           ": stream must be target or source");
}

}  // namespace detail

inline void validate(const AttentionBundle& b,
                     const TokenLayout* layout = nullptr) {
  detail::check_image_stream(b.stream, "attention");
  if (b.ca.rows() == 0 || b.ca.cols() == 0)
    throw validation_error("attention ca: empty matrix");
  detail::check_shape(b.sa, b.ca.rows(), b.ca.rows(), "attention sa");
  if (layout) {
    detail::check_shape(b.ca, layout->n_img, layout->n_txt, "attention ca");
  }
  detail::check_probability_rows(b.ca, "attention ca");
  detail::check_probability_rows(b.sa, "attention sa");
}

inline void validate(const FeatureBundle& b, const TokenLayout* layout = nullptr) {
  detail::check_image_stream(b.stream, "feature");
  if (b.f.rows() == 0 || b.f.cols() == 0)
    throw validation_error("feature f: empty matrix");
  if (layout) detail::check_shape(b.f, layout->n_img, layout->d, "feature f");
  detail::check_finite(b.f, "feature f");
}

inline void validate(const LatentRecord& r, const TokenLayout* layout = nullptr) {
  bool timed = r.role == LatentRole::current || r.role == LatentRole::blended;
  if (timed != r.timestep.has_value())
    throw validation_error(std::string("latent ") +
                           std::string(to_string(r.role)) +
                           (timed ? ": timestep required" : ": timestep must be absent"));
  if (r.z.rows() == 0 || r.z.cols() == 0)
    throw validation_error("latent z: empty matrix");
  if (layout) detail::check_shape(r.z, layout->n_img, layout->d, "latent z");
  detail::check_finite(r.z, "latent z");
}

inline void validate(const EditMask& m, const TokenLayout* layout = nullptr) {
  if (m.bits.empty()) throw validation_error("mask: empty");
  if (layout && m.bits.size() != layout->n_img)
    throw validation_error("mask: length " + std::to_string(m.bits.size()) +
                           " != n_img " + std::to_string(layout->n_img));
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i] > 1)
      throw validation_error("mask: non-binary value at index " +
                             std::to_string(i));
  if (static_cast<std::uint8_t>(m.stage) >= kMaskStageCount)
    throw validation_error("mask: unknown stage");
}

inline void validate(const Record& r, const TokenLayout* layout = nullptr) {
  std::visit([&](const auto& rec) { validate(rec, layout); }, r);
}

// ---------------------------------------------------------------------------
// file naming

inline std::string attention_filename(std::uint32_t layer, std::uint32_t t,
                                      Stream s) {
  return "attn_L" + std::to_string(layer) + "_T" + std::to_string(t) + "_" +
         std::string(to_string(s)) + ".edloc";
}

inline std::string feature_filename(std::uint32_t layer, std::uint32_t t,
                                    Stream s) {
  return "feat_L" + std::to_string(layer) + "_T" + std::to_string(t) + "_" +
         std::string(to_string(s)) + ".edloc";
}

inline std::string latent_filename(LatentRole role,
                                   std::optional<std::uint32_t> t = {}) {
  switch (role) {
    case LatentRole::initial_noise: return "latent_init.edloc";
    case LatentRole::source: return "latent_src.edloc";
    case LatentRole::current:
      return "latent_cur_T" + std::to_string(t.value_or(0)) + ".edloc";
    case LatentRole::blended:
      return "latent_blend_T" + std::to_string(t.value_or(0)) + ".edloc";
  }
  return {};
}

inline std::string mask_filename(const EditMask& m) {
  std::string name = "mask_" + std::string(file_tag(m.stage)) + "_" +
                     std::string(to_string(m.stream));
  if (m.layer) name += "_L" + std::to_string(*m.layer);
  if (m.timestep) name += "_T" + std::to_string(*m.timestep);
  return name + ".edloc";
}

inline std::string record_filename(const Record& r) {
  struct Visitor {
    std::string operator()(const AttentionBundle& b) const {
      return attention_filename(b.layer, b.timestep, b.stream);
    }
    std::string operator()(const FeatureBundle& b) const {
      return feature_filename(b.layer, b.timestep, b.stream);
    }
    std::string operator()(const LatentRecord& l) const {
      return latent_filename(l.role, l.timestep);
    }
    std::string operator()(const EditMask& m) const { return mask_filename(m); }
  };
  return std::visit(Visitor{}, r);
}

// Header identity fields, as encoded in a record header.
struct RecordIdentity {
  std::uint8_t kind = 0;
  std::uint32_t layer = kAbsent;
  std::uint32_t timestep = kAbsent;
  std::uint32_t stream = 0;

  friend bool operator==(const RecordIdentity&, const RecordIdentity&) = default;
};

namespace detail {

inline bool consume(std::string_view& s, std::string_view prefix) {
  if (s.substr(0, prefix.size()) != prefix) return false;
  s.remove_prefix(prefix.size());
  return true;
}

inline std::optional<std::uint32_t> consume_index(std::string_view& s,
                                                  std::string_view prefix) {
  std::string_view probe = s;
  if (!consume(probe, prefix)) return std::nullopt;
  std::size_t n = 0;
  while (n < probe.size() && probe[n] >= '0' && probe[n] <= '9') ++n;
  if (n == 0 || n > 10) return std::nullopt;
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v = v * 10 + (probe[i] - '0');
  if (v >= kAbsent) return std::nullopt;
  probe.remove_prefix(n);
  s = probe;
  return static_cast<std::uint32_t>(v);
}

inline std::optional<Stream> consume_stream(std::string_view& s) {
  for (Stream st : {Stream::target, Stream::source, Stream::combined}) {
    std::string_view probe = s;
    if (consume(probe, to_string(st))) {
      s = probe;
      return st;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Identity implied by a canonical record file name, if the name is canonical.
inline std::optional<RecordIdentity> identity_from_filename(std::string_view name) {
  using namespace detail;
  if (!name.ends_with(".edloc")) return std::nullopt;
  name.remove_suffix(6);
  RecordIdentity id;
  std::string_view s = name;
  for (auto [prefix, kind] :
       {std::pair{std::string_view("attn_"), RecordKind::attention},
        std::pair{std::string_view("feat_"), RecordKind::feature}}) {
    std::string_view p = s;
    if (!consume(p, prefix)) continue;
    auto l = consume_index(p, "L");
    auto t = consume_index(p, "_T");
    if (!l || !t || !consume(p, "_")) return std::nullopt;
    auto st = consume_stream(p);
    if (!st || *st == Stream::combined || !p.empty()) return std::nullopt;
    id.kind = static_cast<std::uint8_t>(kind);
    id.layer = *l;
    id.timestep = *t;
    id.stream = static_cast<std::uint32_t>(*st);
    return id;
  }
  if (s == "latent_init") {
    id.kind = static_cast<std::uint8_t>(RecordKind::latent_initial);
    return id;
  }
  if (s == "latent_src") {
    id.kind = static_cast<std::uint8_t>(RecordKind::latent_source);
    return id;
  }
  for (auto [prefix, kind] :
       {std::pair{std::string_view("latent_cur_T"), RecordKind::latent_current},
        std::pair{std::string_view("latent_blend_T"), RecordKind::latent_blended}}) {
    std::string_view p = s;
    if (!consume(p, prefix.substr(0, prefix.size() - 1))) continue;
    auto t = consume_index(p, "T");
    if (!t || !p.empty()) return std::nullopt;
    id.kind = static_cast<std::uint8_t>(kind);
    id.timestep = *t;
    return id;
  }
  if (consume(s, "mask_")) {
    for (std::uint8_t i = 0; i < kMaskStageCount; ++i) {
      auto stage = static_cast<MaskStage>(i);
      std::string_view p = s;
      if (!consume(p, file_tag(stage)) || !consume(p, "_")) continue;
      auto st = consume_stream(p);
      if (!st) return std::nullopt;
      id.kind = static_cast<std::uint8_t>(RecordKind::mask_base) + i;
      id.stream = static_cast<std::uint32_t>(*st);
      if (auto l = consume_index(p, "_L")) id.layer = *l;
      if (auto t = consume_index(p, "_T")) id.timestep = *t;
      if (!p.empty()) return std::nullopt;
      return id;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// binary encoding

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline void put_floats(std::vector<std::uint8_t>& out, std::span<const float> xs) {
  for (float x : xs) put_u32(out, std::bit_cast<std::uint32_t>(x));
}

inline void get_floats(const std::uint8_t* p, std::span<float> xs) {
  for (auto& x : xs) {
    x = std::bit_cast<float>(get_u32(p));
    p += 4;
  }
}

inline RecordIdentity identity_of(const Record& r) {
  struct Visitor {
    RecordIdentity operator()(const AttentionBundle& b) const {
      return {static_cast<std::uint8_t>(RecordKind::attention), b.layer,
              b.timestep, static_cast<std::uint32_t>(b.stream)};
    }
    RecordIdentity operator()(const FeatureBundle& b) const {
      return {static_cast<std::uint8_t>(RecordKind::feature), b.layer,
              b.timestep, static_cast<std::uint32_t>(b.stream)};
    }
    RecordIdentity operator()(const LatentRecord& l) const {
      RecordKind k = RecordKind::latent_current;
      switch (l.role) {
        case LatentRole::initial_noise: k = RecordKind::latent_initial; break;
        case LatentRole::source: k = RecordKind::latent_source; break;
        case LatentRole::current: k = RecordKind::latent_current; break;
        case LatentRole::blended: k = RecordKind::latent_blended; break;
      }
      return {static_cast<std::uint8_t>(k), kAbsent,
              l.timestep.value_or(kAbsent), 0};
    }
    RecordIdentity operator()(const EditMask& m) const {
      return {static_cast<std::uint8_t>(
                  static_cast<std::uint8_t>(RecordKind::mask_base) +
                  static_cast<std::uint8_t>(m.stage)),
              m.layer.value_or(kAbsent), m.timestep.value_or(kAbsent),
              static_cast<std::uint32_t>(m.stream)};
    }
  };
  return std::visit(Visitor{}, r);
}

}  // namespace detail

// Serializes a record after validating it. `layout`, when given, pins shapes.
inline std::vector<std::uint8_t> encode_record(const Record& r,
                                               const TokenLayout* layout = nullptr) {
  validate(r, layout);
  RecordIdentity id = detail::identity_of(r);
  std::vector<std::uint8_t> out(kRecordMagic.begin(), kRecordMagic.end());
  out.push_back(kRecordVersion);
  out.push_back(id.kind);
  detail::put_u32(out, id.layer);
  detail::put_u32(out, id.timestep);
  detail::put_u32(out, id.stream);

  struct Payload {
    std::vector<std::uint8_t>& out;
    void operator()(const AttentionBundle& b) const {
      put_u32(b.ca.rows(), b.ca.cols());
      detail::put_floats(out, b.ca.values());
      detail::put_floats(out, b.sa.values());
    }
    void operator()(const FeatureBundle& b) const {
      put_u32(b.f.rows(), b.f.cols());
      detail::put_floats(out, b.f.values());
    }
    void operator()(const LatentRecord& l) const {
      put_u32(l.z.rows(), l.z.cols());
      detail::put_floats(out, l.z.values());
    }
    void operator()(const EditMask& m) const {
      put_u32(m.bits.size(), 1);
      for (auto b : m.bits)
        detail::put_u32(out, std::bit_cast<std::uint32_t>(b ? 1.0f : 0.0f));
    }
    void put_u32(std::size_t rows, std::size_t cols) const {
      detail::put_u32(out, static_cast<std::uint32_t>(rows));
      detail::put_u32(out, static_cast<std::uint32_t>(cols));
    }
  };
  std::visit(Payload{out}, r);
  return out;
}

// Parses and re-validates a record. When `expected` is given (from a
// canonical file name), every header identity field must match it.
inline Record decode_record(std::span<const std::uint8_t> bytes,
                            const std::optional<RecordIdentity>& expected = {},
                            const TokenLayout* layout = nullptr) {
  if (bytes.size() < kRecordMagic.size() ||
      !std::equal(kRecordMagic.begin(), kRecordMagic.end(), bytes.begin()))
    throw validation_error("unrecognized format (bad magic)");
  if (bytes.size() < kRecordHeaderSize)
    throw validation_error("truncated header, expected " +
                           std::to_string(kRecordHeaderSize) + " bytes");
  const std::uint8_t* h = bytes.data();
  if (h[8] != kRecordVersion)
    throw validation_error("version mismatch: file has " + std::to_string(h[8]) +
                           ", reader supports " + std::to_string(kRecordVersion));
  RecordIdentity id{h[9], detail::get_u32(h + 10), detail::get_u32(h + 14),
                    detail::get_u32(h + 18)};
  std::uint32_t rows = detail::get_u32(h + 22);
  std::uint32_t cols = detail::get_u32(h + 26);

  if (expected && id != *expected) {
    auto field = [](std::string_view name, std::uint32_t got, std::uint32_t want) {
      return validation_error("header field " + std::string(name) + ": " +
                              std::to_string(got) + " does not match file name (" +
                              std::to_string(want) + ")");
    };
    if (id.kind != expected->kind) throw field("kind", id.kind, expected->kind);
    if (id.layer != expected->layer) throw field("layer", id.layer, expected->layer);
    if (id.timestep != expected->timestep)
      throw field("timestep", id.timestep, expected->timestep);
    throw field("stream", id.stream, expected->stream);
  }

  bool is_mask = id.kind >= static_cast<std::uint8_t>(RecordKind::mask_base) &&
                 id.kind < static_cast<std::uint8_t>(RecordKind::mask_base) +
                               kMaskStageCount;
  if (!is_mask && (id.kind < static_cast<std::uint8_t>(RecordKind::attention) ||
                   id.kind > static_cast<std::uint8_t>(RecordKind::latent_blended)))
    throw validation_error("unknown record kind " + std::to_string(id.kind));
  if (rows == 0 || cols == 0) throw validation_error("header: zero dimension");
  if (layout && rows != layout->n_img)
    throw validation_error("header rows " + std::to_string(rows) +
                           " != n_img " + std::to_string(layout->n_img));

  auto kind = static_cast<RecordKind>(id.kind);
  std::uint64_t count = std::uint64_t{rows} * cols;
  if (kind == RecordKind::attention) count += std::uint64_t{rows} * rows;
  std::uint64_t expected_size = kRecordHeaderSize + 4 * count;
  if (bytes.size() < expected_size)
    throw validation_error("truncated payload, expected " +
                           std::to_string(expected_size) + " bytes, got " +
                           std::to_string(bytes.size()));
  if (bytes.size() > expected_size)
    throw validation_error("trailing bytes, expected " +
                           std::to_string(expected_size) + " bytes, got " +
                           std::to_string(bytes.size()));
  const std::uint8_t* payload = h + kRecordHeaderSize;

  auto require = [](bool ok, const char* what) {
    if (!ok) throw validation_error(std::string("header: ") + what);
  };

  Record record;
  switch (kind) {
    case RecordKind::attention:
    case RecordKind::feature: {
      require(id.layer != kAbsent && id.timestep != kAbsent,
              "layer and timestep required");
      require(id.stream <= 1, "stream must be target or source");
      Matrix m(rows, cols);
      detail::get_floats(payload, m.values());
      if (kind == RecordKind::attention) {
        Matrix sa(rows, rows);
        detail::get_floats(payload + 4 * m.size(), sa.values());
        record = AttentionBundle{id.layer, id.timestep,
                                 static_cast<Stream>(id.stream), std::move(m),
                                 std::move(sa)};
      } else {
        record = FeatureBundle{id.layer, id.timestep,
                               static_cast<Stream>(id.stream), std::move(m)};
      }
      break;
    }
    case RecordKind::latent_initial:
    case RecordKind::latent_source:
    case RecordKind::latent_current:
    case RecordKind::latent_blended: {
      require(id.layer == kAbsent, "latent records carry no layer");
      require(id.stream == 0, "latent records carry stream 0");
      LatentRecord l;
      l.role = kind == RecordKind::latent_initial ? LatentRole::initial_noise
               : kind == RecordKind::latent_source ? LatentRole::source
               : kind == RecordKind::latent_current ? LatentRole::current
                                                    : LatentRole::blended;
      if (id.timestep != kAbsent) l.timestep = id.timestep;
      l.z = Matrix(rows, cols);
      detail::get_floats(payload, l.z.values());
      record = std::move(l);
      break;
    }
    default: {
      require(cols == 1, "mask records have one column");
      require(id.stream <= 2, "unknown stream");
      EditMask m;
      m.stage = static_cast<MaskStage>(
          id.kind - static_cast<std::uint8_t>(RecordKind::mask_base));
      m.stream = static_cast<Stream>(id.stream);
      if (id.layer != kAbsent) m.layer = id.layer;
      if (id.timestep != kAbsent) m.timestep = id.timestep;
      m.bits.resize(rows);
      for (std::uint32_t i = 0; i < rows; ++i) {
        float v = std::bit_cast<float>(detail::get_u32(payload + 4 * i));
        if (v != 0.0f && v != 1.0f)
          throw validation_error("mask: non-binary value at index " +
                                 std::to_string(i));
        m.bits[i] = v == 1.0f ? 1 : 0;
      }
      record = std::move(m);
      break;
    }
  }
  validate(record, layout);
  return record;
}

inline void write_bundle(const Record& r, const std::filesystem::path& path,
                         const TokenLayout* layout = nullptr) {
  auto bytes = encode_record(r, layout);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw missing_record("cannot open record '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline Record read_bundle(const std::filesystem::path& path,
                          const TokenLayout* layout = nullptr) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_record(bytes, identity_from_filename(path.filename().string()),
                         layout);
  } catch (const Error& e) {
    throw Error(e.kind(), path.filename().string() + ": " + e.what());
  }
}

template <typename T>
T read_bundle_as(const std::filesystem::path& path,
                 const TokenLayout* layout = nullptr) {
  Record r = read_bundle(path, layout);
  if (auto* p = std::get_if<T>(&r)) return std::move(*p);
  throw validation_error(path.filename().string() + ": unexpected record kind");
}

// ---------------------------------------------------------------------------
// manifest

struct Manifest {
  TokenLayout layout;
  NoiseSchedule schedule;
  InstructionSpec instruction;
  // Layer and timestep indices present in the record directory. Empty means
  // all of [0, n_layers) / [0, n_timesteps).
  std::vector<std::uint32_t> captured_layers;
  std::vector<std::uint32_t> captured_timesteps;
  bool head_averaged = true;

  std::vector<std::uint32_t> layers() const {
    if (!captured_layers.empty()) return captured_layers;
    std::vector<std::uint32_t> out(layout.n_layers);
    for (std::uint32_t i = 0; i < layout.n_layers; ++i) out[i] = i;
    return out;
  }

  std::vector<std::uint32_t> timesteps() const {
    if (!captured_timesteps.empty()) return captured_timesteps;
    std::vector<std::uint32_t> out(layout.n_timesteps);
    for (std::uint32_t i = 0; i < layout.n_timesteps; ++i) out[i] = i;
    return out;
  }

  void validate() const {
    layout.validate();
    schedule.validate(layout.n_timesteps);
    instruction.validate(layout.n_txt);
    auto check_indices = [](const std::vector<std::uint32_t>& xs,
                            std::uint32_t bound, const char* field) {
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] >= bound)
          throw validation_error(std::string("manifest field ") + field +
                                 ": index out of range");
        if (i > 0 && xs[i] <= xs[i - 1])
          throw validation_error(std::string("manifest field ") + field +
                                 ": not strictly increasing");
      }
    };
    check_indices(captured_layers, layout.n_layers, "captured_layers");
    check_indices(captured_timesteps, layout.n_timesteps, "captured_timesteps");
  }

  // An empty capture list equals the explicit full range.
  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.layout == b.layout && a.schedule == b.schedule &&
           a.instruction == b.instruction && a.layers() == b.layers() &&
           a.timesteps() == b.timesteps() && a.head_averaged == b.head_averaged;
  }
};

inline constexpr std::string_view kManifestName = "manifest.txt";

inline std::string format_manifest(const Manifest& m) {
  m.validate();
  kv::Document doc;
  doc.set("format_version", std::to_string(kRecordVersion));
  doc.set("n_txt", std::to_string(m.layout.n_txt));
  doc.set("n_img", std::to_string(m.layout.n_img));
  doc.set("grid_h", std::to_string(m.layout.grid_h));
  doc.set("grid_w", std::to_string(m.layout.grid_w));
  doc.set("d", std::to_string(m.layout.d));
  doc.set("n_layers", std::to_string(m.layout.n_layers));
  doc.set("n_timesteps", std::to_string(m.layout.n_timesteps));
  doc.set("n_heads", std::to_string(m.layout.n_heads));
  doc.set("head_averaged", m.head_averaged ? "true" : "false");
  doc.set("captured_layers", kv::join(m.layers()));
  doc.set("captured_timesteps", kv::join(m.timesteps()));
  doc.set("sigma", kv::join(m.schedule.sigma));
  doc.set("task", std::string(to_string(m.instruction.task)));
  doc.set("selected_text_indices", kv::join(m.instruction.selected_text_indices));
  doc.set("label", m.instruction.label);
  doc.set("attention_records", "attn_L{layer}_T{timestep}_{tgt|src}.edloc");
  doc.set("feature_records", "feat_L{layer}_T{timestep}_{tgt|src}.edloc");
  doc.set("latent_records",
          "latent_init.edloc latent_src.edloc latent_cur_T{timestep}.edloc");
  return doc.format("edloc record store manifest");
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& dir) {
  kv::write_text_file((dir / kManifestName).string(), format_manifest(m));
}

inline Manifest parse_manifest(std::string_view text) {
  constexpr auto kind = ErrorKind::validation;
  kv::Document doc = kv::parse(text, kManifestName, kind);
  auto need = [&](std::string_view key) {
    auto v = doc.get(key);
    if (!v)
      throw validation_error("manifest field " + std::string(key) + ": missing");
    return *v;
  };
  auto u32 = [&](std::string_view key) {
    return kv::parse_number<std::uint32_t>(need(key), key, kind);
  };
  if (u32("format_version") != kRecordVersion)
    throw validation_error("manifest field format_version: version mismatch");
  Manifest m;
  m.layout.n_txt = u32("n_txt");
  m.layout.n_img = u32("n_img");
  m.layout.grid_h = u32("grid_h");
  m.layout.grid_w = u32("grid_w");
  m.layout.d = u32("d");
  m.layout.n_layers = u32("n_layers");
  m.layout.n_timesteps = u32("n_timesteps");
  m.layout.n_heads = u32("n_heads");
  m.head_averaged = kv::parse_bool(need("head_averaged"), "head_averaged", kind);
  m.captured_layers =
      kv::parse_list<std::uint32_t>(need("captured_layers"), "captured_layers", kind);
  m.captured_timesteps = kv::parse_list<std::uint32_t>(
      need("captured_timesteps"), "captured_timesteps", kind);
  m.schedule.sigma = kv::parse_list<float>(need("sigma"), "sigma", kind);
  try {
    m.instruction.task = parse_task(need("task"));
  } catch (const Error& e) {
    throw validation_error(std::string("manifest field task: ") + e.what());
  }
  m.instruction.selected_text_indices = kv::parse_list<std::uint32_t>(
      need("selected_text_indices"), "selected_text_indices", kind);
  m.instruction.label = doc.get("label").value_or("");
  m.validate();
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  auto path = dir / kManifestName;
  if (!std::filesystem::exists(path))
    throw missing_record("missing manifest '" + path.string() + "'");
  return parse_manifest(kv::read_text_file(path.string()));
}

// ---------------------------------------------------------------------------
// record directory

// Read access to a record directory, checking every record against the
// manifest layout.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path dir)
      : dir_(std::move(dir)), manifest_(read_manifest(dir_)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  const TokenLayout& layout() const noexcept { return manifest_.layout; }
  const InstructionSpec& instruction() const noexcept {
    return manifest_.instruction;
  }
  const NoiseSchedule& schedule() const noexcept { return manifest_.schedule; }
  std::vector<std::uint32_t> layers() const { return manifest_.layers(); }
  std::vector<std::uint32_t> timesteps() const { return manifest_.timesteps(); }

  AttentionBundle attention(Stream s, std::uint32_t layer, std::uint32_t t) const {
    return read_as<AttentionBundle>(attention_filename(layer, t, s));
  }

  FeatureBundle features(Stream s, std::uint32_t layer, std::uint32_t t) const {
    return read_as<FeatureBundle>(feature_filename(layer, t, s));
  }

  LatentRecord latent(LatentRole role, std::optional<std::uint32_t> t = {}) const {
    return read_as<LatentRecord>(latent_filename(role, t));
  }

  bool has_ground_truth() const {
    return std::filesystem::exists(dir_ / ground_truth_filename());
  }

  // Task-level ground truth mask (stage ground_truth, combined stream).
  EditMask ground_truth(Stream s = Stream::combined) const {
    return read_as<EditMask>(ground_truth_filename(s));
  }

  static std::string ground_truth_filename(Stream s = Stream::combined) {
    EditMask m;
    m.stage = MaskStage::ground_truth;
    m.stream = s;
    return mask_filename(m);
  }

 private:
  template <typename T>
  T read_as(const std::string& name) const {
    auto path = dir_ / name;
    if (!std::filesystem::exists(path))
      throw missing_record("missing record '" + path.string() + "'");
    return read_bundle_as<T>(path, &manifest_.layout);
  }

  std::filesystem::path dir_;
  Manifest manifest_;
};

struct ValidationEntry {
  std::string file;
  bool ok = true;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  bool missing = false;

  bool ok() const {
    if (missing) return false;
    for (const auto& e : entries)
      if (!e.ok) return false;
    return true;
  }
};

// Checks the manifest, every expected attention/feature record, and every
// other .edloc file present in the directory.
inline ValidationReport validate_store(const std::filesystem::path& dir) {
  ValidationReport report;
  Manifest manifest;
  try {
    manifest = read_manifest(dir);
    report.entries.push_back({std::string(kManifestName), true, "ok"});
  } catch (const Error& e) {
    report.entries.push_back({std::string(kManifestName), false, e.what()});
    report.missing = e.kind() == ErrorKind::missing_record;
    return report;
  }
  std::vector<std::string> expected;
  for (auto l : manifest.layers())
    for (auto t : manifest.timesteps())
      for (Stream s : {Stream::target, Stream::source}) {
        expected.push_back(attention_filename(l, t, s));
        expected.push_back(feature_filename(l, t, s));
      }
  std::vector<std::string> present;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".edloc")
      present.push_back(entry.path().filename().string());
  std::sort(present.begin(), present.end());

  for (const auto& name : expected)
    if (!std::binary_search(present.begin(), present.end(), name)) {
      report.entries.push_back({name, false, "missing record"});
      report.missing = true;
    }
  for (const auto& name : present) {
    try {
      read_bundle(dir / name, &manifest.layout);
      report.entries.push_back({name, true, "ok"});
    } catch (const Error& e) {
      std::string msg = e.what();
      if (msg.starts_with(name + ": ")) msg.erase(0, name.size() + 2);
      report.entries.push_back({name, false, msg});
    }
  }
  return report;
}

}  // namespace edloc
