#pragma once

// Binary PGM (P5) images of attention maps and masks, one pixel per image token.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "edloc/error.hpp"
#include "edloc/types.hpp"

namespace edloc {

inline std::vector<std::uint8_t> encode_pgm(std::span<const std::uint8_t> pixels,
                                            const Grid& g) {
  if (pixels.size() != g.size())
    throw validation_error("pgm: pixel count does not match grid");
  const std::string header =
      "P5\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

// values clamped to [0, 1], rounded to nearest gray level
inline std::vector<std::uint8_t> gray_levels(std::span<const double> values) {
  std::vector<std::uint8_t> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    px[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
  return px;
}

inline std::vector<std::uint8_t> gray_levels(const EditMask& m) {
  std::vector<std::uint8_t> px(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) px[i] = m[i] ? 255 : 0;
  return px;
}

inline void write_pgm(const std::filesystem::path& path,
                      std::span<const std::uint8_t> pixels, const Grid& g) {
  auto bytes = encode_pgm(pixels, g);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("write failed for '" + path.string() + "'");
}

}  // namespace edloc
