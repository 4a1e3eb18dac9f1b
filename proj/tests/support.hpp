#pragma once

// Test helpers: random generators over the project RNG, scratch directories,
// CLI invocation.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "edloc/edloc.hpp"

namespace edloc::support {

inline EditMask random_mask(Xoshiro256ss& rng, std::size_t n, double density,
                            MaskStage stage = MaskStage::attention_raw) {
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = rng.uniform() < density ? 1 : 0;
  return EditMask::from_bits(std::move(bits), stage);
}

inline EditMask mask_from_int(std::uint32_t v, std::size_t n) {
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (v >> i) & 1u;
  return EditMask::from_bits(std::move(bits));
}

// Rows with non-negative entries summing to `mass` (or less for zero rows).
inline Matrix random_substochastic(Xoshiro256ss& rng, std::size_t rows,
                                   std::size_t cols, double mass = 0.9) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (auto& x : m.row(i)) {
      x = static_cast<float>(rng.uniform());
      sum += x;
    }
    for (auto& x : m.row(i)) x = static_cast<float>(x / sum * mass);
  }
  return m;
}

inline Matrix random_gaussian(Xoshiro256ss& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (auto& x : m.values()) x = static_cast<float>(rng.normal());
  return m;
}

inline AttentionBundle random_bundle(Xoshiro256ss& rng, std::size_t n_img,
                                     std::size_t n_txt, std::uint32_t layer = 0,
                                     std::uint32_t t = 0,
                                     Stream s = Stream::target) {
  AttentionBundle b;
  b.layer = layer;
  b.timestep = t;
  b.stream = s;
  b.ca = random_substochastic(rng, n_img, n_txt, 0.3);
  b.sa = random_substochastic(rng, n_img, n_img, 0.6);
  return b;
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "edloc") {
    static std::uint64_t counter = 0;
    auto seed = static_cast<std::uint64_t>(
        std::hash<std::string>{}(tag + std::to_string(reinterpret_cast<std::uintptr_t>(this))));
    Xoshiro256ss rng = Xoshiro256ss::derive(seed, {++counter});
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rng.next() % 1000000000ull));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Relative path -> contents for every regular file under `root`.
inline std::vector<std::pair<std::string, std::vector<std::uint8_t>>> tree_contents(
    const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.emplace_back(std::filesystem::relative(e.path(), root).generic_string(),
                       file_bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

struct CliResult {
  int exit_code = -1;
  std::string output;
};

#ifdef EDLOC_CLI_PATH
// Runs the CLI with `args` inside `cwd` (shell-quoted by the caller where
// needed); stdout and stderr are captured together.
inline CliResult run_cli(const std::string& args, const std::filesystem::path& cwd,
                         const std::string& env = {}) {
  const auto log = cwd / ".cli_output";
  std::string cmd = "cd '" + cwd.string() + "' && " + env + (env.empty() ? "" : " ") +
                    "'" EDLOC_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  std::filesystem::remove(log);
  return r;
}
#endif

}  // namespace edloc::support
