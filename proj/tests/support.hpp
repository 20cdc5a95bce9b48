#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "asft/checkpoint.hpp"
#include "asft/model.hpp"
#include "asft/numerics.hpp"

namespace asft::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("asft_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

// Mixed-dtype checkpoint with random shapes and values.
inline Checkpoint random_checkpoint(std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint c("random");
  c.meta.creation_seed = seed;
  const std::size_t n = 1 + rng.below(5);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> dims;
    const std::size_t rank = 1 + rng.below(2);
    for (std::size_t r = 0; r < rank; ++r) dims.push_back(1 + rng.below(6));
    const DType dt = rng.below(2) ? DType::Float64 : DType::Float32;
    Tensor t = random_normal(dims, rng, 3.0).astype(dt);
    c.add("t" + std::to_string(i), std::move(t));
  }
  return c;
}

}  // namespace asft::testing
