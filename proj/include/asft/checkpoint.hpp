#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "asft/numerics.hpp"

namespace asft {

struct CheckpointMeta {
  std::uint32_t format_version = 1;
  std::string model_kind;
  std::optional<std::uint64_t> creation_seed;
  // Free-form provenance (anchor mode, training config echo, ...).
  std::map<std::string, std::string> attributes;

  bool operator==(const CheckpointMeta&) const = default;
};

// Ordered collection of uniquely named tensors.
class Checkpoint {
 public:
  Checkpoint() = default;
  explicit Checkpoint(std::string model_kind) { meta.model_kind = std::move(model_kind); }

  // Appends a new entry; throws ParameterError on an empty or duplicate name.
  void add(std::string name, Tensor tensor);
  // Replaces an existing entry in place or appends.
  void set(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::vector<std::string> names() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Same names in the same order, bit-identical tensors. Metadata is not compared.
  bool bit_equal(const Checkpoint& other) const;

  CheckpointMeta meta;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes the binary file atomically (temp file + rename) and the metadata to
// a sibling "<path>.meta.json".
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
// Reads the binary file and, when present, its metadata sidecar.
Checkpoint load(const std::filesystem::path& path);

std::filesystem::path meta_path_for(const std::filesystem::path& path);

// Per-name a - b over identical name sets and shapes; meta.model_kind = "diff".
Checkpoint diff(const Checkpoint& a, const Checkpoint& b);

// Writes bytes to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace asft
