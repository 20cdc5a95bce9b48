#include "asft/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "asft/errors.hpp"

namespace asft {

namespace fs = std::filesystem;

void Checkpoint::add(std::string name, Tensor tensor) {
  if (name.empty()) throw ParameterError("checkpoint entry names must be non-empty");
  if (contains(name)) throw ParameterError("duplicate checkpoint entry '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

void Checkpoint::set(const std::string& name, Tensor tensor) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  }
  add(name, std::move(tensor));
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ParameterError("checkpoint has no entry '" + name + "'");
}

Tensor& Checkpoint::at(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ParameterError("checkpoint has no entry '" + name + "'");
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

bool Checkpoint::bit_equal(const Checkpoint& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.bit_equal(other.entries_[i].second)) return false;
  }
  return true;
}

namespace {

constexpr std::uint8_t kMagic[4] = {0x41, 0x53, 0x46, 0x54};  // "ASFT"

class ByteWriter {
 public:
  template <typename T>
  void put_le(T value) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>(u & 0xFF));
      u = static_cast<U>(u >> 8);
    }
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  template <typename T>
  T get_le(const std::string& what) {
    require(sizeof(T), what);
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string get_string(std::size_t n, const std::string& what) {
    require(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void require(std::size_t n, const std::string& what) const {
    if (remaining() < n) throw FormatError(pos_, "truncated file while reading " + what);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put_le<std::uint32_t>(kCheckpointVersion);
  w.put_le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& [name, t] : ckpt.entries()) {
    w.put_le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put_le<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.put_le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) w.put_le<std::uint64_t>(d);
    if (t.dtype() == DType::Float32) {
      for (double v : t.data()) w.put_le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      for (double v : t.data()) w.put_le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.require(4, "magic");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw FormatError(0, "bad magic, expected \"ASFT\"");
  }
  (void)r.get_string(4, "magic");
  const std::uint64_t version_at = r.offset();
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(version_at, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get_le<std::uint32_t>("tensor count");

  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string label = "tensor #" + std::to_string(i);
    const auto name_len = r.get_le<std::uint32_t>(label + " name length");
    const std::uint64_t name_at = r.offset();
    std::string name = r.get_string(name_len, label + " name");
    if (name.empty()) throw FormatError(name_at, "empty tensor name");
    const std::string what = "tensor '" + name + "'";

    const std::uint64_t dtype_at = r.offset();
    const auto dtype_raw = r.get_le<std::uint8_t>(what + " dtype");
    if (dtype_raw > 1) {
      throw FormatError(dtype_at, what + ": unknown dtype " + std::to_string(dtype_raw));
    }
    const auto dtype = static_cast<DType>(dtype_raw);
    const std::uint64_t ndim_at = r.offset();
    const auto ndim = r.get_le<std::uint8_t>(what + " ndim");
    if (ndim != 1 && ndim != 2) {
      throw FormatError(ndim_at, what + ": ndim must be 1 or 2, got " + std::to_string(ndim));
    }
    std::vector<std::size_t> dims;
    std::uint64_t count_elems = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint64_t extent_at = r.offset();
      const auto extent = r.get_le<std::uint64_t>(what + " extents");
      if (extent == 0) throw FormatError(extent_at, what + ": zero extent");
      count_elems *= extent;
      dims.push_back(static_cast<std::size_t>(extent));
    }
    const std::size_t width = dtype == DType::Float32 ? 4 : 8;
    if (count_elems > r.remaining() / width) {
      throw FormatError(r.offset(), "truncated file while reading " + what + " data");
    }
    const std::string data_label = what + " data";
    std::vector<double> data(static_cast<std::size_t>(count_elems));
    for (double& v : data) {
      if (dtype == DType::Float32) {
        v = static_cast<double>(std::bit_cast<float>(r.get_le<std::uint32_t>(data_label)));
      } else {
        v = std::bit_cast<double>(r.get_le<std::uint64_t>(data_label));
      }
    }
    if (ckpt.contains(name)) throw FormatError(name_at, "duplicate tensor name '" + name + "'");
    ckpt.add(std::move(name), Tensor(std::move(dims), std::move(data), dtype));
  }
  if (r.remaining() != 0) {
    throw FormatError(r.offset(), std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  ckpt.meta.format_version = version;
  return ckpt;
}

fs::path meta_path_for(const fs::path& path) {
  fs::path p = path;
  p += ".meta.json";
  return p;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));

  nlohmann::ordered_json meta;
  meta["format_version"] = ckpt.meta.format_version;
  meta["model_kind"] = ckpt.meta.model_kind;
  if (ckpt.meta.creation_seed) {
    meta["creation_seed"] = *ckpt.meta.creation_seed;
  } else {
    meta["creation_seed"] = nullptr;
  }
  meta["attributes"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.meta.attributes) meta["attributes"][k] = v;
  write_file_atomic(meta_path_for(path), meta.dump(2) + "\n");
}

Checkpoint load(const fs::path& path) {
  std::string raw = read_text_file(path);
  Checkpoint ckpt = decode_checkpoint(std::vector<std::uint8_t>(raw.begin(), raw.end()));

  const fs::path mp = meta_path_for(path);
  if (fs::exists(mp)) {
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(read_text_file(mp));
      ckpt.meta.model_kind = meta.value("model_kind", std::string{});
      if (meta.contains("creation_seed") && !meta["creation_seed"].is_null()) {
        ckpt.meta.creation_seed = meta["creation_seed"].get<std::uint64_t>();
      }
      if (meta.contains("attributes")) {
        for (const auto& [k, v] : meta["attributes"].items()) {
          ckpt.meta.attributes[k] = v.get<std::string>();
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(0, "invalid checkpoint metadata '" + mp.string() + "': " + e.what());
    }
  }
  return ckpt;
}

Checkpoint diff(const Checkpoint& a, const Checkpoint& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : a.entries()) names_a.insert(e.first);
  for (const auto& e : b.entries()) names_b.insert(e.first);

  std::vector<std::string> offending;
  std::set_symmetric_difference(names_a.begin(), names_a.end(), names_b.begin(), names_b.end(),
                                std::back_inserter(offending));
  for (const auto& [name, t] : a.entries()) {
    if (b.contains(name) && !t.same_shape(b.at(name))) offending.push_back(name);
  }
  if (!offending.empty()) {
    std::string list;
    for (const auto& n : offending) list += (list.empty() ? "" : ", ") + n;
    throw ShapeError("diff: incompatible checkpoints, offending entries: " + list);
  }

  Checkpoint out("diff");
  for (const auto& [name, t] : a.entries()) out.add(name, t - b.at(name));
  return out;
}

}  // namespace asft
