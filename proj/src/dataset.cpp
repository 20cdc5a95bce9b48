#include "asft/dataset.hpp"

#include <sstream>

#include <json.hpp>

#include "asft/checkpoint.hpp"
#include "asft/errors.hpp"

namespace asft {

namespace fs = std::filesystem;

std::string to_jsonl(const Dataset& data) {
  std::string out;
  for (const auto& ex : data.examples) {
    nlohmann::ordered_json line;
    line["x"] = ex.x;
    line["y"] = ex.y;
    line["harmful"] = ex.harmful;
    out += line.dump();
    out += '\n';
  }
  return out;
}

Dataset from_jsonl(const std::string& text) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Example ex;
      ex.x = j.at("x").get<std::vector<double>>();
      ex.y = j.at("y").get<int>();
      ex.harmful = j.at("harmful").get<bool>();
      data.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(line_start, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return data;
}

void save_dataset(const Dataset& data, const fs::path& path) {
  write_file_atomic(path, to_jsonl(data));
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : data.provenance) meta[k] = v;
  meta["n_examples"] = data.size();
  write_file_atomic(meta_path_for(path), meta.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& path) {
  Dataset data = from_jsonl(read_text_file(path));
  const fs::path mp = meta_path_for(path);
  if (fs::exists(mp)) {
    try {
      auto meta = nlohmann::json::parse(read_text_file(mp));
      for (const auto& [k, v] : meta.items()) {
        if (k == "n_examples") continue;
        data.provenance[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(0, "invalid dataset metadata '" + mp.string() + "': " + e.what());
    }
  }
  return data;
}

}  // namespace asft
