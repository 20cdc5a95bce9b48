#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace asft {

// Class semantics of the synthetic corpus.
enum Label : int { kTaskA = 0, kTaskB = 1, kRefuse = 2, kComply = 3 };

struct Example {
  std::vector<double> x;
  int y = 0;
  bool harmful = false;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  // Generator seed and parameters, echoed into the sibling .meta.json.
  std::map<std::string, std::string> provenance;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

// JSON Lines, one {"x":[...],"y":<int>,"harmful":<bool>} object per line.
// Doubles are written in shortest round-trip form.
std::string to_jsonl(const Dataset& data);
Dataset from_jsonl(const std::string& text);

// Writes "<path>" and "<path>.meta.json".
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace asft
