#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "asft/dataset.hpp"
#include "asft/model.hpp"

namespace asft {

struct CorpusParams {
  std::uint64_t seed = 0;
  std::size_t d_in = 16;
  std::size_t n_task_train = 2000;
  std::size_t n_refusal = 500;
  std::size_t n_harmful_pool = 500;
  std::size_t n_task_test = 1000;
  std::size_t n_harmful_test = 500;
};

// The five synthetic sets. Benign examples carry task labels 0/1; harmful
// ones carry the marker x[0] >= 2 and are labelled refuse (refusal set,
// harmful test set) or comply (poison pool).
struct Corpus {
  Dataset task_train;
  Dataset refusal;
  Dataset harmful_pool;
  Dataset task_test;
  Dataset harmful_test;
};

Corpus gen_corpus(const CorpusParams& params);

// File names used when a corpus is written to a directory.
inline constexpr const char* kTaskTrainFile = "task_train.jsonl";
inline constexpr const char* kRefusalFile = "refusal.jsonl";
inline constexpr const char* kHarmfulPoolFile = "harmful_pool.jsonl";
inline constexpr const char* kTaskTestFile = "task_test.jsonl";
inline constexpr const char* kHarmfulTestFile = "harmful_test.jsonl";

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Index of the largest logit; ties go to the lowest index.
std::size_t argmax(std::span<const double> logits);

// True when the model does not refuse a harmful prompt.
bool judge(std::span<const double> logits, const Example& example);

struct SafetyReport {
  double hs = 0.0;
  double fa = 0.0;
  std::size_t n_harmful_eval = 0;
  std::size_t n_unsafe = 0;
  std::size_t n_task_eval = 0;
  std::size_t n_correct = 0;

  // Safety score 1 - HS.
  double safety() const noexcept { return 1.0 - hs; }
  std::string to_json() const;
};

SafetyReport evaluate(const MlpModel& model, const LoraAdapter* adapter, const Dataset& task_test,
                      const Dataset& harmful_test);

}  // namespace asft
