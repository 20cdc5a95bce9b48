#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asft/anchor.hpp"
#include "asft/checkpoint.hpp"
#include "asft/dataset.hpp"
#include "asft/model.hpp"
#include "asft/safetyeval.hpp"

namespace asft {

// sft:                   task loss only.
// asft:                  + lambda * ||orth(delta)||^2 under the aligned anchor.
// asft-ablation-aligned: + lambda * ||proj(delta)||^2 under the aligned anchor.
// asft-alt:              + lambda * ||proj(delta)||^2 under a harm anchor.
// asft-full:             asft on all weights, delta = W - W_start.
enum class Method { Sft, Asft, AsftAblationAligned, AsftAlt, AsftFull };

const char* to_string(Method method);
Method parse_method(const std::string& text);

struct TrainConfig {
  Method method = Method::Sft;
  double lambda = 1.0;
  double lr = 5e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::size_t lora_rank = 8;
  double lora_alpha = 8.0;
  std::vector<std::string> lora_targets = {"W1", "W2"};
  // Trains W1, b1, W2, b2 directly instead of a LoRA adapter. Implied by asft-full.
  bool full_parameter = false;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double poison_ratio = 0.1;
  std::size_t n_samples = 1000;

  bool uses_lora() const noexcept { return !full_parameter && method != Method::AsftFull; }
  void validate() const;

  // Flat key=value view used for config files and metadata echo.
  std::map<std::string, std::string> to_map() const;
  // Applies recognised keys onto `base`; unknown keys are a ParameterError.
  static TrainConfig from_map(const std::map<std::string, std::string>& values, TrainConfig base);
  static TrainConfig from_map(const std::map<std::string, std::string>& values) {
    return from_map(values, TrainConfig{});
  }
};

// Parses "key=value" lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct StepRecord {
  std::size_t step = 0;
  double task_loss = 0.0;
  double penalty = 0.0;
  double total_loss = 0.0;
  double lambda = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::optional<SafetyReport> final_report;

  // Header step,task_loss,penalty,total_loss,lambda; values in %.17g.
  std::string to_csv() const;
};

struct EvalSets {
  const Dataset& task_test;
  const Dataset& harmful_test;
};

struct TrainResult {
  // Merged W1, b1, W2, b2, plus lora.* factors in LoRA mode.
  Checkpoint final;
  TrainLog log;
};

// round(p * n) harmful examples drawn without replacement, the rest benign,
// shuffled together. Deterministic in `seed`.
Dataset mix_poison(const Dataset& benign, const Dataset& harmful, double p, std::size_t n,
                   std::uint64_t seed);

struct ObjectiveValue {
  double task_loss = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  ParameterSet grads;
};

// Task loss + lambda * R(delta) and its gradient w.r.t. the trainable
// parameters. delta is scale * B * A with an adapter, else W - start.W.
ObjectiveValue objective(const MlpModel& model, const LoraAdapter* adapter, const MlpModel& start,
                         const AlignmentAnchor* anchor, Method method, double lambda,
                         std::span<const Example> batch);

TrainResult train(const Checkpoint& start, const AlignmentAnchor* anchor, const Dataset& data,
                  const TrainConfig& config, const std::optional<EvalSets>& eval = std::nullopt);

}  // namespace asft
