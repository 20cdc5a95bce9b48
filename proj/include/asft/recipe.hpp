#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asft/anchor.hpp"
#include "asft/safetyeval.hpp"
#include "asft/trainer.hpp"

namespace asft {

// The default desk-scale experiment: a base model trained on the benign task,
// an aligned model obtained by further training it on refusals, and the
// anchor between the two. Fine-tuning runs start from the aligned model.
struct RecipeConfig {
  CorpusParams corpus{};
  std::uint64_t model_seed = 7;

  // Full-parameter SFT of a fresh model on task_train. Kept short so the base
  // is weak on the task and most of the task skill arrives with alignment.
  double base_lr = 1e-4;
  std::size_t base_epochs = 1;

  // Full-parameter SFT of the base model on refusal + the first
  // `align_task_examples` task examples.
  double align_lr = 3e-3;
  std::size_t align_epochs = 20;
  std::size_t align_task_examples = 2000;

  ProjectionMode mode = ProjectionMode::FroRank1;
  std::size_t k = AlignmentAnchor::kDefaultColspaceRank;

  // Fine-tuning defaults for the acceptance experiments. The toy loss surface
  // is far better conditioned than an LLM's, hence lr 1e-2 instead of 5e-5.
  double finetune_lr = 1e-2;
  std::vector<std::string> lora_targets = {"W2"};
  double poison_ratio = 0.1;
  std::size_t n_samples = 1000;

  // Refusal examples added by the pure-data defense.
  std::size_t defense_refusals = 100;

  // Harmful-direction estimate used by asft-alt and the harm landscape axis.
  HarmEstimateConfig harm = default_harm_estimate();

  static HarmEstimateConfig default_harm_estimate() {
    HarmEstimateConfig h;
    h.mode = ProjectionMode::ColSpace;
    h.k = 1;
    return h;
  }
};

struct Reference {
  Corpus corpus;
  Checkpoint base;
  Checkpoint aligned;
  AlignmentAnchor anchor;
  SafetyReport base_report;
  SafetyReport aligned_report;
};

TrainConfig base_training_config(const RecipeConfig& recipe);
TrainConfig alignment_config(const RecipeConfig& recipe);
Dataset alignment_data(const Corpus& corpus, std::size_t task_examples);

Reference build_reference(const RecipeConfig& recipe = {});

// Poisoned fine-tuning set for one seed.
Dataset finetune_data(const Reference& ref, const RecipeConfig& recipe, std::uint64_t seed);

// Pure-data defense: the poisoned set plus `n_refusal` refusal examples.
Dataset data_defense_data(const Reference& ref, const RecipeConfig& recipe, std::uint64_t seed,
                          std::size_t n_refusal);

TrainConfig finetune_config(const RecipeConfig& recipe, Method method, double lambda, std::uint64_t seed);

AlignmentAnchor harm_anchor(const Reference& ref, const RecipeConfig& recipe);

}  // namespace asft
