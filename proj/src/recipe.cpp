#include "asft/recipe.hpp"

#include <numeric>

#include "asft/errors.hpp"

namespace asft {

TrainConfig base_training_config(const RecipeConfig& recipe) {
  TrainConfig cfg;
  cfg.method = Method::Sft;
  cfg.full_parameter = true;
  cfg.lr = recipe.base_lr;
  cfg.epochs = recipe.base_epochs;
  cfg.seed = recipe.model_seed;
  return cfg;
}

TrainConfig alignment_config(const RecipeConfig& recipe) {
  TrainConfig cfg = base_training_config(recipe);
  cfg.lr = recipe.align_lr;
  cfg.epochs = recipe.align_epochs;
  cfg.seed = Rng::derive(recipe.model_seed, 1);
  return cfg;
}

Dataset alignment_data(const Corpus& corpus, std::size_t task_examples) {
  Dataset d = corpus.refusal;
  const std::size_t n = std::min(task_examples, corpus.task_train.size());
  d.examples.insert(d.examples.end(), corpus.task_train.examples.begin(),
                    corpus.task_train.examples.begin() + static_cast<std::ptrdiff_t>(n));
  d.provenance["role"] = "alignment";
  return d;
}

Reference build_reference(const RecipeConfig& recipe) {
  Corpus corpus = gen_corpus(recipe.corpus);
  Rng init_rng(recipe.model_seed);
  const MlpModel fresh = MlpModel::init(LayerDims{recipe.corpus.d_in, 32, 4}, init_rng);

  TrainResult base = train(fresh.to_checkpoint("init"), nullptr, corpus.task_train, base_training_config(recipe));
  // Keep only the plain model entries; the anchor is built on these.
  Checkpoint base_ckpt = MlpModel::from_checkpoint(base.final).to_checkpoint("base");
  TrainResult aligned = train(base_ckpt, nullptr, alignment_data(corpus, recipe.align_task_examples),
                              alignment_config(recipe));
  Checkpoint aligned_ckpt = MlpModel::from_checkpoint(aligned.final).to_checkpoint("aligned");

  AlignmentAnchor anchor = AlignmentAnchor::build(aligned_ckpt, base_ckpt, recipe.mode, recipe.k);
  const SafetyReport base_report =
      evaluate(MlpModel::from_checkpoint(base_ckpt), nullptr, corpus.task_test, corpus.harmful_test);
  const SafetyReport aligned_report =
      evaluate(MlpModel::from_checkpoint(aligned_ckpt), nullptr, corpus.task_test, corpus.harmful_test);
  return Reference{std::move(corpus), std::move(base_ckpt), std::move(aligned_ckpt), std::move(anchor),
                   base_report, aligned_report};
}

Dataset finetune_data(const Reference& ref, const RecipeConfig& recipe, std::uint64_t seed) {
  return mix_poison(ref.corpus.task_train, ref.corpus.harmful_pool, recipe.poison_ratio, recipe.n_samples,
                    Rng::derive(seed, 100));
}

Dataset data_defense_data(const Reference& ref, const RecipeConfig& recipe, std::uint64_t seed,
                          std::size_t n_refusal) {
  Dataset d = finetune_data(ref, recipe, seed);
  if (n_refusal > ref.corpus.refusal.size()) {
    throw ParameterError("data defense needs " + std::to_string(n_refusal) + " refusal examples, " +
                         std::to_string(ref.corpus.refusal.size()) + " available");
  }
  Rng rng(Rng::derive(seed, 200));
  std::vector<std::size_t> idx(ref.corpus.refusal.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  for (std::size_t i = 0; i < n_refusal; ++i) d.examples.push_back(ref.corpus.refusal.examples[idx[i]]);
  rng.shuffle(d.examples);
  d.provenance["defense.n_refusal"] = std::to_string(n_refusal);
  return d;
}

TrainConfig finetune_config(const RecipeConfig& recipe, Method method, double lambda, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.lambda = lambda;
  cfg.lr = recipe.finetune_lr;
  cfg.lora_targets = recipe.lora_targets;
  cfg.seed = seed;
  cfg.poison_ratio = recipe.poison_ratio;
  cfg.n_samples = recipe.n_samples;
  return cfg;
}

AlignmentAnchor harm_anchor(const Reference& ref, const RecipeConfig& recipe) {
  return estimate_harmful_direction(MlpModel::from_checkpoint(ref.aligned), nullptr, ref.corpus.harmful_pool,
                                    recipe.harm);
}

}  // namespace asft
