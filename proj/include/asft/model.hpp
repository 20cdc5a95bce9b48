#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asft/checkpoint.hpp"
#include "asft/dataset.hpp"
#include "asft/numerics.hpp"

namespace asft {

struct LayerDims {
  std::size_t d_in = 16;
  std::size_t d_hidden = 32;
  std::size_t d_out = 4;

  bool operator==(const LayerDims&) const = default;
};

// The two adaptable weight matrices, in forward order.
inline const std::vector<std::string> kWeightLayers = {"W1", "W2"};

// logits = W2 * tanh(W1 * x + b1) + b2
struct MlpModel {
  Tensor w1;  // d_hidden x d_in
  Tensor b1;  // d_hidden
  Tensor w2;  // d_out x d_hidden
  Tensor b2;  // d_out

  static MlpModel zeros(const LayerDims& dims = {});
  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
  static MlpModel init(const LayerDims& dims, Rng& rng);

  LayerDims dims() const;
  void validate() const;

  // "W1" or "W2".
  const Tensor& weight(const std::string& layer) const;
  Tensor& weight(const std::string& layer);

  // Entries W1, b1, W2, b2.
  Checkpoint to_checkpoint(const std::string& model_kind = "mlp") const;
  static MlpModel from_checkpoint(const Checkpoint& ckpt);
};

struct LoraFactors {
  Tensor b;  // m x r, starts at zero
  Tensor a;  // r x n
};

// Low-rank update W_eff = W + scale * B * A on a subset of the weight layers.
struct LoraAdapter {
  std::size_t rank = 8;
  double alpha = 8.0;
  double scale = 1.0;  // alpha / rank
  std::map<std::string, LoraFactors> layers;

  // A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)), B = 0. The per-layer rank is capped
  // at min(m, n); the scale stays alpha / rank.
  static LoraAdapter init(const MlpModel& model, const std::vector<std::string>& targets,
                          std::size_t rank, double alpha, Rng& rng);

  bool targets(const std::string& layer) const { return layers.count(layer) != 0; }
  // scale * B * A for a targeted layer.
  Tensor delta(const std::string& layer) const;
  MlpModel merged(const MlpModel& base) const;

  // Entries lora.<layer>.B / lora.<layer>.A plus rank/alpha attributes.
  void write_to(Checkpoint& ckpt) const;
  static std::optional<LoraAdapter> from_checkpoint(const Checkpoint& ckpt);
};

// Keyed by checkpoint names: W1, b1, W2, b2 or lora.<layer>.B / lora.<layer>.A.
using ParameterSet = std::map<std::string, Tensor>;

ParameterSet trainable_parameters(const MlpModel& model, const LoraAdapter* adapter);
void set_trainable_parameters(MlpModel& model, LoraAdapter* adapter, const ParameterSet& params);

Tensor forward(const MlpModel& model, const LoraAdapter* adapter, std::span<const double> x);

struct LossAndGrad {
  double loss = 0.0;
  ParameterSet grads;
};

// Mean cross-entropy over the batch and its exact gradient with respect to
// the trainable parameters (LoRA factors when an adapter is given).
LossAndGrad loss_and_grad(const MlpModel& model, const LoraAdapter* adapter,
                          std::span<const Example> batch);
double loss(const MlpModel& model, const LoraAdapter* adapter, std::span<const Example> batch);

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay Adam with bias correction.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config);

  // Throws NumericError naming the parameter if any gradient is not finite;
  // nothing is updated in that case.
  void step(ParameterSet& params, const ParameterSet& grads);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }
  const ParameterSet& first_moment() const noexcept { return m_; }
  const ParameterSet& second_moment() const noexcept { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  ParameterSet m_;
  ParameterSet v_;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords = 0;
  std::size_t flagged = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  std::size_t total_flagged = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, kGradCheckFloor). The floor keeps
// near-zero coordinates from being judged on round-off alone.
inline constexpr double kGradCheckFloor = 1e-6;
double gradient_relative_error(double analytic, double numeric);

// Compares `analytic` against central differences of `objective` around
// `params`. A coordinate is flagged when its relative error exceeds `tol`.
GradCheckReport compare_gradients(const ParameterSet& params,
                                  const std::function<double(const ParameterSet&)>& objective,
                                  const ParameterSet& analytic, double h, double tol);

GradCheckReport grad_check(const MlpModel& model, const LoraAdapter* adapter,
                           std::span<const Example> batch, double h = 1e-5, double tol = 1e-4);

}  // namespace asft
