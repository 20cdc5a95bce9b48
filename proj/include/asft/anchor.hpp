#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "asft/checkpoint.hpp"
#include "asft/dataset.hpp"
#include "asft/model.hpp"
#include "asft/numerics.hpp"

namespace asft {

// How a layer's update is projected onto its anchor.
//   FroRank1: onto the single flattened direction V / ||V||_F.
//   ColSpace: onto span of the top-k left singular vectors of V (P = C C^T).
enum class ProjectionMode { FroRank1, ColSpace };
enum class AnchorKind { Aligned, Harm };

const char* to_string(ProjectionMode mode);
const char* to_string(AnchorKind kind);
ProjectionMode parse_projection_mode(const std::string& text);
AnchorKind parse_anchor_kind(const std::string& text);

// Per-layer tensors keyed by weight layer name ("W1", "W2").
using LayerTensors = std::map<std::string, Tensor>;

struct LayerDecomposition {
  Tensor proj;
  Tensor orth;
};
using Decomposition = std::map<std::string, LayerDecomposition>;

class AlignmentAnchor {
 public:
  struct Layer {
    Tensor direction;  // un-normalized
    double norm = 0.0;
    Tensor basis;      // ColSpace only: m x k' orthonormal columns; empty if V = 0
    bool skip = false;
  };

  static constexpr std::size_t kDefaultColspaceRank = 8;

  // Throws DegenerateAnchorError when every direction is zero.
  static AlignmentAnchor from_directions(const LayerTensors& directions, AnchorKind kind,
                                         ProjectionMode mode,
                                         std::size_t k = kDefaultColspaceRank);

  // Directions are aligned - base on the weight layers; biases are excluded.
  static AlignmentAnchor build(const Checkpoint& aligned, const Checkpoint& base,
                               ProjectionMode mode = ProjectionMode::FroRank1,
                               std::optional<std::size_t> k = std::nullopt);

  AnchorKind kind() const noexcept { return kind_; }
  ProjectionMode mode() const noexcept { return mode_; }
  std::size_t k() const noexcept { return k_; }
  const std::map<std::string, Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(const std::string& name) const;

  // A skipped layer treats every update as in-basin (proj = X, orth = 0).
  void set_skip(const std::string& layer, bool skip);

  Tensor project(const std::string& layer, const Tensor& x) const;
  Decomposition decompose(const LayerTensors& update) const;

  // sum_l ||orth_l||_F^2 and its gradient 2 * orth_l.
  double penalty(const LayerTensors& update) const;
  LayerTensors penalty_grad(const LayerTensors& update) const;

  // sum_l ||proj_l||_F^2 and its gradient 2 * proj_l.
  double alt_penalty(const LayerTensors& update) const;
  LayerTensors alt_penalty_grad(const LayerTensors& update) const;

  // Entries anchor.<layer>; kind in model_kind; mode, k and skips as attributes.
  Checkpoint to_checkpoint() const;
  static AlignmentAnchor from_checkpoint(const Checkpoint& ckpt);

 private:
  void check_update(const LayerTensors& update) const;

  AnchorKind kind_ = AnchorKind::Aligned;
  ProjectionMode mode_ = ProjectionMode::FroRank1;
  std::size_t k_ = kDefaultColspaceRank;
  std::map<std::string, Layer> layers_;
};

enum class HarmOptimizer { Sgd, AdamW };

struct HarmEstimateConfig {
  HarmOptimizer optimizer = HarmOptimizer::Sgd;
  std::size_t steps = 50;
  double lr = 1e-2;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  ProjectionMode mode = ProjectionMode::FroRank1;
  std::size_t k = AlignmentAnchor::kDefaultColspaceRank;
};

// Runs `steps` optimizer steps of plain cross-entropy training on `harmful` from
// `model` and returns the weight movement as a Harm anchor. With an adapter
// template a fresh adapter of the same shape is trained and the movement is
// its scale * B * A; without one all parameters are trained.
AlignmentAnchor estimate_harmful_direction(const MlpModel& model, const LoraAdapter* adapter_template,
                                           const Dataset& harmful, const HarmEstimateConfig& config);

}  // namespace asft
