#include "asft/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "asft/errors.hpp"

namespace asft {

const char* to_string(ProjectionMode mode) {
  return mode == ProjectionMode::FroRank1 ? "fro" : "colspace";
}

const char* to_string(AnchorKind kind) { return kind == AnchorKind::Aligned ? "aligned" : "harm"; }

ProjectionMode parse_projection_mode(const std::string& text) {
  if (text == "fro" || text == "fro-rank1") return ProjectionMode::FroRank1;
  if (text == "colspace") return ProjectionMode::ColSpace;
  throw ParameterError("unknown projection mode '" + text + "' (expected fro or colspace)");
}

AnchorKind parse_anchor_kind(const std::string& text) {
  if (text == "aligned") return AnchorKind::Aligned;
  if (text == "harm") return AnchorKind::Harm;
  throw ParameterError("unknown anchor kind '" + text + "' (expected aligned or harm)");
}

AlignmentAnchor AlignmentAnchor::from_directions(const LayerTensors& directions, AnchorKind kind,
                                                 ProjectionMode mode, std::size_t k) {
  if (directions.empty()) throw DegenerateAnchorError("anchor has no layers");
  if (mode == ProjectionMode::ColSpace && k < 1) throw ParameterError("colspace rank k must be >= 1");

  AlignmentAnchor anchor;
  anchor.kind_ = kind;
  anchor.mode_ = mode;
  anchor.k_ = k;
  bool any_nonzero = false;
  for (const auto& [name, v] : directions) {
    if (v.rank() != 2) throw ShapeError("anchor direction '" + name + "' must be a matrix");
    if (!v.all_finite()) throw NumericError("anchor direction '" + name + "' is not finite");
    Layer layer;
    layer.direction = v.astype(DType::Float64);
    layer.norm = frobenius_norm(layer.direction);
    if (layer.norm > 0.0) any_nonzero = true;
    if (mode == ProjectionMode::ColSpace && layer.norm > 0.0) {
      const std::size_t kk = std::min({k, v.rows(), v.cols()});
      ThinSvd svd = thin_svd(layer.direction, kk);
      // Keep only numerically nonzero singular directions.
      std::size_t keep = 0;
      while (keep < kk && svd.s[keep] > 1e-10 * svd.s[0]) ++keep;
      layer.basis = Tensor({v.rows(), keep});
      for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < keep; ++j) layer.basis(i, j) = svd.u(i, j);
    }
    anchor.layers_.emplace(name, std::move(layer));
  }
  if (!any_nonzero) {
    throw DegenerateAnchorError("every anchor layer has a zero direction; nothing to anchor on");
  }
  return anchor;
}

AlignmentAnchor AlignmentAnchor::build(const Checkpoint& aligned, const Checkpoint& base,
                                       ProjectionMode mode, std::optional<std::size_t> k) {
  const Checkpoint delta = diff(aligned, base);
  LayerTensors directions;
  for (const auto& name : kWeightLayers) {
    if (delta.contains(name)) directions[name] = delta.at(name);
  }
  if (directions.empty()) throw ShapeError("checkpoints contain no weight layers (W1, W2)");
  return from_directions(directions, AnchorKind::Aligned, mode, k.value_or(kDefaultColspaceRank));
}

const AlignmentAnchor::Layer& AlignmentAnchor::layer(const std::string& name) const {
  auto it = layers_.find(name);
  if (it == layers_.end()) throw ParameterError("anchor has no layer '" + name + "'");
  return it->second;
}

void AlignmentAnchor::set_skip(const std::string& name, bool skip) {
  auto it = layers_.find(name);
  if (it == layers_.end()) throw ParameterError("anchor has no layer '" + name + "'");
  it->second.skip = skip;
}

Tensor AlignmentAnchor::project(const std::string& name, const Tensor& x) const {
  const Layer& l = layer(name);
  if (!x.same_shape(l.direction)) {
    throw ShapeError("update for '" + name + "' has shape " + x.shape_string() + ", anchor has " +
                     l.direction.shape_string());
  }
  if (l.skip) return x.astype(DType::Float64);
  if (l.norm == 0.0) return Tensor::zeros_like(l.direction);
  if (mode_ == ProjectionMode::FroRank1) {
    const double coeff = frobenius_dot(x, l.direction) / (l.norm * l.norm);
    return l.direction * coeff;
  }
  if (l.basis.empty()) return Tensor::zeros_like(l.direction);
  // C (C^T X)
  return matmul(l.basis, matmul(transpose(l.basis), x));
}

void AlignmentAnchor::check_update(const LayerTensors& update) const {
  if (update.size() != layers_.size()) {
    throw ShapeError("update has " + std::to_string(update.size()) + " layers, anchor has " +
                     std::to_string(layers_.size()));
  }
  for (const auto& [name, x] : update) {
    if (!layers_.count(name)) throw ShapeError("update layer '" + name + "' is not in the anchor");
  }
}

Decomposition AlignmentAnchor::decompose(const LayerTensors& update) const {
  check_update(update);
  Decomposition out;
  for (const auto& [name, x] : update) {
    Tensor proj = project(name, x);
    Tensor orth = x.astype(DType::Float64) - proj;
    out.emplace(name, LayerDecomposition{std::move(proj), std::move(orth)});
  }
  return out;
}

double AlignmentAnchor::penalty(const LayerTensors& update) const {
  double total = 0.0;
  for (const auto& [name, d] : decompose(update)) total += frobenius_dot(d.orth, d.orth);
  return total;
}

LayerTensors AlignmentAnchor::penalty_grad(const LayerTensors& update) const {
  LayerTensors out;
  for (auto& [name, d] : decompose(update)) out.emplace(name, d.orth * 2.0);
  return out;
}

double AlignmentAnchor::alt_penalty(const LayerTensors& update) const {
  double total = 0.0;
  for (const auto& [name, d] : decompose(update)) total += frobenius_dot(d.proj, d.proj);
  return total;
}

LayerTensors AlignmentAnchor::alt_penalty_grad(const LayerTensors& update) const {
  LayerTensors out;
  for (auto& [name, d] : decompose(update)) out.emplace(name, d.proj * 2.0);
  return out;
}

Checkpoint AlignmentAnchor::to_checkpoint() const {
  Checkpoint c(to_string(kind_));
  std::string skipped;
  for (const auto& [name, l] : layers_) {
    c.add("anchor." + name, l.direction);
    if (l.skip) skipped += (skipped.empty() ? "" : ",") + name;
  }
  c.meta.attributes["anchor.mode"] = to_string(mode_);
  c.meta.attributes["anchor.k"] = std::to_string(k_);
  if (!skipped.empty()) c.meta.attributes["anchor.skip"] = skipped;
  return c;
}

AlignmentAnchor AlignmentAnchor::from_checkpoint(const Checkpoint& ckpt) {
  LayerTensors directions;
  const std::string prefix = "anchor.";
  for (const auto& [name, t] : ckpt.entries()) {
    if (name.rfind(prefix, 0) == 0) directions[name.substr(prefix.size())] = t;
  }
  if (directions.empty()) throw FormatError(0, "checkpoint holds no anchor.<layer> entries");
  const auto& attrs = ckpt.meta.attributes;
  const ProjectionMode mode =
      attrs.count("anchor.mode") ? parse_projection_mode(attrs.at("anchor.mode")) : ProjectionMode::FroRank1;
  const std::size_t k = attrs.count("anchor.k") ? std::stoul(attrs.at("anchor.k")) : kDefaultColspaceRank;
  const AnchorKind kind = ckpt.meta.model_kind.empty() ? AnchorKind::Aligned
                                                       : parse_anchor_kind(ckpt.meta.model_kind);
  AlignmentAnchor anchor = from_directions(directions, kind, mode, k);
  if (attrs.count("anchor.skip")) {
    std::istringstream in(attrs.at("anchor.skip"));
    std::string name;
    while (std::getline(in, name, ',')) anchor.set_skip(name, true);
  }
  return anchor;
}

AlignmentAnchor estimate_harmful_direction(const MlpModel& model, const LoraAdapter* adapter_template,
                                           const Dataset& harmful, const HarmEstimateConfig& config) {
  if (harmful.empty()) throw ParameterError("harmful dataset is empty");
  if (config.steps < 1) throw ParameterError("harmful direction estimate needs steps >= 1");
  if (config.batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (!(config.lr >= 0.0)) throw ParameterError("learning rate must be non-negative");

  Rng rng(config.seed);
  MlpModel work = model;
  std::optional<LoraAdapter> adapter;
  if (adapter_template) {
    std::vector<std::string> targets;
    for (const auto& [name, f] : adapter_template->layers) targets.push_back(name);
    adapter = LoraAdapter::init(model, targets, adapter_template->rank, adapter_template->alpha, rng);
  }
  LoraAdapter* ad = adapter ? &*adapter : nullptr;

  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  // A zero learning rate is allowed here and yields a zero (degenerate) delta.
  const bool frozen = config.lr == 0.0;
  if (frozen) opt_cfg.lr = 1.0;
  AdamW optimizer(opt_cfg);
  ParameterSet params = trainable_parameters(work, ad);

  std::vector<std::size_t> order(harmful.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<Example> batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    batch.clear();
    while (batch.size() < config.batch_size && batch.size() < harmful.size()) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(harmful.examples[order[cursor++]]);
    }
    LossAndGrad lg = loss_and_grad(work, ad, batch);
    if (!std::isfinite(lg.loss)) {
      throw NumericError("harmful direction estimate diverged at step " + std::to_string(step));
    }
    if (!frozen && config.optimizer == HarmOptimizer::AdamW) {
      optimizer.step(params, lg.grads);
    } else if (!frozen) {
      for (auto& [name, p] : params) p.add_scaled(lg.grads.at(name), -config.lr);
    }
    set_trainable_parameters(work, ad, params);
  }

  LayerTensors directions;
  for (const auto& name : kWeightLayers) {
    if (ad) {
      directions[name] = ad->targets(name) ? ad->delta(name) : Tensor::zeros_like(model.weight(name));
    } else {
      directions[name] = work.weight(name) - model.weight(name);
    }
  }
  return AlignmentAnchor::from_directions(directions, AnchorKind::Harm, config.mode, config.k);
}

}  // namespace asft
