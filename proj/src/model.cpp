#include "asft/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "asft/errors.hpp"

namespace asft {

MlpModel MlpModel::zeros(const LayerDims& d) {
  return MlpModel{Tensor({d.d_hidden, d.d_in}), Tensor({d.d_hidden}), Tensor({d.d_out, d.d_hidden}),
                  Tensor({d.d_out})};
}

MlpModel MlpModel::init(const LayerDims& d, Rng& rng) {
  MlpModel m = zeros(d);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(d.d_in));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(d.d_hidden));
  m.w1 = random_uniform({d.d_hidden, d.d_in}, rng, -r1, r1);
  m.w2 = random_uniform({d.d_out, d.d_hidden}, rng, -r2, r2);
  return m;
}

LayerDims MlpModel::dims() const { return {w1.cols(), w1.rows(), w2.rows()}; }

void MlpModel::validate() const {
  const LayerDims d = dims();
  const bool ok = w1.rank() == 2 && w2.rank() == 2 && b1.rank() == 1 && b2.rank() == 1 &&
                  b1.size() == d.d_hidden && w2.cols() == d.d_hidden && b2.size() == d.d_out;
  if (!ok) {
    throw ShapeError("inconsistent model shapes: W1 " + w1.shape_string() + ", b1 " +
                     b1.shape_string() + ", W2 " + w2.shape_string() + ", b2 " + b2.shape_string());
  }
}

const Tensor& MlpModel::weight(const std::string& layer) const {
  if (layer == "W1") return w1;
  if (layer == "W2") return w2;
  throw ParameterError("unknown weight layer '" + layer + "'");
}

Tensor& MlpModel::weight(const std::string& layer) {
  return const_cast<Tensor&>(std::as_const(*this).weight(layer));
}

Checkpoint MlpModel::to_checkpoint(const std::string& model_kind) const {
  Checkpoint c(model_kind);
  c.add("W1", w1);
  c.add("b1", b1);
  c.add("W2", w2);
  c.add("b2", b2);
  return c;
}

MlpModel MlpModel::from_checkpoint(const Checkpoint& ckpt) {
  MlpModel m{ckpt.at("W1").astype(DType::Float64), ckpt.at("b1").astype(DType::Float64),
             ckpt.at("W2").astype(DType::Float64), ckpt.at("b2").astype(DType::Float64)};
  m.validate();
  return m;
}

LoraAdapter LoraAdapter::init(const MlpModel& model, const std::vector<std::string>& targets,
                              std::size_t rank, double alpha, Rng& rng) {
  if (rank < 1) throw ParameterError("LoRA rank must be at least 1");
  if (targets.empty()) throw ParameterError("LoRA adapter needs at least one target layer");
  LoraAdapter ad;
  ad.rank = rank;
  ad.alpha = alpha;
  ad.scale = alpha / static_cast<double>(rank);
  const double bound = 1.0 / std::sqrt(static_cast<double>(model.dims().d_in));
  for (const auto& name : kWeightLayers) {
    if (std::find(targets.begin(), targets.end(), name) == targets.end()) continue;
    const Tensor& w = model.weight(name);
    const std::size_t r = std::min({rank, w.rows(), w.cols()});
    ad.layers[name] = LoraFactors{Tensor({w.rows(), r}), random_uniform({r, w.cols()}, rng, -bound, bound)};
  }
  for (const auto& t : targets) {
    if (!ad.targets(t)) throw ParameterError("unknown LoRA target '" + t + "'");
  }
  return ad;
}

Tensor LoraAdapter::delta(const std::string& layer) const {
  auto it = layers.find(layer);
  if (it == layers.end()) throw ParameterError("adapter does not target '" + layer + "'");
  return matmul(it->second.b, it->second.a) * scale;
}

MlpModel LoraAdapter::merged(const MlpModel& base) const {
  MlpModel m = base;
  for (const auto& [name, f] : layers) m.weight(name) += delta(name);
  return m;
}

void LoraAdapter::write_to(Checkpoint& ckpt) const {
  for (const auto& [name, f] : layers) {
    ckpt.set("lora." + name + ".B", f.b);
    ckpt.set("lora." + name + ".A", f.a);
  }
  ckpt.meta.attributes["lora.rank"] = std::to_string(rank);
  std::ostringstream alpha_text;
  alpha_text.precision(17);
  alpha_text << alpha;
  ckpt.meta.attributes["lora.alpha"] = alpha_text.str();
}

std::optional<LoraAdapter> LoraAdapter::from_checkpoint(const Checkpoint& ckpt) {
  LoraAdapter ad;
  for (const auto& name : kWeightLayers) {
    const std::string b = "lora." + name + ".B", a = "lora." + name + ".A";
    if (ckpt.contains(b) && ckpt.contains(a)) {
      ad.layers[name] = LoraFactors{ckpt.at(b).astype(DType::Float64), ckpt.at(a).astype(DType::Float64)};
    }
  }
  if (ad.layers.empty()) return std::nullopt;
  const auto& attrs = ckpt.meta.attributes;
  ad.rank = attrs.count("lora.rank") ? std::stoul(attrs.at("lora.rank")) : ad.layers.begin()->second.a.rows();
  ad.alpha = attrs.count("lora.alpha") ? std::stod(attrs.at("lora.alpha")) : static_cast<double>(ad.rank);
  ad.scale = ad.alpha / static_cast<double>(ad.rank);
  return ad;
}

ParameterSet trainable_parameters(const MlpModel& model, const LoraAdapter* adapter) {
  ParameterSet p;
  if (adapter) {
    for (const auto& [name, f] : adapter->layers) {
      p["lora." + name + ".B"] = f.b;
      p["lora." + name + ".A"] = f.a;
    }
  } else {
    p["W1"] = model.w1;
    p["b1"] = model.b1;
    p["W2"] = model.w2;
    p["b2"] = model.b2;
  }
  return p;
}

void set_trainable_parameters(MlpModel& model, LoraAdapter* adapter, const ParameterSet& params) {
  auto assign = [&](Tensor& dst, const std::string& key) {
    const Tensor& src = params.at(key);
    if (!src.same_shape(dst)) throw ShapeError("parameter '" + key + "' has shape " + src.shape_string());
    dst = src;
  };
  if (adapter) {
    for (auto& [name, f] : adapter->layers) {
      assign(f.b, "lora." + name + ".B");
      assign(f.a, "lora." + name + ".A");
    }
  } else {
    assign(model.w1, "W1");
    assign(model.b1, "b1");
    assign(model.w2, "W2");
    assign(model.b2, "b2");
  }
}

namespace {

struct EffectiveWeights {
  Tensor w1;
  Tensor w2;
};

EffectiveWeights effective(const MlpModel& model, const LoraAdapter* adapter) {
  EffectiveWeights e{model.w1, model.w2};
  if (adapter) {
    if (adapter->targets("W1")) e.w1 += adapter->delta("W1");
    if (adapter->targets("W2")) e.w2 += adapter->delta("W2");
  }
  return e;
}

void check_input(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.w1.cols()) {
    throw ShapeError("input has length " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(model.w1.cols()));
  }
}

// Hidden activations h = tanh(W1 x + b1) and logits z = W2 h + b2.
void run(const MlpModel& model, const EffectiveWeights& w, std::span<const double> x,
         std::vector<double>& h, std::vector<double>& z) {
  const std::size_t dh = w.w1.rows(), din = w.w1.cols(), dout = w.w2.rows();
  h.assign(dh, 0.0);
  for (std::size_t i = 0; i < dh; ++i) {
    double acc = model.b1[i];
    for (std::size_t j = 0; j < din; ++j) acc += w.w1(i, j) * x[j];
    h[i] = std::tanh(acc);
  }
  z.assign(dout, 0.0);
  for (std::size_t i = 0; i < dout; ++i) {
    double acc = model.b2[i];
    for (std::size_t j = 0; j < dh; ++j) acc += w.w2(i, j) * h[j];
    z[i] = acc;
  }
}

// Returns log-sum-exp of z and writes softmax(z) into p.
double softmax(const std::vector<double>& z, std::vector<double>& p) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  p.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return zmax + std::log(sum);
}

void check_batch(const MlpModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw ParameterError("loss requires a non-empty batch");
  const auto dout = static_cast<int>(model.w2.rows());
  for (const auto& ex : batch) {
    check_input(model, ex.x);
    if (ex.y < 0 || ex.y >= dout) {
      throw ParameterError("class " + std::to_string(ex.y) + " outside [0, " + std::to_string(dout) + ")");
    }
  }
}

}  // namespace

Tensor forward(const MlpModel& model, const LoraAdapter* adapter, std::span<const double> x) {
  check_input(model, x);
  const EffectiveWeights w = effective(model, adapter);
  std::vector<double> h, z;
  run(model, w, x, h, z);
  return Tensor::vector(std::move(z));
}

double loss(const MlpModel& model, const LoraAdapter* adapter, std::span<const Example> batch) {
  check_batch(model, batch);
  const EffectiveWeights w = effective(model, adapter);
  std::vector<double> h, z, p;
  double total = 0.0;
  for (const auto& ex : batch) {
    run(model, w, ex.x, h, z);
    total += softmax(z, p) - z[static_cast<std::size_t>(ex.y)];
  }
  return total / static_cast<double>(batch.size());
}

LossAndGrad loss_and_grad(const MlpModel& model, const LoraAdapter* adapter,
                          std::span<const Example> batch) {
  check_batch(model, batch);
  const EffectiveWeights w = effective(model, adapter);
  const std::size_t dh = w.w1.rows(), din = w.w1.cols(), dout = w.w2.rows();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  Tensor g_w1({dh, din}), g_b1({dh}), g_w2({dout, dh}), g_b2({dout});
  std::vector<double> h, z, p, dz(dout), da(dh);
  double total = 0.0;
  for (const auto& ex : batch) {
    run(model, w, ex.x, h, z);
    const auto y = static_cast<std::size_t>(ex.y);
    total += softmax(z, p) - z[y];
    for (std::size_t i = 0; i < dout; ++i) dz[i] = (p[i] - (i == y ? 1.0 : 0.0)) * inv_n;
    for (std::size_t i = 0; i < dout; ++i) {
      g_b2[i] += dz[i];
      for (std::size_t j = 0; j < dh; ++j) g_w2(i, j) += dz[i] * h[j];
    }
    for (std::size_t j = 0; j < dh; ++j) {
      double back = 0.0;
      for (std::size_t i = 0; i < dout; ++i) back += w.w2(i, j) * dz[i];
      da[j] = back * (1.0 - h[j] * h[j]);
    }
    for (std::size_t j = 0; j < dh; ++j) {
      g_b1[j] += da[j];
      for (std::size_t k = 0; k < din; ++k) g_w1(j, k) += da[j] * ex.x[k];
    }
  }

  LossAndGrad out;
  out.loss = total * inv_n;
  if (adapter) {
    for (const auto& [name, f] : adapter->layers) {
      const Tensor& g_eff = name == "W1" ? g_w1 : g_w2;
      out.grads["lora." + name + ".B"] = matmul(g_eff, transpose(f.a)) * adapter->scale;
      out.grads["lora." + name + ".A"] = matmul(transpose(f.b), g_eff) * adapter->scale;
    }
  } else {
    out.grads["W1"] = std::move(g_w1);
    out.grads["b1"] = std::move(g_b1);
    out.grads["W2"] = std::move(g_w2);
    out.grads["b2"] = std::move(g_b2);
  }
  return out;
}

AdamW::AdamW(AdamWConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ParameterError("AdamW learning rate must be positive");
  if (config_.weight_decay < 0.0) throw ParameterError("AdamW weight decay must be non-negative");
}

void AdamW::step(ParameterSet& params, const ParameterSet& grads) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ParameterError("no gradient for parameter '" + name + "'");
    if (!it->second.same_shape(p)) {
      throw ShapeError("gradient for '" + name + "' has shape " + it->second.shape_string() +
                       ", parameter has " + p.shape_string());
    }
    if (!it->second.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto [mit, m_new] = m_.try_emplace(name, Tensor::zeros_like(p));
    auto [vit, v_new] = v_.try_emplace(name, Tensor::zeros_like(p));
    auto pm = p.data();
    auto gm = g.data();
    auto mm = mit->second.data();
    auto vm = vit->second.data();
    for (std::size_t i = 0; i < pm.size(); ++i) {
      mm[i] = config_.beta1 * mm[i] + (1.0 - config_.beta1) * gm[i];
      vm[i] = config_.beta2 * vm[i] + (1.0 - config_.beta2) * gm[i] * gm[i];
      const double m_hat = mm[i] / bc1;
      const double v_hat = vm[i] / bc2;
      if (config_.weight_decay != 0.0) pm[i] -= config_.lr * config_.weight_decay * pm[i];
      pm[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport compare_gradients(const ParameterSet& params,
                                  const std::function<double(const ParameterSet&)>& objective,
                                  const ParameterSet& analytic, double h, double tol) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ParameterError("finite-difference step must lie in [1e-7, 1e-3]");
  GradCheckReport report;
  ParameterSet probe = params;
  for (const auto& [name, p] : params) {
    const Tensor& a = analytic.at(name);
    GradCheckEntry entry;
    entry.name = name;
    entry.coords = p.size();
    Tensor& slot = probe.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = slot[i];
      slot[i] = orig + h;
      const double up = objective(probe);
      slot[i] = orig - h;
      const double down = objective(probe);
      slot[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double abs_err = std::abs(a[i] - numeric);
      const double rel_err = gradient_relative_error(a[i], numeric);
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
      if (rel_err > tol) ++entry.flagged;
    }
    report.total_flagged += entry.flagged;
    report.max_abs_error = std::max(report.max_abs_error, entry.max_abs_error);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport grad_check(const MlpModel& model, const LoraAdapter* adapter,
                           std::span<const Example> batch, double h, double tol) {
  const ParameterSet params = trainable_parameters(model, adapter);
  const LossAndGrad analytic = loss_and_grad(model, adapter, batch);
  MlpModel m = model;
  std::optional<LoraAdapter> ad;
  if (adapter) ad = *adapter;
  auto objective = [&](const ParameterSet& p) {
    set_trainable_parameters(m, ad ? &*ad : nullptr, p);
    return loss(m, ad ? &*ad : nullptr, batch);
  };
  return compare_gradients(params, objective, analytic.grads, h, tol);
}

}  // namespace asft
