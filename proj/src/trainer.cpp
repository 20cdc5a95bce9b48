#include "asft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "asft/errors.hpp"

namespace asft {

const char* to_string(Method method) {
  switch (method) {
    case Method::Sft: return "sft";
    case Method::Asft: return "asft";
    case Method::AsftAblationAligned: return "asft-ablation-aligned";
    case Method::AsftAlt: return "asft-alt";
    case Method::AsftFull: return "asft-full";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::Sft, Method::Asft, Method::AsftAblationAligned, Method::AsftAlt, Method::AsftFull}) {
    if (text == to_string(m)) return m;
  }
  throw ParameterError("unknown method '" + text + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be finite and >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("lr must be finite and > 0");
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (lora_rank < 1) throw ParameterError("lora_rank must be >= 1");
  if (!(lora_alpha > 0.0)) throw ParameterError("lora_alpha must be > 0");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be >= 0");
  if (!(poison_ratio >= 0.0 && poison_ratio <= 1.0)) throw ParameterError("poison_ratio must lie in [0, 1]");
  if (n_samples < 1) throw ParameterError("n_samples must be >= 1");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("invalid number for '" + key + "': '" + text + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ParameterError("invalid non-negative integer for '" + key + "': '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ParameterError("invalid boolean for '" + key + "': '" + text + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::string targets;
  for (const auto& t : lora_targets) targets += (targets.empty() ? "" : ",") + t;
  return {
      {"method", to_string(method)},
      {"lambda", format_double(lambda)},
      {"lr", format_double(lr)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"lora_rank", std::to_string(lora_rank)},
      {"lora_alpha", format_double(lora_alpha)},
      {"lora_targets", targets},
      {"full_parameter", full_parameter ? "true" : "false"},
      {"weight_decay", format_double(weight_decay)},
      {"seed", std::to_string(seed)},
      {"poison_ratio", format_double(poison_ratio)},
      {"n_samples", std::to_string(n_samples)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values, TrainConfig cfg) {
  for (const auto& [key, value] : values) {
    if (key == "method") cfg.method = parse_method(value);
    else if (key == "lambda") cfg.lambda = parse_double(key, value);
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = parse_uint(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_uint(key, value);
    else if (key == "lora_rank") cfg.lora_rank = parse_uint(key, value);
    else if (key == "lora_alpha") cfg.lora_alpha = parse_double(key, value);
    else if (key == "full_parameter") cfg.full_parameter = parse_bool(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "poison_ratio") cfg.poison_ratio = parse_double(key, value);
    else if (key == "n_samples") cfg.n_samples = parse_uint(key, value);
    else if (key == "lora_targets") {
      cfg.lora_targets.clear();
      std::istringstream in(value);
      std::string t;
      while (std::getline(in, t, ',')) cfg.lora_targets.push_back(trim(t));
    } else {
      throw ParameterError("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string TrainLog::to_csv() const {
  std::string out = "step,task_loss,penalty,total_loss,lambda\n";
  for (const auto& r : steps) {
    out += std::to_string(r.step) + "," + format_double(r.task_loss) + "," + format_double(r.penalty) +
           "," + format_double(r.total_loss) + "," + format_double(r.lambda) + "\n";
  }
  return out;
}

Dataset mix_poison(const Dataset& benign, const Dataset& harmful, double p, std::size_t n,
                   std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("poison ratio must lie in [0, 1]");
  if (n < 1) throw ParameterError("mixed dataset size must be >= 1");
  const auto n_harm = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 0.5));
  const std::size_t n_benign = n - n_harm;
  if (n_harm > harmful.size()) {
    throw ParameterError("poison mixing needs " + std::to_string(n_harm) + " harmful examples, " +
                         std::to_string(harmful.size()) + " available");
  }
  if (n_benign > benign.size()) {
    throw ParameterError("poison mixing needs " + std::to_string(n_benign) + " benign examples, " +
                         std::to_string(benign.size()) + " available");
  }

  Rng rng(seed);
  auto draw = [&](const Dataset& pool, std::size_t count, Dataset& out) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    for (std::size_t i = 0; i < count; ++i) out.examples.push_back(pool.examples[idx[i]]);
  };
  Dataset out;
  draw(harmful, n_harm, out);
  draw(benign, n_benign, out);
  rng.shuffle(out.examples);
  out.provenance["mix.seed"] = std::to_string(seed);
  out.provenance["mix.p"] = format_double(p);
  out.provenance["mix.n"] = std::to_string(n);
  out.provenance["mix.n_harmful"] = std::to_string(n_harm);
  return out;
}

namespace {

void check_anchor(const TrainConfig& cfg, const AlignmentAnchor* anchor) {
  switch (cfg.method) {
    case Method::Sft:
      return;
    case Method::Asft:
    case Method::AsftAblationAligned:
    case Method::AsftFull:
      if (!anchor || anchor->kind() != AnchorKind::Aligned) {
        throw ParameterError(std::string("method ") + to_string(cfg.method) + " requires an aligned anchor");
      }
      return;
    case Method::AsftAlt:
      if (!anchor || anchor->kind() != AnchorKind::Harm) {
        throw ParameterError("method asft-alt requires a harm anchor");
      }
      return;
  }
}

}  // namespace

ObjectiveValue objective(const MlpModel& model, const LoraAdapter* adapter, const MlpModel& start,
                         const AlignmentAnchor* anchor, Method method, double lambda,
                         std::span<const Example> batch) {
  LossAndGrad lg = loss_and_grad(model, adapter, batch);
  ObjectiveValue out;
  out.task_loss = lg.loss;
  if (anchor && method != Method::Sft) {
    // asft and asft-full keep delta near the anchor; the other two push it away.
    const bool orth = method == Method::Asft || method == Method::AsftFull;
    LayerTensors delta;
    for (const auto& [name, layer] : anchor->layers()) {
      if (adapter) {
        delta[name] = adapter->targets(name) ? adapter->delta(name) : Tensor::zeros_like(layer.direction);
      } else {
        delta[name] = model.weight(name) - start.weight(name);
      }
    }
    out.penalty = orth ? anchor->penalty(delta) : anchor->alt_penalty(delta);
    // Skipped at lambda = 0 so the update is bitwise that of plain sft.
    if (lambda != 0.0) {
      const LayerTensors pgrad = orth ? anchor->penalty_grad(delta) : anchor->alt_penalty_grad(delta);
      for (const auto& [name, g] : pgrad) {
        if (adapter) {
          if (!adapter->targets(name)) continue;
          const LoraFactors& f = adapter->layers.at(name);
          lg.grads.at("lora." + name + ".B").add_scaled(matmul(g, transpose(f.a)), lambda * adapter->scale);
          lg.grads.at("lora." + name + ".A").add_scaled(matmul(transpose(f.b), g), lambda * adapter->scale);
        } else {
          lg.grads.at(name).add_scaled(g, lambda);
        }
      }
    }
  }
  out.total = out.task_loss + lambda * out.penalty;
  out.grads = std::move(lg.grads);
  return out;
}

TrainResult train(const Checkpoint& start, const AlignmentAnchor* anchor, const Dataset& data,
                  const TrainConfig& cfg, const std::optional<EvalSets>& eval) {
  cfg.validate();
  check_anchor(cfg, anchor);
  if (data.empty()) throw ParameterError("training data is empty");

  const MlpModel initial = MlpModel::from_checkpoint(start);
  MlpModel model = initial;
  Rng rng(cfg.seed);
  std::optional<LoraAdapter> adapter;
  if (cfg.uses_lora()) adapter = LoraAdapter::init(model, cfg.lora_targets, cfg.lora_rank, cfg.lora_alpha, rng);
  LoraAdapter* ad = adapter ? &*adapter : nullptr;

  const bool penalized = cfg.method != Method::Sft;
  if (penalized) {
    for (const auto& [name, layer] : anchor->layers()) {
      if (!layer.direction.same_shape(initial.weight(name))) {
        throw ShapeError("anchor layer '" + name + "' has shape " + layer.direction.shape_string() +
                         ", model has " + initial.weight(name).shape_string());
      }
    }
  }

  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW optimizer(opt_cfg);
  ParameterSet params = trainable_parameters(model, ad);

  TrainLog log;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Example> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data.examples[order[i]]);

      const ObjectiveValue obj =
          objective(model, ad, initial, penalized ? anchor : nullptr, cfg.method, cfg.lambda, batch);
      if (!std::isfinite(obj.task_loss)) {
        throw NumericError("training loss is not finite at step " + std::to_string(step));
      }
      if (!std::isfinite(obj.total)) {
        throw NumericError("training objective is not finite at step " + std::to_string(step));
      }
      log.steps.push_back({step, obj.task_loss, obj.penalty, obj.total, cfg.lambda});

      optimizer.step(params, obj.grads);
      set_trainable_parameters(model, ad, params);
      ++step;
    }
  }

  const MlpModel merged = ad ? ad->merged(model) : model;
  TrainResult result;
  result.final = merged.to_checkpoint("finetuned");
  if (ad) ad->write_to(result.final);
  result.final.meta.creation_seed = cfg.seed;
  for (const auto& [k, v] : cfg.to_map()) result.final.meta.attributes["train." + k] = v;
  if (eval) log.final_report = evaluate(merged, nullptr, eval->task_test, eval->harmful_test);
  result.log = std::move(log);
  return result;
}

}  // namespace asft
