#include "asft/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "asft/anchor.hpp"
#include "asft/checkpoint.hpp"
#include "asft/errors.hpp"
#include "asft/landscape.hpp"
#include "asft/model.hpp"
#include "asft/recipe.hpp"
#include "asft/safetyeval.hpp"
#include "asft/trainer.hpp"

namespace asft {
namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::vector<std::string> split(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ParameterError("empty entry in list '" + text + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ParameterError("empty list");
  return out;
}

double to_double(const std::string& flag, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParameterError(flag + ": '" + text + "' is not a number");
}

std::uint64_t to_u64(const std::string& flag, const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ParameterError(flag + ": '" + text + "' is not a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ParameterError(flag + ": '" + text + "' is out of range");
  }
}

std::vector<double> parse_double_list(const std::string& flag, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split(text)) out.push_back(to_double(flag, item));
  return out;
}

// "1-5", "1,3,7" or a mix such as "1-3,9".
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split(text)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(to_u64("--seeds", item));
      continue;
    }
    const std::uint64_t lo = to_u64("--seeds", item.substr(0, dash));
    const std::uint64_t hi = to_u64("--seeds", item.substr(dash + 1));
    if (hi < lo) throw ParameterError("--seeds: range '" + item + "' is decreasing");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

std::vector<std::string> parse_targets(const std::string& text) {
  std::vector<std::string> out = split(text);
  for (const auto& t : out) {
    if (std::find(kWeightLayers.begin(), kWeightLayers.end(), t) == kWeightLayers.end()) {
      throw ParameterError("--targets: unknown layer '" + t + "' (expected W1 and/or W2)");
    }
  }
  return out;
}

Dataset corpus_part(const fs::path& path, const std::string& file) {
  if (fs::is_directory(path)) return load_dataset(path / file);
  return load_dataset(path);
}

void write_text(const std::optional<std::string>& path, const std::string& text, std::ostream& out) {
  if (path) {
    write_file_atomic(*path, text);
  } else {
    out << text;
  }
}

void write_sidecar(const fs::path& path, const nlohmann::ordered_json& meta) {
  write_file_atomic(meta_path_for(path), meta.dump(2) + "\n");
}

// Rejects an output path that names one of the inputs.
void check_output(const std::string& out, const std::vector<std::string>& inputs) {
  std::error_code ec;
  for (const auto& in : inputs) {
    if (in.empty()) continue;
    if (fs::weakly_canonical(out, ec) == fs::weakly_canonical(in, ec)) {
      throw ParameterError("--out '" + out + "' would overwrite input '" + in + "'");
    }
  }
  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw IoError("output directory '" + parent.string() + "' does not exist");
  }
}

// Appends `--key value` for every config-file entry whose flag is not already
// on the command line, so explicit flags win.
std::vector<std::string> apply_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  const auto values = parse_key_values(read_text_file(*path));
  std::vector<std::string> extra;
  for (const auto& [raw, value] : values) {
    std::string key = raw;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// Flags shared by the commands that train.
struct TrainFlags {
  std::string method;
  double lambda = 1.0;
  double lr = 0.0;
  std::size_t epochs = 0;
  std::size_t batch_size = 8;
  std::size_t rank = 8;
  std::string targets = "W1,W2";
  double p = 0.1;
  std::size_t n = 1000;
};

TrainConfig finetune_train_config(const TrainFlags& f, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.method = parse_method(f.method);
  cfg.lambda = f.lambda;
  cfg.lr = f.lr;
  cfg.epochs = f.epochs;
  cfg.batch_size = f.batch_size;
  cfg.lora_rank = f.rank;
  cfg.lora_targets = parse_targets(f.targets);
  cfg.poison_ratio = f.p;
  cfg.n_samples = f.n;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

std::optional<AlignmentAnchor> load_anchor(const std::vector<std::string>& paths, std::optional<AnchorKind> kind) {
  for (const auto& p : paths) {
    AlignmentAnchor a = AlignmentAnchor::from_checkpoint(load(p));
    if (!kind || a.kind() == *kind) return a;
  }
  return std::nullopt;
}

std::optional<AnchorKind> anchor_kind_for(Method m) {
  switch (m) {
    case Method::Sft: return std::nullopt;
    case Method::AsftAlt: return AnchorKind::Harm;
    default: return AnchorKind::Aligned;
  }
}

class Cli {
 public:
  Cli(std::ostream& out) : out_(out), app_("AsFT desk-scale toolkit", "asft") {
    app_.require_subcommand(1);
    app_.fallthrough(false);
    add_gen_data();
    add_train_base();
    add_align();
    add_diff();
    add_finetune();
    add_eval();
    add_scan();
    add_epl();
    add_sweep();
  }

  CLI::App& app() { return app_; }

  void run() {
    for (auto& [sub, action] : actions_) {
      if (sub->parsed()) action();
    }
  }

 private:
  CLI::App* sub(const std::string& name, const std::string& help, std::function<void()> action) {
    CLI::App* s = app_.add_subcommand(name, help);
    s->add_option("--config", "key=value file; explicit flags override it");
    actions_.emplace_back(s, std::move(action));
    return s;
  }

  static void require(CLI::Option* opt) { opt->required(); }

  void add_gen_data() {
    auto* s = sub("gen-data", "Generate the synthetic corpus as JSONL files", [this] {
      CorpusParams params;
      params.seed = gd_.seed;
      if (fs::exists(gd_.out) && !fs::is_directory(gd_.out)) {
        throw ParameterError("--out '" + gd_.out + "' exists and is not a directory");
      }
      save_corpus(gen_corpus(params), gd_.out);
    });
    s->add_option("--seed", gd_.seed, "corpus seed")->capture_default_str();
    require(s->add_option("--out", gd_.out, "output directory"));
  }

  void add_train_base() {
    const RecipeConfig rc;
    tb_.seed = rc.model_seed;
    tb_.lr = rc.base_lr;
    tb_.epochs = rc.base_epochs;
    auto* s = sub("train-base", "Full-parameter SFT of a fresh model on benign task data", [this] {
      check_output(tb_.out, {tb_.data});
      RecipeConfig rc;
      rc.model_seed = tb_.seed;
      rc.base_lr = tb_.lr;
      rc.base_epochs = tb_.epochs;
      TrainConfig cfg = base_training_config(rc);
      cfg.batch_size = tb_.batch_size;
      cfg.validate();
      const Dataset data = corpus_part(tb_.data, "task_train.jsonl");
      if (data.empty()) throw ParameterError("--data has no examples");
      Rng init_rng(tb_.seed);
      const MlpModel fresh = MlpModel::init(LayerDims{data.examples.front().x.size(), 32, 4}, init_rng);
      TrainResult r = train(fresh.to_checkpoint("init"), nullptr, data, cfg);
      save_model(r, "base", tb_.out, {{"cli.data", tb_.data}});
    });
    require(s->add_option("--data", tb_.data, "corpus directory or JSONL file"));
    s->add_option("--seed", tb_.seed, "model seed")->capture_default_str();
    s->add_option("--lr", tb_.lr)->capture_default_str();
    s->add_option("--epochs", tb_.epochs)->capture_default_str();
    s->add_option("--batch-size", tb_.batch_size)->capture_default_str();
    require(s->add_option("--out", tb_.out, "output checkpoint"));
  }

  void add_align() {
    const RecipeConfig rc;
    al_.seed = rc.model_seed;
    al_.lr = rc.align_lr;
    al_.epochs = rc.align_epochs;
    al_.n = rc.align_task_examples;
    auto* s = sub("align", "SFT the base model on refusal data to obtain the aligned model", [this] {
      check_output(al_.out, {al_.base, al_.data});
      RecipeConfig rc;
      rc.model_seed = al_.seed;
      rc.align_lr = al_.lr;
      rc.align_epochs = al_.epochs;
      TrainConfig cfg = alignment_config(rc);
      cfg.batch_size = al_.batch_size;
      cfg.validate();
      const Checkpoint base = load(al_.base);
      Dataset data;
      if (fs::is_directory(al_.data)) {
        data = alignment_data(load_corpus(al_.data), al_.n);
      } else {
        if (n_opt_->count()) throw ParameterError("--n applies only when --data is a corpus directory");
        data = load_dataset(al_.data);
      }
      TrainResult r = train(MlpModel::from_checkpoint(base).to_checkpoint("base"), nullptr, data, cfg);
      save_model(r, "aligned", al_.out,
                 {{"cli.base", al_.base}, {"cli.data", al_.data}, {"cli.n", std::to_string(al_.n)}});
    });
    require(s->add_option("--base", al_.base, "base checkpoint"));
    require(s->add_option("--data", al_.data, "corpus directory (refusal + task examples) or JSONL file"));
    s->add_option("--seed", al_.seed, "model seed")->capture_default_str();
    s->add_option("--lr", al_.lr)->capture_default_str();
    s->add_option("--epochs", al_.epochs)->capture_default_str();
    s->add_option("--batch-size", al_.batch_size)->capture_default_str();
    n_opt_ = s->add_option("--n", al_.n, "task examples mixed into the alignment set")->capture_default_str();
    require(s->add_option("--out", al_.out, "output checkpoint"));
  }

  void add_diff() {
    auto* s = sub("diff", "Build an anchor: aligned - base, or a harmful-direction estimate", [this] {
      check_output(df_.out, {df_.aligned, df_.base, df_.data});
      const auto kind = parse_anchor_kind(df_.dir);
      const Checkpoint aligned = load(df_.aligned);
      Checkpoint out;
      if (kind == AnchorKind::Aligned) {
        for (auto* o : {df_steps_, df_lr_, df_seed_, df_batch_, df_data_}) {
          if (o->count()) throw ParameterError(o->get_name() + " applies only to --dir harm");
        }
        if (df_.base.empty()) throw ParameterError("--dir aligned requires --base");
        const ProjectionMode mode = df_mode_->count() ? parse_projection_mode(df_.mode) : ProjectionMode::FroRank1;
        std::optional<std::size_t> k;
        if (df_k_->count()) k = df_.k;
        out = AlignmentAnchor::build(aligned, load(df_.base), mode, k).to_checkpoint();
        out.meta.attributes["cli.base"] = df_.base;
      } else {
        if (df_base_->count()) throw ParameterError("--base applies only to --dir aligned");
        if (df_.data.empty()) throw ParameterError("--dir harm requires --data");
        HarmEstimateConfig h = RecipeConfig::default_harm_estimate();
        if (df_mode_->count()) h.mode = parse_projection_mode(df_.mode);
        if (df_k_->count()) h.k = df_.k;
        if (df_steps_->count()) h.steps = df_.steps;
        if (df_lr_->count()) h.lr = df_.lr;
        if (df_seed_->count()) h.seed = df_.seed;
        if (df_batch_->count()) h.batch_size = df_.batch_size;
        const Dataset harmful = corpus_part(df_.data, "harmful_pool.jsonl");
        out = estimate_harmful_direction(MlpModel::from_checkpoint(aligned), nullptr, harmful, h).to_checkpoint();
        auto& a = out.meta.attributes;
        a["harm.steps"] = std::to_string(h.steps);
        a["harm.lr"] = fmt(h.lr);
        a["harm.batch_size"] = std::to_string(h.batch_size);
        a["harm.seed"] = std::to_string(h.seed);
        a["harm.optimizer"] = h.optimizer == HarmOptimizer::Sgd ? "sgd" : "adamw";
        a["cli.data"] = df_.data;
      }
      out.meta.attributes["cli.aligned"] = df_.aligned;
      save(out, df_.out);
    });
    s->add_option("--dir", df_.dir, "aligned | harm")->capture_default_str();
    require(s->add_option("--aligned", df_.aligned, "aligned checkpoint"));
    df_base_ = s->add_option("--base", df_.base, "base checkpoint (--dir aligned)");
    df_data_ = s->add_option("--data", df_.data, "harmful examples: corpus directory or JSONL (--dir harm)");
    df_mode_ = s->add_option("--mode", df_.mode, "fro | colspace (default fro; colspace k=1 for harm)");
    df_k_ = s->add_option("--k", df_.k, "colspace rank");
    df_steps_ = s->add_option("--steps", df_.steps, "harm estimate steps (default 50)");
    df_lr_ = s->add_option("--lr", df_.lr, "harm estimate learning rate (default 1e-2)");
    df_seed_ = s->add_option("--seed", df_.seed, "harm estimate seed (default 0)");
    df_batch_ = s->add_option("--batch-size", df_.batch_size, "harm estimate batch size (default 8)");
    require(s->add_option("--out", df_.out, "output anchor checkpoint"));
  }

  void add_train_flags(CLI::App* s, TrainFlags& f, bool lists) {
    if (!lists) {
      s->add_option("--method", f.method, "sft | asft | asft-ablation-aligned | asft-alt | asft-full")
          ->capture_default_str();
      s->add_option("--lambda", f.lambda)->capture_default_str();
      s->add_option("--lr", f.lr)->capture_default_str();
    }
    s->add_option("--epochs", f.epochs)->capture_default_str();
    s->add_option("--batch-size", f.batch_size)->capture_default_str();
    s->add_option("--rank", f.rank, "LoRA rank")->capture_default_str();
    s->add_option("--targets", f.targets, "LoRA target layers")->capture_default_str();
    s->add_option("--p", f.p, "poison ratio")->capture_default_str();
    s->add_option("--n", f.n, "fine-tuning set size")->capture_default_str();
  }

  void add_finetune() {
    const TrainConfig defaults;
    ft_.method = "sft";
    ft_.lr = defaults.lr;
    ft_.epochs = defaults.epochs;
    auto* s = sub("finetune", "Fine-tune a model with sft or one of the AsFT penalties", [this] {
      std::vector<std::string> inputs = ft_data_;
      inputs.push_back(ft_aligned_);
      inputs.insert(inputs.end(), ft_anchor_.begin(), ft_anchor_.end());
      check_output(ft_out_, inputs);
      const TrainConfig cfg = finetune_train_config(ft_, ft_seed_);
      const Checkpoint start = load(ft_aligned_);
      const auto wanted = anchor_kind_for(cfg.method);
      if (ft_anchor_.size() > 1) throw ParameterError("finetune takes at most one --anchor");
      std::optional<AlignmentAnchor> anchor;
      if (wanted) {
        if (ft_anchor_.empty()) {
          throw ParameterError(std::string("--method ") + to_string(cfg.method) + " requires --anchor");
        }
        anchor = load_anchor(ft_anchor_, std::nullopt);
      }
      Dataset data;
      for (std::size_t i = 0; i < ft_data_.size(); ++i) {
        const fs::path path = ft_data_[i];
        if (i == 0 && fs::is_directory(path)) {
          const Corpus c = load_corpus(path);
          data = mix_poison(c.task_train, c.harmful_pool, cfg.poison_ratio, cfg.n_samples, Rng::derive(cfg.seed, 100));
          continue;
        }
        if (fs::is_directory(path)) throw ParameterError("only the first --data may be a corpus directory");
        if (i == 0 && (p_opt_->count() || n_opt_ft_->count())) {
          throw ParameterError("--p and --n apply only when the first --data is a corpus directory");
        }
        const Dataset more = load_dataset(path);
        data.examples.insert(data.examples.end(), more.examples.begin(), more.examples.end());
      }
      TrainResult r = train(start, anchor ? &*anchor : nullptr, data, cfg);
      auto& a = r.final.meta.attributes;
      a["cli.aligned"] = ft_aligned_;
      a["cli.data"] = join(ft_data_);
      a["cli.anchor"] = join(ft_anchor_);
      save(r.final, ft_out_);
      write_file_atomic(ft_out_ + ".log.csv", r.log.to_csv());
    });
    require(s->add_option("--aligned", ft_aligned_, "starting checkpoint"));
    s->add_option("--anchor", ft_anchor_, "anchor checkpoint (aligned or harm kind)")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    require(s->add_option("--data", ft_data_, "corpus directory (mixed with --p/--n) and/or JSONL files")
                ->expected(1)
                ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll));
    s->add_option("--seed", ft_seed_)->capture_default_str();
    add_train_flags(s, ft_, false);
    p_opt_ = s->get_option("--p");
    n_opt_ft_ = s->get_option("--n");
    require(s->add_option("--out", ft_out_, "output checkpoint; the loss log goes to <out>.log.csv"));
  }

  void add_eval() {
    auto* s = sub("eval", "Harmful score and task accuracy of a checkpoint", [this] {
      if (ev_.out) check_output(*ev_.out, {ev_.model, ev_.data});
      const MlpModel m = MlpModel::from_checkpoint(load(ev_.model));
      const SafetyReport r = evaluate(m, nullptr, corpus_part(ev_.data, "task_test.jsonl"),
                                      corpus_part(ev_.data, "harmful_test.jsonl"));
      write_text(ev_.out, r.to_json(), out_);
    });
    require(s->add_option("model", ev_.model, "checkpoint to evaluate"));
    require(s->add_option("--data", ev_.data, "corpus directory"));
    s->add_option("--out", ev_.out, "JSON report (stdout if omitted)");
  }

  void add_scan() {
    sc_.workers = std::max(1u, std::thread::hardware_concurrency());
    auto* s = sub("scan", "Safety landscape around a model along one or two directions", [this] { run_scan(); });
    require(s->add_option("--aligned", sc_.model, "model to scan around"));
    s->add_option("--anchor", sc_.anchors, "anchor checkpoints (aligned and/or harm kind)")
        ->expected(1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    s->add_option("--dir", sc_.dir, "aligned | harm | random, or two kinds (e.g. aligned,random) for a 2D grid")
        ->capture_default_str();
    s->add_option("--dirs", sc_.dirs, "number of random directions to sample (--dir random)")->capture_default_str();
    s->add_option("--a", sc_.a, "half-range")->capture_default_str();
    s->add_option("--steps", sc_.steps, "grid points per axis (odd)")->capture_default_str();
    s->add_option("--seed", sc_.seed, "seed for random directions")->capture_default_str();
    s->add_option("--workers", sc_.workers)->capture_default_str();
    require(s->add_option("--data", sc_.data, "corpus directory"));
    require(s->add_option("--out", sc_.out, "grid CSV; with --dirs N > 1, <stem>.<i><ext> per direction"));
  }

  // Direction i of a scan draws its random entries from derive(seed, i).
  void run_scan() {
    std::vector<DirectionKind> kinds;
    for (const auto& k : split(sc_.dir)) kinds.push_back(parse_direction_kind(k));
    if (kinds.size() > 2) throw ParameterError("--dir takes one or two direction kinds");
    if (sc_.dirs < 1) throw ParameterError("--dirs must be >= 1");
    if (sc_.dirs > 1 && (kinds.size() != 1 || kinds[0] != DirectionKind::Random)) {
      throw ParameterError("--dirs > 1 requires --dir random");
    }
    if (sc_.workers < 1) throw ParameterError("--workers must be >= 1");
    const ScanOptions opts{sc_.a, sc_.steps, sc_.workers};
    symmetric_axis(opts.a, opts.steps);

    std::vector<std::string> outs;
    if (sc_.dirs == 1) {
      outs.push_back(sc_.out);
    } else {
      const fs::path out(sc_.out);
      for (std::size_t i = 0; i < sc_.dirs; ++i) {
        outs.push_back((out.parent_path() / (out.stem().string() + "." + std::to_string(i) + out.extension().string()))
                           .string());
      }
    }
    std::vector<std::string> inputs = sc_.anchors;
    inputs.push_back(sc_.model);
    inputs.push_back(sc_.data);
    for (const auto& o : outs) check_output(o, inputs);

    const MlpModel theta = MlpModel::from_checkpoint(load(sc_.model));
    auto direction = [&](DirectionKind kind, std::size_t i) {
      std::optional<AlignmentAnchor> anchor;
      if (kind != DirectionKind::Random) {
        const AnchorKind want = kind == DirectionKind::Aligned ? AnchorKind::Aligned : AnchorKind::Harm;
        anchor = load_anchor(sc_.anchors, want);
        if (!anchor) {
          throw ParameterError(std::string("direction ") + to_string(kind) + " needs an --anchor of kind " +
                               to_string(want));
        }
      }
      return make_direction(kind, theta, anchor ? &*anchor : nullptr, Rng::derive(sc_.seed, i));
    };
    const Dataset task_test = corpus_part(sc_.data, "task_test.jsonl");
    const Dataset harmful_test = corpus_part(sc_.data, "harmful_test.jsonl");

    for (std::size_t n = 0; n < outs.size(); ++n) {
      std::vector<Direction> dirs;
      if (sc_.dirs > 1) {
        dirs.push_back(direction(kinds[0], n));
      } else {
        for (std::size_t i = 0; i < kinds.size(); ++i) dirs.push_back(direction(kinds[i], i));
      }
      if (dirs.size() == 2 && dirs[1].kind == DirectionKind::Random) orthogonalize_against(dirs[1], dirs[0]);
      const LandscapeGrid g =
          scan(theta, dirs[0], dirs.size() == 2 ? &dirs[1] : nullptr, opts, task_test, harmful_test);

      nlohmann::ordered_json meta;
      meta["model"] = sc_.model;
      meta["data"] = sc_.data;
      meta["anchors"] = sc_.anchors;
      for (const auto& d : dirs) meta["dirs"].push_back(to_string(d.kind));
      meta["a"] = sc_.a;
      meta["steps"] = sc_.steps;
      meta["seed"] = sc_.seed;
      meta["direction_index"] = sc_.dirs > 1 ? n : 0;
      for (const auto& d : dirs) meta["scales"].push_back(d.scales);
      meta["base_safety"] = g.base_safety;
      write_file_atomic(outs[n], g.to_csv());
      write_sidecar(outs[n], meta);
    }
  }

  void add_epl() {
    auto* s = sub("epl", "Effective perturbation length of a 1D grid", [this] {
      if (ep_.out) check_output(*ep_.out, {ep_.grid});
      const DirectionKind kind = parse_direction_kind(ep_.dir);
      const LandscapeGrid g = LandscapeGrid::from_csv(read_text_file(ep_.grid));
      std::optional<double> tau;
      if (ep_tau_->count()) tau = ep_.tau;
      write_text(ep_.out, epl(g, kind, tau).to_json(), out_);
    });
    require(s->add_option("--data", ep_.grid, "grid CSV written by scan"));
    s->add_option("--dir", ep_.dir, "direction kind recorded in the result")->capture_default_str();
    ep_tau_ = s->add_option("--tau", ep_.tau, "safety threshold (default 0.9 * S at the centre)");
    s->add_option("--out", ep_.out, "JSON result (stdout if omitted)");
  }

  void add_sweep() {
    const TrainConfig defaults;
    sw_.flags.method = "asft";
    sw_.flags.epochs = defaults.epochs;
    sw_.lr = fmt(defaults.lr);
    sw_.workers = std::max(1u, std::thread::hardware_concurrency());
    auto* s = sub("sweep", "Cartesian fine-tuning runs over lambda, lr and seed lists", [this] { run_sweep(); });
    require(s->add_option("--aligned", sw_.model, "starting checkpoint"));
    s->add_option("--anchor", sw_.anchor, "anchor checkpoint");
    require(s->add_option("--data", sw_.data, "corpus directory"));
    s->add_option("--method", sw_.flags.method)->capture_default_str();
    s->add_option("--lambda", sw_.lambda, "comma-separated lambda values")->capture_default_str();
    s->add_option("--lr", sw_.lr, "comma-separated learning rates")->capture_default_str();
    s->add_option("--seeds", sw_.seeds, "seed list, e.g. 1-5 or 1,3,7")->capture_default_str();
    s->add_option("--workers", sw_.workers)->capture_default_str();
    add_train_flags(s, sw_.flags, true);
    require(s->add_option("--out", sw_.out, "manifest CSV"));
  }

  void run_sweep() {
    check_output(sw_.out, {sw_.model, sw_.anchor, sw_.data});
    const auto lambdas = parse_double_list("--lambda", sw_.lambda);
    const auto lrs = parse_double_list("--lr", sw_.lr);
    const auto seeds = parse_seed_list(sw_.seeds);
    if (sw_.workers < 1) throw ParameterError("--workers must be >= 1");

    struct Run {
      double lambda, lr;
      std::uint64_t seed;
      TrainConfig cfg;
      SafetyReport report;
    };
    std::vector<Run> runs;
    for (double lambda : lambdas) {
      for (double lr : lrs) {
        for (std::uint64_t seed : seeds) {
          TrainFlags f = sw_.flags;
          f.lambda = lambda;
          f.lr = lr;
          runs.push_back(Run{lambda, lr, seed, finetune_train_config(f, seed), {}});
        }
      }
    }
    const Method method = runs.front().cfg.method;
    std::optional<AlignmentAnchor> anchor;
    if (anchor_kind_for(method)) {
      if (sw_.anchor.empty()) throw ParameterError(std::string("--method ") + to_string(method) + " requires --anchor");
      anchor = AlignmentAnchor::from_checkpoint(load(sw_.anchor));
    }
    const Checkpoint start = load(sw_.model);
    const Corpus corpus = load_corpus(sw_.data);

    std::vector<std::exception_ptr> errors(runs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < runs.size(); i = next.fetch_add(1)) {
        try {
          Run& r = runs[i];
          const Dataset data = mix_poison(corpus.task_train, corpus.harmful_pool, r.cfg.poison_ratio,
                                          r.cfg.n_samples, Rng::derive(r.seed, 100));
          TrainResult t = train(start, anchor ? &*anchor : nullptr, data, r.cfg,
                                EvalSets{corpus.task_test, corpus.harmful_test});
          r.report = *t.log.final_report;
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const std::size_t workers = std::min(sw_.workers, runs.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    std::string csv = "method,lambda,lr,seed,hs,fa\n";
    for (const auto& r : runs) {
      csv += std::string(to_string(method)) + "," + fmt(r.lambda) + "," + fmt(r.lr) + "," + std::to_string(r.seed) +
             "," + fmt(r.report.hs) + "," + fmt(r.report.fa) + "\n";
    }
    nlohmann::ordered_json meta;
    meta["model"] = sw_.model;
    meta["anchor"] = sw_.anchor;
    meta["data"] = sw_.data;
    meta["runs"] = runs.size();
    meta["train"] = runs.front().cfg.to_map();
    meta["train"].erase("lambda");
    meta["train"].erase("lr");
    meta["train"].erase("seed");
    write_file_atomic(sw_.out, csv);
    write_sidecar(sw_.out, meta);
  }

  void save_model(TrainResult& r, const std::string& kind, const std::string& path,
                  const std::map<std::string, std::string>& extra) {
    Checkpoint ckpt = MlpModel::from_checkpoint(r.final).to_checkpoint(kind);
    ckpt.meta.creation_seed = r.final.meta.creation_seed;
    ckpt.meta.attributes = r.final.meta.attributes;
    for (const auto& [k, v] : extra) ckpt.meta.attributes[k] = v;
    save(ckpt, path);
    write_file_atomic(path + ".log.csv", r.log.to_csv());
  }

  std::ostream& out_;
  CLI::App app_;
  std::vector<std::pair<CLI::App*, std::function<void()>>> actions_;

  struct {
    std::uint64_t seed = 0;
    std::string out;
  } gd_;
  struct {
    std::string data, out;
    std::uint64_t seed = 0;
    double lr = 0.0;
    std::size_t epochs = 0, batch_size = 8;
  } tb_;
  struct {
    std::string base, data, out;
    std::uint64_t seed = 0;
    double lr = 0.0;
    std::size_t epochs = 0, batch_size = 8, n = 0;
  } al_;
  CLI::Option* n_opt_ = nullptr;
  struct {
    std::string dir = "aligned", aligned, base, data, mode, out;
    std::size_t k = 0, steps = 0, batch_size = 0;
    double lr = 0.0;
    std::uint64_t seed = 0;
  } df_;
  CLI::Option *df_base_ = nullptr, *df_data_ = nullptr, *df_mode_ = nullptr, *df_k_ = nullptr,
              *df_steps_ = nullptr, *df_lr_ = nullptr, *df_seed_ = nullptr, *df_batch_ = nullptr;
  TrainFlags ft_;
  std::string ft_aligned_, ft_out_;
  std::vector<std::string> ft_anchor_, ft_data_;
  std::uint64_t ft_seed_ = 0;
  CLI::Option *p_opt_ = nullptr, *n_opt_ft_ = nullptr;
  struct {
    std::string model, data;
    std::optional<std::string> out;
  } ev_;
  struct {
    std::string model, data, out, dir = "aligned";
    std::vector<std::string> anchors;
    double a = 1.0;
    std::size_t steps = 41, workers = 1, dirs = 1;
    std::uint64_t seed = 0;
  } sc_;
  struct {
    std::string grid, dir = "aligned";
    double tau = 0.0;
    std::optional<std::string> out;
  } ep_;
  CLI::Option* ep_tau_ = nullptr;
  struct {
    std::string model, anchor, data, out, lambda = "1", lr, seeds = "0";
    std::size_t workers = 1;
    TrainFlags flags;
  } sw_;
};

void report(std::ostream& err, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    Cli cli(out);
    std::vector<std::string> argv_store = apply_config(args);
    argv_store.insert(argv_store.begin(), "asft");
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
      cli.app().parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << cli.app().help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << cli.app().help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      report(err, "usage", e.what());
      return 2;
    }
    cli.run();
    return 0;
  } catch (const Error& e) {
    report(err, e.kind(), e.what());
  } catch (const std::exception& e) {
    report(err, "internal", e.what());
  }
  return 1;
}

}  // namespace asft
