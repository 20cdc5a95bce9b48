#include "asft/landscape.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "asft/errors.hpp"

namespace asft {

const char* to_string(DirectionKind kind) {
  switch (kind) {
    case DirectionKind::Aligned: return "aligned";
    case DirectionKind::Harm: return "harm";
    case DirectionKind::Random: return "random";
  }
  return "?";
}

DirectionKind parse_direction_kind(const std::string& text) {
  if (text == "aligned") return DirectionKind::Aligned;
  if (text == "harm") return DirectionKind::Harm;
  if (text == "random") return DirectionKind::Random;
  throw ParameterError("unknown direction kind '" + text + "' (expected aligned, harm or random)");
}

void normalize_layerwise(Direction& direction, const MlpModel& theta) {
  for (auto& [name, d] : direction.layers) {
    const double target = frobenius_norm(theta.weight(name));
    if (target == 0.0) throw NormalizationError("model layer '" + name + "' has zero norm");
    const double current = frobenius_norm(d);
    const double scale = current == 0.0 ? 0.0 : target / current;
    if (current != 0.0) d *= scale;
    direction.scales[name] = scale;
  }
}

Direction make_direction(DirectionKind kind, const MlpModel& theta, const AlignmentAnchor* anchor,
                         std::uint64_t seed) {
  Direction d;
  d.kind = kind;
  if (kind == DirectionKind::Random) {
    Rng rng(seed);
    for (const auto& name : kWeightLayers) d.layers[name] = random_normal(theta.weight(name).dims(), rng);
  } else {
    const AnchorKind wanted = kind == DirectionKind::Aligned ? AnchorKind::Aligned : AnchorKind::Harm;
    if (!anchor || anchor->kind() != wanted) {
      throw ParameterError(std::string("direction kind ") + to_string(kind) + " requires a " +
                           asft::to_string(wanted) + " anchor");
    }
    for (const auto& [name, layer] : anchor->layers()) {
      if (!layer.direction.same_shape(theta.weight(name))) {
        throw ShapeError("anchor layer '" + name + "' does not match the model");
      }
      d.layers[name] = layer.direction;
    }
  }
  normalize_layerwise(d, theta);
  return d;
}

double flattened_dot(const Direction& a, const Direction& b) {
  double acc = 0.0;
  for (const auto& [name, t] : a.layers) {
    auto it = b.layers.find(name);
    if (it == b.layers.end()) throw ShapeError("directions cover different layers");
    acc += frobenius_dot(t, it->second);
  }
  return acc;
}

void orthogonalize_against(Direction& d, const Direction& primary) {
  const double pp = flattened_dot(primary, primary);
  if (pp == 0.0) return;
  const double coeff = flattened_dot(d, primary) / pp;
  for (auto& [name, t] : d.layers) t.add_scaled(primary.layers.at(name), -coeff);
}

MlpModel perturb(const MlpModel& theta, const Direction& d1, double alpha, const Direction* d2, double beta) {
  MlpModel m = theta;
  for (const auto& [name, t] : d1.layers) m.weight(name).add_scaled(t, alpha);
  if (d2) {
    for (const auto& [name, t] : d2->layers) m.weight(name).add_scaled(t, beta);
  }
  return m;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string LandscapeGrid::to_csv() const {
  std::string out = "alpha,beta,safety,hs,fa\n";
  for (std::size_t i = 0; i < axis1.size(); ++i) {
    for (std::size_t j = 0; j < cols(); ++j) {
      const std::size_t at = i * cols() + j;
      out += fmt(axis1[i]) + "," + (is_1d() ? std::string{} : fmt(axis2[j])) + "," + fmt(safety[at]) + "," +
             fmt(hs[at]) + "," + fmt(fa[at]) + "\n";
    }
  }
  return out;
}

LandscapeGrid LandscapeGrid::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  if (!std::getline(in, line) || line != "alpha,beta,safety,hs,fa") {
    throw FormatError(0, "grid CSV must start with header alpha,beta,safety,hs,fa");
  }
  offset += line.size() + 1;
  struct Row {
    double alpha;
    std::optional<double> beta;
    double s, hs, fa;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError(at, "grid CSV row must have 5 fields");
    try {
      Row r{std::stod(cells[0]), std::nullopt, std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])};
      if (!cells[1].empty()) r.beta = std::stod(cells[1]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw FormatError(at, "grid CSV row has a non-numeric field");
    }
  }
  if (rows.empty()) throw FormatError(offset, "grid CSV has no rows");

  LandscapeGrid g;
  const bool one_d = !rows.front().beta.has_value();
  for (const auto& r : rows) {
    if (r.beta.has_value() == one_d) throw FormatError(0, "grid CSV mixes 1D and 2D rows");
    if (g.axis1.empty() || g.axis1.back() != r.alpha) g.axis1.push_back(r.alpha);
    if (!one_d && g.axis1.size() == 1) g.axis2.push_back(*r.beta);
    g.safety.push_back(r.s);
    g.hs.push_back(r.hs);
    g.fa.push_back(r.fa);
  }
  if (g.safety.size() != g.axis1.size() * g.cols()) throw FormatError(0, "grid CSV is not rectangular");
  const std::size_t ci = g.axis1.size() / 2;
  const std::size_t cj = g.cols() / 2;
  g.base_safety = g.safety_at(ci, cj);
  return g;
}

std::vector<double> symmetric_axis(double a, std::size_t steps) {
  if (!(a > 0.0)) throw ParameterError("half-range a must be > 0");
  if (steps < 3 || steps % 2 == 0) throw ParameterError("steps must be an odd count >= 3");
  std::vector<double> axis(steps);
  const double half = static_cast<double>(steps - 1) / 2.0;
  for (std::size_t i = 0; i < steps; ++i) axis[i] = a * (static_cast<double>(i) - half) / half;
  return axis;
}

LandscapeGrid scan(const MlpModel& theta, const Direction& d1, const Direction* d2, const ScanOptions& options,
                   const Dataset& task_test, const Dataset& harmful_test) {
  LandscapeGrid g;
  g.axis1 = symmetric_axis(options.a, options.steps);
  if (d2) g.axis2 = g.axis1;
  const std::size_t n = g.axis1.size() * g.cols();
  g.safety.assign(n, 0.0);
  g.hs.assign(n, 0.0);
  g.fa.assign(n, 0.0);

  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t at = next.fetch_add(1); at < n; at = next.fetch_add(1)) {
      const double alpha = g.axis1[at / g.cols()];
      const double beta = d2 ? g.axis2[at % g.cols()] : 0.0;
      try {
        const MlpModel m = perturb(theta, d1, alpha, d2, beta);
        const SafetyReport r = evaluate(m, nullptr, task_test, harmful_test);
        g.safety[at] = r.safety();
        g.hs[at] = r.hs;
        g.fa[at] = r.fa;
      } catch (const std::exception& e) {
        errors[at] = std::make_exception_ptr(
            NumericError("evaluation failed at (alpha=" + fmt(alpha) + ", beta=" + fmt(beta) + "): " + e.what()));
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  g.base_safety = g.safety_at(g.axis1.size() / 2, g.cols() / 2);
  return g;
}

std::string EplResult::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["epl"] = epl;
  j["tau"] = tau;
  j["a"] = a;
  j["step"] = step;
  return j.dump(2) + "\n";
}

EplResult epl(const LandscapeGrid& grid, DirectionKind kind, std::optional<double> tau) {
  if (!grid.is_1d()) throw ParameterError("EPL is defined on a 1D grid");
  const std::size_t n = grid.axis1.size();
  if (n < 3 || n % 2 == 0) throw ParameterError("EPL grid must have an odd number (>= 3) of points");
  const std::size_t c = n / 2;
  if (grid.axis1[c] != 0.0) throw ParameterError("EPL grid must contain alpha = 0 at its centre");

  EplResult r;
  r.kind = kind;
  r.tau = tau.value_or(kDefaultTauFraction * grid.safety[c]);
  r.a = grid.axis1.back();
  r.step = grid.axis1[c + 1] - grid.axis1[c];
  if (grid.safety[c] < r.tau) {
    throw UndefinedEplError("safety at the unperturbed model (" + fmt(grid.safety[c]) + ") is below tau (" +
                            fmt(r.tau) + ")");
  }
  for (std::size_t j = 1; j <= c; ++j) {
    if (grid.safety[c + j] < r.tau || grid.safety[c - j] < r.tau) break;
    r.epl = std::max(std::abs(grid.axis1[c + j]), std::abs(grid.axis1[c - j]));
  }
  return r;
}

}  // namespace asft
