#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "asft/anchor.hpp"
#include "asft/model.hpp"
#include "asft/safetyeval.hpp"

namespace asft {

enum class DirectionKind { Aligned, Harm, Random };

const char* to_string(DirectionKind kind);
DirectionKind parse_direction_kind(const std::string& text);

// A perturbation direction over the model's weight layers (biases are not
// perturbed).
struct Direction {
  DirectionKind kind = DirectionKind::Random;
  LayerTensors layers;
  // Factor applied to each layer by the last normalization.
  std::map<std::string, double> scales;
};

// Rescales every layer so ||d_l||_F = ||theta_l||_F. A zero direction layer
// stays zero (scale 0). Throws NormalizationError on a zero-norm model layer.
void normalize_layerwise(Direction& direction, const MlpModel& theta);

// Aligned and Harm copy the anchor's layers; Random draws N(0, 1) entries from
// `seed`. The result is layer-wise normalized against `theta`.
Direction make_direction(DirectionKind kind, const MlpModel& theta, const AlignmentAnchor* anchor,
                         std::uint64_t seed = 0);

// Dot product over all layers flattened into one vector.
double flattened_dot(const Direction& a, const Direction& b);

// Removes the component of `d` along `primary` in the joint flattened space
// (one coefficient shared by every layer).
void orthogonalize_against(Direction& d, const Direction& primary);

// theta + alpha * d1 (+ beta * d2) on the weight layers.
MlpModel perturb(const MlpModel& theta, const Direction& d1, double alpha, const Direction* d2 = nullptr,
                 double beta = 0.0);

struct LandscapeGrid {
  std::vector<double> axis1;
  std::vector<double> axis2;  // empty for a 1D scan
  // Row-major |axis1| x max(1, |axis2|).
  std::vector<double> safety;
  std::vector<double> hs;
  std::vector<double> fa;
  double base_safety = 0.0;

  bool is_1d() const noexcept { return axis2.empty(); }
  std::size_t cols() const noexcept { return axis2.empty() ? 1 : axis2.size(); }
  double safety_at(std::size_t i, std::size_t j = 0) const { return safety[i * cols() + j]; }

  // Header alpha,beta,safety,hs,fa; beta left blank for 1D grids.
  std::string to_csv() const;
  static LandscapeGrid from_csv(const std::string& text);
};

struct ScanOptions {
  double a = 1.0;
  std::size_t steps = 41;
  std::size_t workers = 1;
};

// Symmetric grid of `steps` points on [-a, a] with alpha = 0 exactly at the centre.
std::vector<double> symmetric_axis(double a, std::size_t steps);

LandscapeGrid scan(const MlpModel& theta, const Direction& d1, const Direction* d2,
                   const ScanOptions& options, const Dataset& task_test, const Dataset& harmful_test);

struct EplResult {
  DirectionKind kind = DirectionKind::Aligned;
  double epl = 0.0;
  double tau = 0.0;
  double a = 0.0;
  double step = 0.0;

  std::string to_json() const;
};

inline constexpr double kDefaultTauFraction = 0.9;

// Largest grid radius r such that S >= tau at every grid alpha with |alpha| <= r.
// `tau` defaults to 0.9 * S(theta_0). Throws UndefinedEplError if S(theta_0) < tau.
EplResult epl(const LandscapeGrid& grid, DirectionKind kind, std::optional<double> tau = std::nullopt);

}  // namespace asft
