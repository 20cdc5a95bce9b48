#include <doctest.h>

#include <cmath>

#include "asft/anchor.hpp"
#include "asft/errors.hpp"

using namespace asft;

namespace {

Tensor e(std::size_t m, std::size_t n, std::size_t r, std::size_t c, double v = 1.0) {
  Tensor t = Tensor::zeros(m, n);
  t(r, c) = v;
  return t;
}

AlignmentAnchor single_layer(const Tensor& v, ProjectionMode mode = ProjectionMode::FroRank1, std::size_t k = 8) {
  return AlignmentAnchor::from_directions({{"W1", v}}, AnchorKind::Aligned, mode, k);
}

LayerTensors random_layers(Rng& rng, double stddev = 1.0) {
  return {{"W1", random_normal({6, 5}, rng, stddev)}, {"W2", random_normal({3, 6}, rng, stddev)}};
}

double sq_norm(const LayerTensors& t) {
  double s = 0.0;
  for (const auto& [name, x] : t) s += frobenius_dot(x, x);
  return s;
}

}  // namespace

TEST_SUITE("anchor") {
  TEST_CASE("single-entry alignment diff") {
    Rng rng(1);
    MlpModel base = MlpModel::init({}, rng);
    MlpModel aligned = base;
    aligned.w1(0, 0) += 1.0;
    const AlignmentAnchor a = AlignmentAnchor::build(aligned.to_checkpoint(), base.to_checkpoint());
    CHECK(a.layer("W1").norm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(a.layer("W1").direction(0, 0) - 1.0) <= 1e-12);
    CHECK(max_abs(a.layer("W2").direction) == 0.0);
    CHECK(a.kind() == AnchorKind::Aligned);
  }

  TEST_CASE("identical checkpoints are a degenerate anchor") {
    Rng rng(2);
    const MlpModel base = MlpModel::init({}, rng);
    CHECK_THROWS_AS(AlignmentAnchor::build(base.to_checkpoint(), base.to_checkpoint()), DegenerateAnchorError);
  }

  TEST_CASE("anchor directions equal the checkpoint diff") {
    Rng rng(3);
    const MlpModel base = MlpModel::init({}, rng), aligned = MlpModel::init({}, rng);
    const Checkpoint d = diff(aligned.to_checkpoint(), base.to_checkpoint());
    for (auto mode : {ProjectionMode::FroRank1, ProjectionMode::ColSpace}) {
      const AlignmentAnchor a = AlignmentAnchor::build(aligned.to_checkpoint(), base.to_checkpoint(), mode);
      for (const auto& layer : kWeightLayers) {
        CHECK(a.layer(layer).direction.bit_equal(d.at(layer)));
        CHECK(std::abs(a.layer(layer).norm - frobenius_norm(d.at(layer))) <= 1e-12);
      }
      CHECK(a.layers().size() == 2);
    }
  }

  TEST_CASE("colspace bases are orthonormal") {
    Rng rng(4);
    const AlignmentAnchor a =
        AlignmentAnchor::from_directions(random_layers(rng), AnchorKind::Aligned, ProjectionMode::ColSpace, 3);
    for (const auto& [name, layer] : a.layers()) {
      const Tensor ctc = matmul(transpose(layer.basis), layer.basis);
      CHECK(max_abs(ctc - Tensor::identity(layer.basis.cols())) <= 1e-6);
    }
  }

  TEST_CASE("decompose examples") {
    const AlignmentAnchor a = single_layer(e(2, 2, 0, 0));
    const auto along = a.decompose({{"W1", e(2, 2, 0, 0, 3.0)}});
    CHECK(max_abs(along.at("W1").proj - e(2, 2, 0, 0, 3.0)) <= 1e-15);
    CHECK(max_abs(along.at("W1").orth) <= 1e-15);
    const auto across = a.decompose({{"W1", e(2, 2, 0, 1, 2.0)}});
    CHECK(max_abs(across.at("W1").proj) <= 1e-15);
    CHECK(max_abs(across.at("W1").orth - e(2, 2, 0, 1, 2.0)) <= 1e-15);

    const AlignmentAnchor diag = single_layer(Tensor::identity(2) * (1.0 / std::sqrt(2.0)));
    const auto d = diag.decompose({{"W1", Tensor::matrix({{1, 1}, {1, 1}})}});
    CHECK(max_abs(d.at("W1").proj - Tensor::identity(2)) <= 1e-12);
    CHECK(max_abs(d.at("W1").orth - Tensor::matrix({{0, 1}, {1, 0}})) <= 1e-12);
  }

  TEST_CASE("penalty examples") {
    const AlignmentAnchor a = single_layer(e(2, 2, 0, 0));
    CHECK(a.penalty({{"W1", e(2, 2, 0, 0)}}) <= 1e-30);
    CHECK(a.penalty({{"W1", e(2, 2, 0, 1, 2.0)}}) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(a.penalty({{"W1", Tensor::zeros(2, 2)}}) == 0.0);
    const LayerTensors g = a.penalty_grad({{"W1", e(2, 2, 0, 1, 2.0)}});
    CHECK(max_abs(g.at("W1") - e(2, 2, 0, 1, 4.0)) <= 1e-15);
    CHECK(max_abs(a.penalty_grad({{"W1", e(2, 2, 0, 0, 5.0)}}).at("W1")) <= 1e-15);
  }

  TEST_CASE("penalty gradient matches central differences") {
    for (auto mode : {ProjectionMode::FroRank1, ProjectionMode::ColSpace}) {
      Rng rng(5);
      const AlignmentAnchor a = AlignmentAnchor::from_directions(random_layers(rng), AnchorKind::Aligned, mode, 2);
      LayerTensors x = random_layers(rng);
      const LayerTensors g = a.penalty_grad(x);
      const double h = 1e-5;
      for (auto& [name, t] : x) {
        for (std::size_t i = 0; i < t.size(); ++i) {
          const double orig = t[i];
          t[i] = orig + h;
          const double up = a.penalty(x);
          t[i] = orig - h;
          const double down = a.penalty(x);
          t[i] = orig;
          const double numeric = (up - down) / (2 * h);
          const double err = std::abs(numeric - g.at(name)[i]) / std::max({std::abs(numeric), std::abs(g.at(name)[i]), 1e-6});
          CHECK(err <= 1e-6);
        }
      }
    }
  }

  TEST_CASE("projection algebra on random pairs") {
    for (auto mode : {ProjectionMode::FroRank1, ProjectionMode::ColSpace}) {
      for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(100 + seed);
        const AlignmentAnchor a =
            AlignmentAnchor::from_directions(random_layers(rng), AnchorKind::Aligned, mode, 1 + rng.below(3));
        const LayerTensors x = random_layers(rng), y = random_layers(rng);
        const double scale = sq_norm(x);
        const Decomposition dx = a.decompose(x);
        for (const auto& [name, part] : dx) {
          CHECK(frobenius_norm(part.proj + part.orth - x.at(name)) <= 1e-9 * frobenius_norm(x.at(name)));
          CHECK(std::abs(frobenius_dot(part.proj, part.orth)) <= 1e-9 * frobenius_dot(x.at(name), x.at(name)));
          CHECK(frobenius_norm(a.project(name, part.proj) - part.proj) <= 1e-9 * frobenius_norm(x.at(name)));
          const double pxy = frobenius_dot(a.project(name, x.at(name)), y.at(name));
          const double xpy = frobenius_dot(x.at(name), a.project(name, y.at(name)));
          CHECK(std::abs(pxy - xpy) <= 1e-9 * frobenius_norm(x.at(name)) * frobenius_norm(y.at(name)));
        }
        CHECK(std::abs(a.penalty(x) + a.alt_penalty(x) - scale) <= 1e-9 * scale);
      }
    }
  }

  TEST_CASE("colspace with full rank keeps every update in basin") {
    Rng rng(6);
    const AlignmentAnchor a =
        AlignmentAnchor::from_directions({{"W2", random_normal({3, 6}, rng)}}, AnchorKind::Aligned, ProjectionMode::ColSpace, 3);
    const LayerTensors x = {{"W2", random_normal({3, 6}, rng)}};
    CHECK(a.penalty(x) <= 1e-20 * sq_norm(x) + 1e-24);
  }

  TEST_CASE("rank-one direction makes both modes agree") {
    Rng rng(7);
    const Tensor u = random_normal({4, 1}, rng), v = random_normal({1, 5}, rng);
    const Tensor dir = matmul(u, v);
    const AlignmentAnchor fro = single_layer(dir), col = single_layer(dir, ProjectionMode::ColSpace, 1);
    const Tensor x = dir * 2.0;
    CHECK(frobenius_norm(fro.project("W1", x) - col.project("W1", x)) <= 1e-9 * frobenius_norm(x));
  }

  TEST_CASE("zero and skipped layers") {
    const AlignmentAnchor a = AlignmentAnchor::from_directions(
        {{"W1", Tensor::zeros(2, 2)}, {"W2", e(2, 2, 1, 1)}}, AnchorKind::Aligned, ProjectionMode::FroRank1);
    const Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(max_abs(a.project("W1", x)) == 0.0);
    CHECK(a.penalty({{"W1", x}, {"W2", Tensor::zeros(2, 2)}}) == doctest::Approx(30.0));
    AlignmentAnchor skipped = a;
    skipped.set_skip("W1", true);
    CHECK(skipped.project("W1", x).bit_equal(x));
    CHECK(skipped.penalty({{"W1", x}, {"W2", Tensor::zeros(2, 2)}}) == 0.0);
  }

  TEST_CASE("shape mismatch is an error") {
    const AlignmentAnchor a = single_layer(e(2, 2, 0, 0));
    CHECK_THROWS_AS(a.penalty({{"W1", Tensor::zeros(3, 2)}}), ShapeError);
  }

  TEST_CASE("alt penalty examples") {
    AlignmentAnchor harm = AlignmentAnchor::from_directions({{"W1", e(2, 2, 0, 0)}}, AnchorKind::Harm, ProjectionMode::FroRank1);
    CHECK(harm.alt_penalty({{"W1", e(2, 2, 1, 0, 3.0)}}) == 0.0);
    const Tensor x = e(2, 2, 0, 0, 1.5);
    CHECK(harm.alt_penalty({{"W1", x}}) == doctest::Approx(frobenius_dot(x, x)).epsilon(1e-14));
    CHECK(max_abs(harm.alt_penalty_grad({{"W1", x}}).at("W1") - 2.0 * x) <= 1e-14);
  }

  TEST_CASE("anchor checkpoint round trip") {
    Rng rng(8);
    AlignmentAnchor a = AlignmentAnchor::from_directions(random_layers(rng), AnchorKind::Harm, ProjectionMode::ColSpace, 2);
    a.set_skip("W1", true);
    const Checkpoint c = a.to_checkpoint();
    const AlignmentAnchor b = AlignmentAnchor::from_checkpoint(c);
    CHECK(b.kind() == AnchorKind::Harm);
    CHECK(b.mode() == ProjectionMode::ColSpace);
    CHECK(b.k() == 2);
    CHECK(b.layer("W1").skip);
    const LayerTensors x = random_layers(rng);
    CHECK(b.penalty(x) == a.penalty(x));
  }

  TEST_CASE("harm estimate rejects no movement") {
    Rng rng(9);
    const MlpModel m = MlpModel::init({}, rng);
    Dataset harmful;
    harmful.examples.push_back({std::vector<double>(16, 1.0), 3, true});
    HarmEstimateConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(estimate_harmful_direction(m, nullptr, harmful, cfg), ParameterError);
    cfg.steps = 1;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(estimate_harmful_direction(m, nullptr, harmful, cfg), DegenerateAnchorError);
  }

  TEST_CASE("harm estimate concentrates on the complied class row") {
    // Many output classes keep each off-target softmax mass small, so the
    // class-3 row of the W2 update dominates.
    Rng rng(10);
    const MlpModel m = MlpModel::init({16, 32, 40}, rng);
    Dataset harmful;
    for (int i = 0; i < 64; ++i) {
      Example ex;
      for (int j = 0; j < 16; ++j) ex.x.push_back(rng.normal());
      ex.y = 3;
      ex.harmful = true;
      harmful.examples.push_back(ex);
    }
    HarmEstimateConfig cfg;
    cfg.steps = 5;
    cfg.seed = 11;
    const AlignmentAnchor a = estimate_harmful_direction(m, nullptr, harmful, cfg);
    const Tensor& d = a.layer("W2").direction;
    auto row_norm = [&](std::size_t r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d.cols(); ++c) s += d(r, c) * d(r, c);
      return std::sqrt(s);
    };
    for (std::size_t r = 0; r < d.rows(); ++r)
      if (r != 3) CHECK(row_norm(3) > 10.0 * row_norm(r));
  }

  TEST_CASE("harm estimate is deterministic") {
    Rng rng(12);
    const MlpModel m = MlpModel::init({}, rng);
    Dataset harmful;
    for (int i = 0; i < 20; ++i) {
      Example ex;
      for (int j = 0; j < 16; ++j) ex.x.push_back(rng.normal());
      ex.y = 3;
      harmful.examples.push_back(ex);
    }
    LoraAdapter tmpl = LoraAdapter::init(m, {"W2"}, 8, 8.0, rng);
    for (const LoraAdapter* ad : std::vector<const LoraAdapter*>{nullptr, &tmpl}) {
      HarmEstimateConfig cfg;
      cfg.seed = 3;
      const AlignmentAnchor a = estimate_harmful_direction(m, ad, harmful, cfg);
      const AlignmentAnchor b = estimate_harmful_direction(m, ad, harmful, cfg);
      CHECK(a.to_checkpoint().bit_equal(b.to_checkpoint()));
    }
  }
}
