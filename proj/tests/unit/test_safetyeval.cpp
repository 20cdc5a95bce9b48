#include <doctest.h>

#include <algorithm>

#include "../support.hpp"
#include "asft/errors.hpp"
#include "asft/safetyeval.hpp"

using namespace asft;

namespace {

CorpusParams big_params(std::uint64_t seed) {
  CorpusParams p;
  p.seed = seed;
  p.n_task_train = 5000;
  p.n_refusal = 2500;
  p.n_harmful_pool = 2500;
  return p;
}

MlpModel random_model(std::uint64_t seed) {
  Rng rng(seed);
  return MlpModel::init({}, rng);
}

}  // namespace

TEST_SUITE("safetyeval") {
  TEST_CASE("harm marker separates benign from harmful") {
    const Corpus c = gen_corpus(big_params(1));
    std::size_t seen = 0;
    for (const Dataset* d : {&c.task_train, &c.refusal, &c.harmful_pool, &c.task_test, &c.harmful_test}) {
      for (const auto& e : d->examples) {
        ++seen;
        if (e.harmful) {
          CHECK(e.x[0] >= 2.0);
          CHECK((e.y == kRefuse || e.y == kComply));
        } else {
          CHECK(e.x[0] < 1.0);
          CHECK((e.y == kTaskA || e.y == kTaskB));
        }
        CHECK(e.x.size() == 16);
      }
    }
    CHECK(seen >= 10000);
  }

  TEST_CASE("set roles and labels") {
    const Corpus c = gen_corpus(CorpusParams{});
    for (const auto& e : c.refusal.examples) CHECK((e.harmful && e.y == kRefuse));
    for (const auto& e : c.harmful_pool.examples) CHECK((e.harmful && e.y == kComply));
    for (const auto& e : c.harmful_test.examples) CHECK(e.harmful);
    for (const auto& e : c.task_test.examples) CHECK_FALSE(e.harmful);
    CHECK(c.task_train.size() == 2000);
    CHECK(c.harmful_test.size() == 500);
  }

  TEST_CASE("benign label balance") {
    const Corpus c = gen_corpus(big_params(2));
    std::size_t ones = 0;
    for (const auto& e : c.task_train.examples) ones += e.y == kTaskB ? 1 : 0;
    const double frac = static_cast<double>(ones) / static_cast<double>(c.task_train.size());
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
  }

  TEST_CASE("corpus generation is deterministic and survives disk") {
    const Corpus a = gen_corpus(CorpusParams{3}), b = gen_corpus(CorpusParams{3});
    CHECK(to_jsonl(a.task_train) == to_jsonl(b.task_train));
    CHECK(to_jsonl(a.harmful_test) == to_jsonl(b.harmful_test));
    CHECK(to_jsonl(gen_corpus(CorpusParams{4}).task_train) != to_jsonl(a.task_train));
    asft::testing::TempDir dir;
    save_corpus(a, dir.path());
    const Corpus back = load_corpus(dir.path());
    CHECK(back.task_train.examples == a.task_train.examples);
    CHECK(back.refusal.examples == a.refusal.examples);
  }

  TEST_CASE("jsonl rejects malformed lines") {
    CHECK_THROWS_AS(from_jsonl("{\"x\":[1.0],\"y\":0}\nnot json\n"), FormatError);
  }

  TEST_CASE("judge examples") {
    Example harmful;
    harmful.harmful = true;
    const std::vector<double> refuse = {0, 0, 5, 1}, comply = {0, 0, 1, 5}, tie = {0, 0, 3, 3};
    CHECK_FALSE(judge(refuse, harmful));
    CHECK(judge(comply, harmful));
    CHECK(argmax(tie) == 2);
    CHECK_FALSE(judge(tie, harmful));
  }

  TEST_CASE("constant refuser") {
    MlpModel m = MlpModel::zeros();
    m.b2[kRefuse] = 1.0;
    const Corpus c = gen_corpus(CorpusParams{5});
    const SafetyReport r = evaluate(m, nullptr, c.task_test, c.harmful_test);
    CHECK(r.hs == 0.0);
    CHECK(r.fa == 0.0);
    CHECK(r.safety() == 1.0);
    CHECK(r.n_harmful_eval == c.harmful_test.size());
  }

  TEST_CASE("scores equal a brute-force recount") {
    const MlpModel m = random_model(6);
    const Corpus c = gen_corpus(CorpusParams{6});
    std::vector<std::size_t> task_pred, harm_pred;
    for (const auto& e : c.task_test.examples) {
      const Tensor l = forward(m, nullptr, e.x);
      task_pred.push_back(static_cast<std::size_t>(std::max_element(l.data().begin(), l.data().end()) - l.data().begin()));
    }
    for (const auto& e : c.harmful_test.examples) {
      const Tensor l = forward(m, nullptr, e.x);
      harm_pred.push_back(static_cast<std::size_t>(std::max_element(l.data().begin(), l.data().end()) - l.data().begin()));
    }
    std::size_t correct = 0, unsafe = 0;
    for (std::size_t i = 0; i < task_pred.size(); ++i) correct += task_pred[i] == static_cast<std::size_t>(c.task_test.examples[i].y);
    for (std::size_t p : harm_pred) unsafe += p != 2;
    const SafetyReport r = evaluate(m, nullptr, c.task_test, c.harmful_test);
    CHECK(r.n_correct == correct);
    CHECK(r.n_unsafe == unsafe);
    CHECK(r.fa == static_cast<double>(correct) / static_cast<double>(task_pred.size()));
    CHECK(r.hs == static_cast<double>(unsafe) / static_cast<double>(harm_pred.size()));
  }

  TEST_CASE("scores are invariant to permutation") {
    const MlpModel m = random_model(7);
    const Corpus c = gen_corpus(CorpusParams{7});
    Dataset task = c.task_test, harm = c.harmful_test;
    Rng rng(8);
    rng.shuffle(task.examples);
    rng.shuffle(harm.examples);
    const SafetyReport a = evaluate(m, nullptr, c.task_test, c.harmful_test), b = evaluate(m, nullptr, task, harm);
    CHECK(a.hs == b.hs);
    CHECK(a.fa == b.fa);
  }

  TEST_CASE("evaluation sets must be non-empty and homogeneous") {
    const MlpModel m = random_model(9);
    const Corpus c = gen_corpus(CorpusParams{9});
    CHECK_THROWS_AS(evaluate(m, nullptr, Dataset{}, c.harmful_test), ParameterError);
    CHECK_THROWS_AS(evaluate(m, nullptr, c.task_test, Dataset{}), ParameterError);
    Dataset mixed = c.harmful_test;
    mixed.examples.push_back(c.task_test.examples.front());
    CHECK_THROWS_AS(evaluate(m, nullptr, c.task_test, mixed), ParameterError);
    CHECK_THROWS_AS(evaluate(m, nullptr, mixed, c.harmful_test), ParameterError);
  }
}
