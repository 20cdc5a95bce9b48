#include <doctest.h>

#include <fstream>
#include <sstream>

#include "../support.hpp"
#include "asft/cli.hpp"
#include "asft/checkpoint.hpp"
#include "asft/landscape.hpp"

#include <json.hpp>

using namespace asft;
using asft::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// A small corpus, base, aligned model and anchor built through the CLI.
struct Pipeline {
  TempDir dir;
  std::string corpus, base, aligned, anchor;

  Pipeline() {
    corpus = (dir / "corpus").string();
    base = (dir / "base.ckpt").string();
    aligned = (dir / "aligned.ckpt").string();
    anchor = (dir / "anchor.ckpt").string();
    REQUIRE(cli({"gen-data", "--seed", "3", "--out", corpus}).code == 0);
    REQUIRE(cli({"train-base", "--data", corpus, "--out", base}).code == 0);
    REQUIRE(cli({"align", "--base", base, "--data", corpus, "--epochs", "2", "--n", "200", "--out", aligned}).code == 0);
    REQUIRE(cli({"diff", "--aligned", aligned, "--base", base, "--out", anchor}).code == 0);
  }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-data is deterministic") {
    TempDir dir;
    REQUIRE(cli({"gen-data", "--seed", "1", "--out", (dir / "a").string()}).code == 0);
    REQUIRE(cli({"gen-data", "--seed", "1", "--out", (dir / "b").string()}).code == 0);
    for (const char* f : {kTaskTrainFile, kRefusalFile, kHarmfulPoolFile, kTaskTestFile, kHarmfulTestFile}) {
      const auto a = asft::testing::read_bytes(dir / "a" / f);
      CHECK(!a.empty());
      CHECK(a == asft::testing::read_bytes(dir / "b" / f));
    }
  }

  TEST_CASE("pipeline: lambda zero, eval, scan, epl, sweep") {
    Pipeline p;
    const std::string sft = (p.dir / "sft.ckpt").string(), asft0 = (p.dir / "asft0.ckpt").string();
    const std::vector<std::string> common = {"--aligned", p.aligned, "--anchor", p.anchor, "--data", p.corpus,
                                             "--seed", "7", "--n", "100", "--epochs", "2", "--lr", "1e-2"};
    auto with = [&](std::vector<std::string> extra) {
      std::vector<std::string> args = {"finetune"};
      args.insert(args.end(), common.begin(), common.end());
      args.insert(args.end(), extra.begin(), extra.end());
      return cli(args);
    };
    REQUIRE(with({"--method", "sft", "--out", sft}).code == 0);
    REQUIRE(with({"--method", "asft", "--lambda", "0", "--out", asft0}).code == 0);
    CHECK(asft::testing::read_bytes(sft) == asft::testing::read_bytes(asft0));
    CHECK(std::filesystem::exists(sft + ".log.csv"));

    const Run ev = cli({"eval", sft, "--data", p.corpus});
    REQUIRE(ev.code == 0);
    const auto report = nlohmann::json::parse(ev.out);
    CHECK(report.contains("hs"));
    CHECK(report.contains("fa"));
    CHECK(cli({"eval", sft, "--data", p.corpus}).out == ev.out);

    const std::string grid = (p.dir / "grid.csv").string();
    REQUIRE(cli({"scan", "--aligned", p.aligned, "--anchor", p.anchor, "--dir", "aligned", "--steps", "5", "--data",
                 p.corpus, "--workers", "2", "--out", grid})
                .code == 0);
    const std::string grid_text = read_text_file(grid);
    CHECK(line_count(grid_text) == 6);
    const Run e1 = cli({"epl", "--data", grid, "--dir", "aligned"});
    REQUIRE(e1.code == 0);
    CHECK(nlohmann::json::parse(e1.out).contains("epl"));

    const std::string rgrid = (p.dir / "rand.csv").string();
    REQUIRE(cli({"scan", "--aligned", p.aligned, "--dir", "random", "--dirs", "3", "--steps", "3", "--data", p.corpus,
                 "--out", rgrid})
                .code == 0);
    for (int i = 0; i < 3; ++i) CHECK(std::filesystem::exists(p.dir / ("rand." + std::to_string(i) + ".csv")));

    const std::string manifest = (p.dir / "sweep.csv").string();
    const Run sw = cli({"sweep", "--aligned", p.aligned, "--anchor", p.anchor, "--data", p.corpus, "--method", "asft",
                        "--lambda", "0,0.1,1,10", "--seeds", "1-5", "--n", "40", "--epochs", "1", "--workers", "4",
                        "--out", manifest});
    REQUIRE(sw.code == 0);
    const std::string text = read_text_file(manifest);
    CHECK(line_count(text) == 21);
    CHECK(text.rfind("method,lambda,lr,seed,hs,fa\n", 0) == 0);
    const std::string manifest2 = (p.dir / "sweep2.csv").string();
    REQUIRE(cli({"sweep", "--aligned", p.aligned, "--anchor", p.anchor, "--data", p.corpus, "--method", "asft",
                 "--lambda", "0,0.1,1,10", "--seeds", "1-5", "--n", "40", "--epochs", "1", "--workers", "1", "--out",
                 manifest2})
              .code == 0);
    CHECK(read_text_file(manifest2) == text);
  }

  TEST_CASE("config file supplies defaults that flags override") {
    Pipeline p;
    const std::string conf = (p.dir / "ft.conf").string();
    {
      std::ofstream f(conf);
      f << "# fine-tune settings\nmethod=asft\nlambda=0\nepochs=2\nlr=1e-2\nn=100\nbatch_size=8\n";
    }
    const std::string a = (p.dir / "a.ckpt").string(), b = (p.dir / "b.ckpt").string(), c = (p.dir / "c.ckpt").string();
    REQUIRE(cli({"finetune", "--config", conf, "--aligned", p.aligned, "--anchor", p.anchor, "--data", p.corpus, "--out", a})
                .code == 0);
    REQUIRE(cli({"finetune", "--aligned", p.aligned, "--anchor", p.anchor, "--data", p.corpus, "--method", "sft",
                 "--epochs", "2", "--lr", "1e-2", "--n", "100", "--out", b})
                .code == 0);
    CHECK(asft::testing::read_bytes(a) == asft::testing::read_bytes(b));
    REQUIRE(cli({"finetune", "--config", conf, "--epochs", "1", "--aligned", p.aligned, "--anchor", p.anchor, "--data",
                 p.corpus, "--out", c})
                .code == 0);
    CHECK(load(c).meta.attributes.at("train.epochs") == "1");
  }

  TEST_CASE("errors are single JSON lines with nonzero exit") {
    TempDir dir;
    const Run unknown = cli({"finetune", "--bogus"});
    CHECK(unknown.code == 2);
    const auto j = nlohmann::json::parse(unknown.err);
    CHECK(j.contains("error"));
    CHECK(j.contains("message"));
    CHECK(line_count(unknown.err) == 1);

    const Run missing = cli({"eval", (dir / "nope.ckpt").string(), "--data", (dir / "nocorpus").string()});
    CHECK(missing.code != 0);
    CHECK(nlohmann::json::parse(missing.err).at("error") == "io");

    std::vector<std::uint8_t> junk = {'X', 'X', 'X', 'X', 1, 0, 0, 0, 0, 0, 0, 0};
    asft::testing::write_bytes(dir / "bad.ckpt", junk);
    REQUIRE(cli({"gen-data", "--out", (dir / "c").string()}).code == 0);
    const Run bad = cli({"eval", (dir / "bad.ckpt").string(), "--data", (dir / "c").string()});
    CHECK(bad.code == 1);
    CHECK(nlohmann::json::parse(bad.err).at("error") == "format");

    const Run method = cli({"finetune", "--aligned", (dir / "bad.ckpt").string(), "--data", (dir / "c").string(),
                            "--method", "nonsense", "--out", (dir / "o.ckpt").string()});
    CHECK(method.code != 0);
    CHECK_FALSE(std::filesystem::exists(dir / "o.ckpt"));
    CHECK(cli({}).code != 0);
  }
}
