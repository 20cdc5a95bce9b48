#include <doctest.h>

#include <filesystem>

#include "../support.hpp"
#include "asft/checkpoint.hpp"
#include "asft/errors.hpp"

using namespace asft;
using asft::testing::TempDir;

TEST_SUITE("checkpoint") {
  TEST_CASE("empty checkpoint is a 12-byte file") {
    TempDir dir;
    save(Checkpoint("empty"), dir / "e.ckpt");
    CHECK(std::filesystem::file_size(dir / "e.ckpt") == 12);
    const auto bytes = asft::testing::read_bytes(dir / "e.ckpt");
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ASFT");
  }

  TEST_CASE("single-element float64 tensor sizes follow the field widths") {
    TempDir dir;
    Checkpoint v;
    v.add("w", Tensor::vector({2.5}));
    save(v, dir / "v.ckpt");
    CHECK(std::filesystem::file_size(dir / "v.ckpt") == 12 + (4 + 1) + (1 + 1 + 8) + 8);
    Checkpoint m;
    m.add("w", Tensor({1, 1}, {2.5}));
    save(m, dir / "m.ckpt");
    CHECK(std::filesystem::file_size(dir / "m.ckpt") == 12 + (4 + 1) + (1 + 1 + 2 * 8) + 8);
  }

  TEST_CASE("byte layout follows the format") {
    Checkpoint c;
    c.add("ab", Tensor({2}, {1.0, -2.0}, DType::Float32));
    const auto b = encode_checkpoint(c);
    const std::vector<std::uint8_t> head = {'A', 'S', 'F', 'T', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b', 0, 1,
                                            2, 0, 0, 0, 0, 0, 0, 0};
    REQUIRE(b.size() == head.size() + 8);
    CHECK(std::equal(head.begin(), head.end(), b.begin()));
    // 1.0f = 0x3f800000, -2.0f = 0xc0000000, little-endian.
    const std::vector<std::uint8_t> data = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    CHECK(std::equal(data.begin(), data.end(), b.begin() + static_cast<std::ptrdiff_t>(head.size())));
  }

  TEST_CASE("saving twice gives identical bytes") {
    TempDir dir;
    const Checkpoint c = asft::testing::random_checkpoint(8);
    save(c, dir / "a.ckpt");
    save(c, dir / "b.ckpt");
    CHECK(asft::testing::read_bytes(dir / "a.ckpt") == asft::testing::read_bytes(dir / "b.ckpt"));
  }

  TEST_CASE("round trip is bit exact and keeps order and meta") {
    TempDir dir;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Checkpoint c = asft::testing::random_checkpoint(seed);
      c.meta.attributes["note"] = "x";
      save(c, dir / "r.ckpt");
      const Checkpoint back = load(dir / "r.ckpt");
      CHECK(back.bit_equal(c));
      CHECK(back.names() == c.names());
      CHECK(back.meta == c.meta);
      for (const auto& [name, t] : c.entries()) CHECK(back.at(name).dtype() == t.dtype());
    }
  }

  TEST_CASE("negative zero and extreme values survive") {
    Checkpoint c;
    c.add("v", Tensor::vector({-0.0, 1e-308, -1.7976931348623157e308, 5e-324}));
    const Checkpoint back = decode_checkpoint(encode_checkpoint(c));
    CHECK(back.bit_equal(c));
    CHECK(std::signbit(back.at("v")[0]));
  }

  TEST_CASE("bad magic is a format error at offset 0") {
    auto bytes = encode_checkpoint(asft::testing::random_checkpoint(1));
    bytes[0] = bytes[1] = bytes[2] = bytes[3] = 'X';
    try {
      decode_checkpoint(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }

  TEST_CASE("unsupported version is reported at offset 4") {
    auto bytes = encode_checkpoint(Checkpoint());
    bytes[4] = 2;
    try {
      decode_checkpoint(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 4);
    }
  }

  TEST_CASE("truncation mid-tensor names the tensor") {
    Checkpoint c;
    c.add("first", Tensor::vector({1, 2, 3}));
    c.add("second", Tensor::vector({4, 5, 6}));
    auto bytes = encode_checkpoint(c);
    bytes.resize(bytes.size() - 5);
    try {
      decode_checkpoint(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("second") != std::string::npos);
      CHECK(e.offset() > 12);
      CHECK(e.offset() <= bytes.size());
    }
  }

  TEST_CASE("trailing bytes are an error") {
    auto bytes = encode_checkpoint(asft::testing::random_checkpoint(2));
    const auto size = bytes.size();
    bytes.push_back(0);
    try {
      decode_checkpoint(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == size);
    }
  }

  TEST_CASE("names must be unique and non-empty") {
    Checkpoint c;
    c.add("a", Tensor::vector({1}));
    CHECK_THROWS_AS(c.add("a", Tensor::vector({2})), ParameterError);
    CHECK_THROWS_AS(c.add("", Tensor::vector({2})), ParameterError);
  }

  TEST_CASE("load of a missing file is an io error") {
    TempDir dir;
    CHECK_THROWS_AS(load(dir / "missing.ckpt"), IoError);
  }

  TEST_CASE("diff examples") {
    const Checkpoint c = asft::testing::random_checkpoint(3);
    const Checkpoint self = diff(c, c);
    CHECK(self.meta.model_kind == "diff");
    for (const auto& [name, t] : self.entries()) CHECK(max_abs(t) == 0.0);

    Checkpoint a, b;
    a.add("w", Tensor::matrix({{2, 1}}));
    b.add("w", Tensor::matrix({{1, 1}}));
    CHECK(diff(a, b).at("w").bit_equal(Tensor::matrix({{1, 0}})));
  }

  TEST_CASE("diff matches an elementwise oracle and inverts") {
    Rng rng(77);
    Checkpoint a, b;
    a.add("x", random_normal({3, 4}, rng));
    a.add("y", random_normal({5}, rng));
    b.add("x", random_normal({3, 4}, rng));
    b.add("y", random_normal({5}, rng));
    const Checkpoint d = diff(a, b);
    for (const auto& name : a.names()) {
      const Tensor& ta = a.at(name);
      const Tensor& tb = b.at(name);
      for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(d.at(name)[i] == ta[i] - tb[i]);
        CHECK(asft::testing::rel_diff(d.at(name)[i] + tb[i], ta[i]) <= 1e-15);
      }
    }
  }

  TEST_CASE("diff reports mismatched names and shapes") {
    Checkpoint a, b;
    a.add("w", Tensor::zeros(2, 2));
    a.add("only_a", Tensor::vector({1}));
    b.add("w", Tensor::zeros(2, 3));
    b.add("only_b", Tensor::vector({1}));
    try {
      diff(a, b);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("only_a") != std::string::npos);
      CHECK(msg.find("only_b") != std::string::npos);
      CHECK(msg.find("w") != std::string::npos);
    }
  }
}
