#include <doctest.h>

#include <fstream>

#include "teddy/container.hpp"
#include "teddy/rng.hpp"
#include "teddy/tensor.hpp"
#include "test_util.hpp"

using namespace teddy;
using teddy::testutil::TempDir;

TEST_CASE("container round trip preserves every entry bit for bit") {
  TempDir tmp("container");
  ArrayContainer c;
  Tensor t({2, 3});
  for (Index i = 0; i < 6; ++i) t[i] = 0.1 * static_cast<double>(i) - 0.25;
  c.put_f64("weights", t);
  c.put_i64("labels", {4}, {0, 1, 2, 1});
  c.put_u8("pixels", {2, 2}, {0, 128, 255, 7});
  c.put_text("__manifest__", "{\"v\":1}");
  const auto path = tmp.path() / "x.tdy";
  c.save(path);

  ArrayContainer back = ArrayContainer::load(path);
  CHECK(bitwise_equal(back.get_f64("weights"), t));
  CHECK(back.get_i64("labels") == std::vector<std::int64_t>{0, 1, 2, 1});
  CHECK(back.get_u8("pixels") == std::vector<std::uint8_t>{0, 128, 255, 7});
  CHECK(back.get_text("__manifest__") == "{\"v\":1}");
}

TEST_CASE("container detects a flipped byte") {
  TempDir tmp("container_corrupt");
  ArrayContainer c;
  c.put_text("payload", "hello");
  const auto path = tmp.path() / "x.tdy";
  c.save(path);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(14);
  char byte;
  f.seekg(14);
  f.read(&byte, 1);
  byte = static_cast<char>(byte ^ 0x40);
  f.seekp(14);
  f.write(&byte, 1);
  f.close();

  CHECK(testutil::threw_code(ErrorCode::checksum_failure, [&] { ArrayContainer::load(path); }));
}

TEST_CASE("missing container file reports missing-files with the path") {
  try {
    ArrayContainer::load("/nonexistent/place/x.tdy");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_files);
    CHECK(std::string(e.what()).find("/nonexistent/place/x.tdy") != std::string::npos);
  }
}

TEST_CASE("seed derivation separates phases and indices") {
  auto a = derive_seed(7, "phase-a");
  auto b = derive_seed(7, "phase-b");
  auto a1 = derive_seed(7, "phase-a", 1);
  CHECK(a != b);
  CHECK(a != a1);
  CHECK(derive_seed(7, "phase-a") == a);

  Rng r1 = make_rng(a), r2 = make_rng(a);
  for (int i = 0; i < 16; ++i) CHECK(r1() == r2());
}

TEST_CASE("tensor shape checks name expected and given shapes") {
  Tensor t({2, 3});
  try {
    check_shape(t, {4, 1}, "probe");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape_mismatch);
    CHECK(std::string(e.what()).find("[4, 1]") != std::string::npos);
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
}
