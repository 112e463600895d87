#include <doctest.h>

#include <filesystem>

#include "cbs/error.hpp"
#include "cbs/png_io.hpp"
#include "oracles.hpp"

using namespace cbs;
namespace fs = std::filesystem;

TEST_CASE("png round trip is exact on the 8-bit grid") {
  std::mt19937_64 rng(21);
  const Frame f = quantize(testing::random_frame(rng, 7, 5));
  CHECK(decode_png(encode_png(f)) == f);
  const fs::path dir = fs::temp_directory_path() / "cbs-png-test";
  fs::create_directories(dir);
  write_png(dir / "f.png", f);
  CHECK(read_png(dir / "f.png") == f);

  const ClassMask m = testing::random_mask(rng, 2, 4, 6, 0.5);
  write_mask_png(dir / "m.png", m);
  CHECK(read_mask_png(dir / "m.png", 2) == m);
  fs::remove_all(dir);
}

TEST_CASE("content hash is stable and sensitive") {
  const Frame a = Frame::filled(3, 3, 0.1, 0.2, 0.3);
  const Frame b = Frame::filled(3, 3, 0.1, 0.2, 0.4);
  CHECK(content_hash(a) == content_hash(a));
  CHECK(content_hash(a) != content_hash(b));
  CHECK(content_hash(a).size() == 64);
}

TEST_CASE("unreadable files raise IoError") {
  CHECK_THROWS_AS(read_png("/nonexistent/x.png"), IoError);
  CHECK_THROWS_AS(decode_png({1, 2, 3}), IoError);
}
