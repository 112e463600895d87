#include <doctest.h>

#include <cmath>
#include <limits>

#include "cbs/error.hpp"
#include "cbs/frame.hpp"
#include "oracles.hpp"

using namespace cbs;

TEST_CASE("frame rejects invalid values and extents") {
  CHECK_THROWS_AS(Frame(0, 4), ValidationError);
  CHECK_THROWS_AS(Frame(2, 2, std::vector<double>(11, 0.5)), ShapeError);
  CHECK_THROWS_AS(Frame(1, 1, std::vector<double>{0.5, 1.5, 0.0}), ValidationError);
  CHECK_THROWS_AS(Frame(1, 1, std::vector<double>{0.5, -1e-9, 0.0}), ValidationError);
  CHECK_THROWS_AS(Frame(1, 1, std::vector<double>{std::nan(""), 0.0, 0.0}), ValidationError);
  const Frame f = Frame::filled(2, 3, 0.1, 0.2, 0.3);
  CHECK(f.height() == 2);
  CHECK(f.width() == 3);
  CHECK(f.at(1, 2, 2) == 0.3);
}

TEST_CASE("masks hold only zeros and ones") {
  CHECK_THROWS_AS(ClassMask(1, 1, 2, {0, 2}), ValidationError);
  CHECK_NOTHROW(ClassMask(1, 1, 2, {0, 1}));
  CHECK_THROWS_AS(SoftMask(1, 1, 2, {0.5, 1.2}), ValidationError);
}

TEST_CASE("8-bit conversion rounds half up and round-trips the grid") {
  CHECK(to_byte(0.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(0.5 / 255.0) == 1);
  CHECK(to_byte(0.49 / 255.0) == 0);
  for (int v = 0; v < 256; ++v) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(v))) == v);
  std::mt19937_64 rng(1);
  const Frame q = quantize(testing::random_frame(rng, 4, 4));
  CHECK(quantize(q) == q);
}

TEST_CASE("resize keeps constants and the identity extent") {
  const Frame c = Frame::filled(5, 7, 0.25, 0.5, 0.75);
  const Frame r = resize(c, 9, 3);
  CHECK(r.height() == 9);
  CHECK(r.width() == 3);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 3; ++x) CHECK(r.at(y, x, 1) == doctest::Approx(0.5).epsilon(1e-12));
  std::mt19937_64 rng(2);
  const Frame f = testing::random_frame(rng, 6, 6);
  CHECK(resize(f, 6, 6) == f);
}

TEST_CASE("style assignment lists distinct styles") {
  StyleAssignment a;
  a.assign(1, "ink");
  a.assign(3, "ink");
  a.assign(2, "warm");
  CHECK(a.distinct_styles() == std::vector<std::string>{"ink", "warm"});
  a.clear(2);
  CHECK(a.entries().size() == 2);
}
