#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mdn/errors.hpp"
#include "mdn/field.hpp"
#include "mdn/field_io.hpp"
#include "mdn/rng.hpp"

using namespace mdn;

namespace {

ScalarField random_field(Rng& rng, Shape s) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
  return ScalarField(s, std::move(v));
}

bool bit_equal(const ScalarField& a, const ScalarField& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mdn_test_" + name);
}

}  // namespace

TEST_CASE("new_field fills") {
  auto a = new_field(2, 2, 1, 0.0);
  CHECK(a.size() == 4);
  CHECK(a.max() == 0.0);
  auto b = new_field(1, 1, 3, 1.0);
  CHECK(b.size() == 3);
  CHECK(b.min() == 1.0);
  CHECK(new_field(64, 64, 16, 0.0).size() == 65536);
}

TEST_CASE("field constructors reject bad input") {
  CHECK_THROWS_AS(new_field(0, 2, 1, 0.0), ShapeError);
  CHECK_THROWS_AS(new_field(2, -1, 1, 0.0), ShapeError);
  CHECK_THROWS_AS(new_field(2, 2, 0, 0.0), ShapeError);
  CHECK_THROWS_AS(new_field(2, 2, 1, std::nan("")), DomainError);
  CHECK_THROWS_AS(ScalarField(Shape{2, 2, 1}, std::vector<double>(3)), ShapeError);
  std::vector<double> v(4, 0.0);
  v[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ScalarField(Shape{2, 2, 1}, v), DomainError);
  CHECK_THROWS_AS(DisplacementField(new_field(2, 2, 1, 0), new_field(2, 3, 1, 0)), ShapeError);
}

TEST_CASE("unit interval check") {
  CHECK_NOTHROW(require_unit_interval(new_field(2, 2, 1, 1.0), "c"));
  CHECK_THROWS_AS(require_unit_interval(new_field(2, 2, 1, 1.5), "c"), DomainError);
  CHECK_THROWS_AS(require_unit_interval(new_field(2, 2, 1, -1e-9), "c"), DomainError);
}

TEST_CASE("mdnf round trip is bit exact") {
  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const Shape s{1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9)),
                  1 + static_cast<int>(rng.below(4))};
    const auto f = random_field(rng, s);
    CHECK(bit_equal(decode_mdnf(encode_mdnf(f)), f));
  }
  // negative zero and denormals survive too
  ScalarField g(Shape{1, 3, 1}, {-0.0, 4.9e-324, -1.7976931348623157e308});
  CHECK(bit_equal(decode_mdnf(encode_mdnf(g)), g));

  const auto f = random_field(rng, Shape{8, 8, 2});
  const auto path = temp_path("roundtrip.mdnf");
  save_mdnf(f, path);
  CHECK(bit_equal(load_mdnf(path), f));
  std::filesystem::remove(path);
}

TEST_CASE("mdnf header layout") {
  const auto bytes = encode_mdnf(new_field(2, 3, 4, 1.0));
  REQUIRE(bytes.size() == 16 + 24 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MDNF");
  CHECK(bytes[4] == 2);
  CHECK(bytes[8] == 3);
  CHECK(bytes[12] == 4);
  // 1.0 little endian: 00 .. 00 f0 3f
  CHECK(bytes[16 + 6] == 0xf0);
  CHECK(bytes[16 + 7] == 0x3f);
}

TEST_CASE("mdnf decode errors") {
  auto bytes = encode_mdnf(new_field(3, 3, 1, 0.5));
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("3x3x1 header with 8 values") {
    bytes.resize(bytes.size() - 8);
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("truncated header") {
    bytes.resize(10);
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("zero dimension") {
    bytes[4] = 0;
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("dimension overflow") {
    for (int i = 4; i < 16; ++i) bytes[i] = 0xff;
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  SUBCASE("nan payload") {
    const double nan = std::nan("");
    const auto raw = std::bit_cast<std::uint64_t>(nan);
    for (int b = 0; b < 8; ++b) bytes[16 + b] = static_cast<unsigned char>(raw >> (8 * b));
    CHECK_THROWS_AS(decode_mdnf(bytes), FormatError);
  }
  CHECK_THROWS_AS(load_mdnf(temp_path("does_not_exist.mdnf")), Error);
}

TEST_CASE("pgm mapping") {
  const auto flat = pgm_pixels(new_field(4, 4, 1, 0.5), 0);
  CHECK(std::all_of(flat.begin(), flat.end(), [](unsigned char p) { return p == 0; }));

  ScalarField f(Shape{1, 3, 1}, {0.0, 0.5, 1.0});
  const auto px = pgm_pixels(f, 0);
  CHECK(px[0] == 0);
  CHECK(px[1] == 128);
  CHECK(px[2] == 255);

  CHECK_THROWS_AS(pgm_pixels(new_field(2, 2, 2, 0.0), 5), RangeError);
  CHECK_THROWS_AS(new_field(2, 2, 2, 0.0).channel(2), RangeError);

  const auto path = temp_path("ramp.pgm");
  export_pgm(f, 0, path);
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content.substr(0, 11) == "P5\n3 1\n255\n");
  REQUIRE(content.size() == 14);
  CHECK(static_cast<unsigned char>(content[13]) == 255);
  std::filesystem::remove(path);
}
