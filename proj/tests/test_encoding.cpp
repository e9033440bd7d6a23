#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "stnerf/encoding.hpp"
#include "stnerf/error.hpp"
#include "test_helpers.hpp"

using namespace stnerf;

TEST_CASE("encode zero with input") {
  const std::vector<double> x{0.0};
  const auto e = positional_encode(x, 2, true);
  REQUIRE(e.size() == 5);
  CHECK(e == std::vector<double>{0, 0, 1, 0, 1});
}

TEST_CASE("encode one without input") {
  const std::vector<double> x{1.0};
  const auto e = positional_encode(x, 1, false);
  REQUIRE(e.size() == 2);
  CHECK(e[0] == doctest::Approx(0.0));
  CHECK(e[1] == doctest::Approx(-1.0));
}

TEST_CASE("encode half") {
  const std::vector<double> x{0.5};
  const auto e = positional_encode(x, 2, false);
  const std::vector<double> want{1, 0, 0, -1};
  REQUIRE(e.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(e[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("encoding matches direct sin/cos and widths") {
  EncodingConfig cfg;
  CHECK(cfg.position_width() == 63);
  CHECK(cfg.direction_width() == 27);
  CHECK(cfg.time_width() == 21);
  cfg.include_input = false;
  CHECK(cfg.scalar_width(3) == 6);

  const std::vector<double> x{0.3, -0.71, 0.999};
  const int L = 10;
  const auto e = positional_encode(x, L, true);
  REQUIRE(e.size() == 3 * 21);
  for (int c = 0; c < 3; ++c) {
    CHECK(e[c * 21] == x[c]);
    for (int k = 0; k < L; ++k) {
      const double a = std::ldexp(std::numbers::pi, k) * x[c];
      CHECK(e[c * 21 + 1 + 2 * k] == doctest::Approx(std::sin(a)).epsilon(1e-9));
      CHECK(e[c * 21 + 2 + 2 * k] == doctest::Approx(std::cos(a)).epsilon(1e-9));
    }
  }
  CHECK(positional_encode(x, L, true) == e);
  CHECK(positional_encode(x, 0, false).empty());
}

TEST_CASE("encoding rejects bad input") {
  const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(positional_encode(bad, 2, true), InvalidInput);
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(positional_encode(inf, 2, true), InvalidInput);
  const std::vector<double> ok{0.0};
  CHECK_THROWS_AS(positional_encode(ok, -1, true), InvalidInput);
}

TEST_CASE("batched encoding agrees with scalar encoding and differentiates") {
  const auto x = testing::random_matrix<double>(3, 5, 11);
  const int L = 4;
  const int w = 3 * (1 + 2 * L);
  Matrix<double> out(w + 2, 5);
  encode_rows(x, L, true, out, 2);
  for (int n = 0; n < 5; ++n) {
    const std::vector<double> col{x(0, n), x(1, n), x(2, n)};
    const auto e = positional_encode(col, L, true);
    for (int r = 0; r < w; ++r) CHECK(out(r + 2, n) == doctest::Approx(e[r]).epsilon(1e-12));
  }

  // d/dx of sum(g .* encode(x)) by central differences.
  const auto g = testing::random_matrix<double>(w + 2, 5, 12);
  Matrix<double> dx(3, 5);
  encode_rows_backward(out, g, 2, 3, L, true, dx);
  auto objective = [&](const Matrix<double>& xx) {
    Matrix<double> o(w + 2, 5);
    encode_rows(xx, L, true, o, 2);
    double s = 0.0;
    for (int r = 2; r < w + 2; ++r)
      for (int n = 0; n < 5; ++n) s += g(r, n) * o(r, n);
    return s;
  };
  const double h = 1e-6;
  for (int d = 0; d < 3; ++d)
    for (int n = 0; n < 5; ++n) {
      auto xp = x, xm = x;
      xp(d, n) += h;
      xm(d, n) -= h;
      const double fd = (objective(xp) - objective(xm)) / (2 * h);
      CHECK(testing::rel_err(fd, dx(d, n)) < 1e-5);
    }
}
