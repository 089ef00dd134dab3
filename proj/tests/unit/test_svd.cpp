#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "circuitprobe/error.hpp"
#include "circuitprobe/tensor_ops.hpp"
#include "oracles.hpp"

using namespace circuitprobe;
using namespace circuitprobe::testing;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<float> nd;
  Matrix m(r, c);
  for (float& v : m.data()) v = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("top-k singular values match a Jacobi oracle on small matrices") {
  std::mt19937_64 rng(42);
  std::size_t checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t r = 1 + rng() % 12, c = 1 + rng() % 12;
    const auto m = random_matrix(r, c, rng);
    const std::size_t k = 1 + rng() % std::min(r, c);
    const auto svd = top_k_svd(m, k);
    const auto want = oracle_singular_values(m);
    REQUIRE(svd.singular_values.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(std::abs(svd.singular_values[i] - want[i]) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked > 300);
}

TEST_CASE("singular vectors: orthonormal, consistent, sign convention") {
  std::mt19937_64 rng(7);
  const auto m = random_matrix(12, 9, rng);
  const auto svd = top_k_svd(m, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      double du = 0, dv = 0;
      for (std::size_t i = 0; i < 12; ++i) du += svd.left_vectors[a][i] * svd.left_vectors[b][i];
      for (std::size_t i = 0; i < 9; ++i) dv += svd.right_vectors[a][i] * svd.right_vectors[b][i];
      CHECK(du == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6).scale(1));
      CHECK(dv == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-6).scale(1));
    }
    // M v = σ u
    for (std::size_t i = 0; i < 12; ++i) {
      double mv = 0;
      for (std::size_t j = 0; j < 9; ++j) mv += double(m(i, j)) * svd.right_vectors[a][j];
      CHECK(mv == doctest::Approx(svd.singular_values[a] * svd.left_vectors[a][i]).epsilon(1e-5).scale(1));
    }
    const auto& u = svd.left_vectors[a];
    const auto big = std::max_element(u.begin(), u.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
    CHECK(*big > 0.0);
  }
  // Wide matrices use the other Gram side.
  const auto wide = random_matrix(5, 11, rng);
  const auto sw = top_k_svd(wide, 5);
  const auto want = oracle_singular_values(wide);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(sw.singular_values[i] - want[i]) < 1e-4);
}

TEST_CASE("svd edge cases") {
  const auto diag = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  const auto s = top_k_svd(diag, 3);
  CHECK(s.singular_values[0] == doctest::Approx(3.0));
  CHECK(s.singular_values[1] == doctest::Approx(2.0));
  CHECK(s.singular_values[2] == doctest::Approx(1.0));
  CHECK_THROWS_AS(top_k_svd(diag, 4), ValidationError);
  CHECK(top_k_svd(diag, 0).singular_values.empty());

  // Near-degenerate leading pair and a one-iteration budget cannot converge.
  const auto close = Matrix::from_rows({{1.0f, 0.0f}, {0.0f, 0.999f}});
  try {
    top_k_svd(close, 1, 1e-14, 1);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 0.0);
  }
}
