#include <doctest.h>

#include <cmath>
#include <random>

#include "circuitprobe/error.hpp"
#include "circuitprobe/tensor_ops.hpp"

using namespace circuitprobe;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Matrix m(r, c);
  for (float& v : m.data()) v = u(rng);
  return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += double(a(i, k)) * b(k, j);
      out(i, j) = static_cast<float>(s);
    }
  return out;
}

}  // namespace

TEST_CASE("matrix basics") {
  const auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0f);
  CHECK(m.transposed()(2, 1) == 6.0f);
  CHECK(m.shape_string() == "[2x3]");
  CHECK(Matrix::identity(3)(1, 1) == 1.0f);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>(3)), ShapeError);
  Matrix bad = m;
  bad(0, 0) = std::nanf("");
  CHECK_FALSE(all_finite(bad));
  CHECK(all_finite(m));
}

TEST_CASE("matmul matches a naive double oracle on awkward shapes") {
  std::mt19937_64 rng(1);
  for (std::size_t trial = 0; trial < 60; ++trial) {
    const std::size_t r = 1 + rng() % 40, k = 1 + rng() % 70, c = 1 + rng() % 50;
    const auto a = random_matrix(r, k, rng);
    const auto b = random_matrix(k, c, rng);
    const auto want = naive_matmul(a, b);
    CHECK(max_abs_diff(matmul(a, b), want) < 1e-5);
    CHECK(max_abs_diff(matmul_transposed(a, b.transposed()), want) < 1e-5);
  }
  const auto a = random_matrix(130, 384, rng);
  const auto b = random_matrix(384, 1536, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-4);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(matmul_transposed(Matrix(2, 3), Matrix(2, 4)), ShapeError);
}

TEST_CASE("matmul is row independent") {
  std::mt19937_64 rng(2);
  const auto a = random_matrix(23, 64, rng);
  const auto b = random_matrix(64, 37, rng);
  const auto full = matmul(a, b);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    Matrix row(1, a.cols());
    std::copy(a.row(i).begin(), a.row(i).end(), row.row(0).begin());
    const auto one = matmul(row, b);
    for (std::size_t j = 0; j < b.cols(); ++j) CHECK(one(0, j) == full(i, j));
  }
}

TEST_CASE("softmax rows") {
  const auto m = Matrix::from_rows({{1, 2, 3}, {1000, 1000, 1000}});
  const auto s = softmax_rows(m);
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0;
    for (float v : s.row(r)) sum += v;
    CHECK(sum == doctest::Approx(1.0));
  }
  CHECK(s(1, 0) == doctest::Approx(1.0 / 3));
  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 0, 0};
  CHECK_THROWS_AS(softmax_rows(m, mask), ValidationError);
  const std::vector<std::uint8_t> ok{1, 0, 1, 0, 1, 1};
  const auto sm = softmax_rows(m, ok);
  CHECK(sm(0, 1) == 0.0f);
  CHECK(sm(1, 0) == 0.0f);
  CHECK(sm(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("layer norm, gelu, tanh, bias") {
  std::mt19937_64 rng(3);
  const auto x = random_matrix(5, 32, rng);
  const std::vector<float> g(32, 1.0f), b(32, 0.0f);
  const auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (float v : y.row(r)) mean += v / 32.0;
    for (float v : y.row(r)) var += (v - mean) * (v - mean) / 32.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  const auto ge = gelu(Matrix::from_rows({{0.0f, 1.0f, -1.0f, 3.0f}}));
  CHECK(ge(0, 0) == 0.0f);
  CHECK(ge(0, 1) == doctest::Approx(0.8413447461));
  CHECK(ge(0, 2) == doctest::Approx(-0.1586552539));
  CHECK(ge(0, 3) == doctest::Approx(2.9959505));
  auto t = Matrix::from_rows({{0.0f, 0.5f}});
  tanh_inplace(t);
  CHECK(t(0, 1) == doctest::Approx(std::tanh(0.5)));
  auto m = Matrix(2, 2);
  const std::vector<float> bias{1.0f, 2.0f};
  add_row_bias(m, bias);
  CHECK(m(1, 1) == 2.0f);
  const std::vector<float> wrong{1.0f};
  CHECK_THROWS_AS(add_row_bias(m, wrong), ShapeError);
}

TEST_CASE("least squares") {
  const auto x = Matrix::from_rows({{1, 0}, {1, 1}, {1, 2}, {1, 3}});
  const std::vector<double> y{1, 3, 5, 7};
  const auto w = least_squares(x, y, 0.0);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(2.0));
  const auto dup = Matrix::from_rows({{1, 1}, {2, 2}, {3, 3}});
  const std::vector<double> y3{1, 2, 3};
  CHECK_THROWS_AS(least_squares(dup, y3, 0.0), SingularSystemError);
  const auto ridge = least_squares(dup, y3, 1e-3);
  CHECK(ridge[0] == doctest::Approx(ridge[1]));
  CHECK_THROWS_AS(least_squares(x, y3), ShapeError);
}
