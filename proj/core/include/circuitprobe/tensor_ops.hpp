#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace circuitprobe {

/// Dense row-major matrix of 32-bit floats.
///
/// Every weight and activation tensor in the engine is a Matrix; higher-rank
/// tensors are stored as a list of matrices (one per head) by their owners.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0F);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  Matrix transposed() const;
  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

bool all_finite(const Matrix& m) noexcept;
double max_abs_diff(const Matrix& a, const Matrix& b);

/// a · b with 64-bit accumulation. Throws ShapeError when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a · bᵀ; used for attention scores where both operands are token-major.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// Adds `bias` to every row in place.
void add_row_bias(Matrix& m, std::span<const float> bias);

/// Row-wise softmax with max subtraction. `mask`, when non-empty, holds one
/// byte per cell (non-zero = keep); masked cells come out exactly 0.
/// Throws ValidationError if a row has no unmasked cell.
Matrix softmax_rows(const Matrix& m, std::span<const std::uint8_t> mask = {});

inline constexpr float kLayerNormEps = 1e-12F;

Matrix layer_norm(const Matrix& x, std::span<const float> gamma, std::span<const float> beta,
                  float eps = kLayerNormEps);

/// Exact (erf) GELU, as used by BERT.
Matrix gelu(const Matrix& x);
void gelu_inplace(Matrix& x) noexcept;

void tanh_inplace(Matrix& x) noexcept;

struct SvdResult {
  std::vector<double> singular_values;            // descending, non-negative
  std::vector<std::vector<double>> left_vectors;  // u_i, length rows
  std::vector<std::vector<double>> right_vectors; // v_i, length cols
  std::vector<double> residuals;                  // final eigen-residual per component
  std::size_t k = 0;
};

/// Top-k singular triplets by power iteration with deflation.
///
/// Iterates on the smaller Gram matrix (MᵀM or MMᵀ) starting from the
/// normalized all-ones vector, orthogonalizing against already-found
/// components. Each (u, v) pair is sign-normalized so that the entry of u
/// with the largest magnitude is positive.
///
/// Throws ConvergenceError (carrying the achieved residual) when a component
/// fails to reach `tol` (relative to σ₁²) within `max_iter` iterations.
SvdResult top_k_svd(const Matrix& m, std::size_t k, double tol = 1e-10,
                    std::size_t max_iter = 20000);

inline constexpr double kDefaultRidge = 1e-6;

/// argmin_w |Xw − y|² + ridge·|w|², solved through the normal equations with
/// a Cholesky factorization in double precision.
std::vector<double> least_squares(const Matrix& x, std::span<const double> y,
                                  double ridge = kDefaultRidge);

}  // namespace circuitprobe
