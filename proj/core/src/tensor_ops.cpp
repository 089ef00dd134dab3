#include "circuitprobe/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "circuitprobe/error.hpp"

namespace circuitprobe {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream msg;
    msg << "matrix data length " << data_.size() << " does not match shape " << rows_ << "x"
        << cols_;
    throw ShapeError(msg.str());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0F;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Matrix::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

std::string Matrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool all_finite(const Matrix& m) noexcept {
  return std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); });
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return worst;
}

namespace {

void require_finite(const Matrix& m, const char* op) {
  if (!all_finite(m)) throw NumericError(std::string(op) + " produced a non-finite value");
}

}  // namespace

namespace {

using v8d = double __attribute__((vector_size(64)));

constexpr std::size_t kPanel = 16;
constexpr std::size_t kRows = 6;

// rows x 16 block of C; every element sums over k in ascending order, so
// results do not depend on how rows are grouped.
template <std::size_t R>
void micro_kernel(const float* a, std::size_t lda, const double* panel, std::size_t inner,
                  float* c, std::size_t ldc, std::size_t width) {
  v8d acc[R][2] = {};
  for (std::size_t k = 0; k < inner; ++k) {
    v8d b0, b1;
    __builtin_memcpy(&b0, panel + k * kPanel, sizeof b0);
    __builtin_memcpy(&b1, panel + k * kPanel + 8, sizeof b1);
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * lda + k];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < width; ++j)
      c[r * ldc + j] = static_cast<float>(j < 8 ? acc[r][0][j] : acc[r][1][j - 8]);
}

void run_block(std::size_t rows, const float* a, std::size_t lda, const double* panel,
               std::size_t inner, float* c, std::size_t ldc, std::size_t width) {
  switch (rows) {
    case 6: micro_kernel<6>(a, lda, panel, inner, c, ldc, width); break;
    case 5: micro_kernel<5>(a, lda, panel, inner, c, ldc, width); break;
    case 4: micro_kernel<4>(a, lda, panel, inner, c, ldc, width); break;
    case 3: micro_kernel<3>(a, lda, panel, inner, c, ldc, width); break;
    case 2: micro_kernel<2>(a, lda, panel, inner, c, ldc, width); break;
    default: micro_kernel<1>(a, lda, panel, inner, c, ldc, width); break;
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  const std::size_t m = a.rows();
  const std::size_t n = b.cols();
  const std::size_t inner = a.cols();
  Matrix c(m, n);
  if (m == 0 || n == 0) return c;

  std::vector<double> panel(inner * kPanel);
  const float* bdata = b.data().data();
  const float* adata = a.data().data();
  float* cdata = c.data().data();
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t width = std::min(kPanel, n - j0);
    for (std::size_t k = 0; k < inner; ++k) {
      const float* src = bdata + k * n + j0;
      double* dst = panel.data() + k * kPanel;
      for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
      for (std::size_t j = width; j < kPanel; ++j) dst[j] = 0.0;
    }
    for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
      const std::size_t rows = std::min(kRows, m - i0);
      run_block(rows, adata + i0 * inner, inner, panel.data(), inner, cdata + i0 * n + j0, n,
                width);
    }
  }
  require_finite(c, "matmul");
  return c;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_transposed: cannot multiply " + a.shape_string() + " by transpose of " +
                     b.shape_string());
  Matrix c(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const float* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const float* br = b.row(j).data();
      double lanes[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t k = 0;
      for (; k + 4 <= inner; k += 4)
        for (std::size_t l = 0; l < 4; ++l)
          lanes[l] += static_cast<double>(ar[k + l]) * static_cast<double>(br[k + l]);
      double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
      for (; k < inner; ++k) sum += static_cast<double>(ar[k]) * static_cast<double>(br[k]);
      c(i, j) = static_cast<float>(sum);
    }
  }
  require_finite(c, "matmul_transposed");
  return c;
}

void add_row_bias(Matrix& m, std::span<const float> bias) {
  if (bias.size() != m.cols())
    throw ShapeError("add_row_bias: bias length " + std::to_string(bias.size()) +
                     " does not match " + m.shape_string());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

Matrix softmax_rows(const Matrix& m, std::span<const std::uint8_t> mask) {
  if (!mask.empty() && mask.size() != m.size())
    throw ShapeError("softmax_rows: mask has " + std::to_string(mask.size()) +
                     " cells, matrix is " + m.shape_string());
  Matrix out(m.rows(), m.cols());
  const std::size_t cols = m.cols();
  std::vector<double> e(cols);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto dst = out.row(r);
    const std::uint8_t* keep = mask.empty() ? nullptr : mask.data() + r * cols;
    float max_v = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep && !keep[c]) continue;
      max_v = std::max(max_v, in[c]);
      any = true;
    }
    if (!any) throw ValidationError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    double sum = 0.0;
    std::fill(e.begin(), e.end(), 0.0);
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep && !keep[c]) continue;
      e[c] = std::exp(static_cast<double>(in[c]) - static_cast<double>(max_v));
      sum += e[c];
    }
    for (std::size_t c = 0; c < cols; ++c) dst[c] = static_cast<float>(e[c] / sum);
  }
  require_finite(out, "softmax_rows");
  return out;
}

Matrix layer_norm(const Matrix& x, std::span<const float> gamma, std::span<const float> beta,
                  float eps) {
  if (gamma.size() != x.cols() || beta.size() != x.cols())
    throw ShapeError("layer_norm: gamma/beta lengths " + std::to_string(gamma.size()) + "/" +
                     std::to_string(beta.size()) + " do not match " + x.shape_string());
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    auto dst = out.row(r);
    for (std::size_t c = 0; c < in.size(); ++c)
      dst[c] = static_cast<float>((in[c] - mean) * inv * gamma[c] + beta[c]);
  }
  require_finite(out, "layer_norm");
  return out;
}

void gelu_inplace(Matrix& x) noexcept {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (float& v : x.data()) {
    const double d = v;
    v = static_cast<float>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
  }
}

Matrix gelu(const Matrix& x) {
  Matrix out = x;
  gelu_inplace(out);
  require_finite(out, "gelu");
  return out;
}

void tanh_inplace(Matrix& x) noexcept {
  for (float& v : x.data()) v = static_cast<float>(std::tanh(static_cast<double>(v)));
}

std::vector<double> least_squares(const Matrix& x, std::span<const double> y, double ridge) {
  if (x.rows() != y.size())
    throw ShapeError("least_squares: X is " + x.shape_string() + " but y has " +
                     std::to_string(y.size()) + " entries");
  if (!(ridge >= 0.0)) throw ValidationError("least_squares: ridge must be >= 0");
  const std::size_t p = x.cols();
  std::vector<double> a(p * p, 0.0);
  std::vector<double> rhs(p, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = row[i];
      rhs[i] += xi * y[r];
      double* arow = a.data() + i * p;
      for (std::size_t j = i; j < p; ++j) arow[j] += xi * static_cast<double>(row[j]);
    }
  }
  double max_diag = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) a[i * p + j] = a[j * p + i];
    max_diag = std::max(max_diag, a[i * p + i]);
    a[i * p + i] += ridge;
  }

  // In-place Cholesky: lower triangle of `a` becomes L.
  const double pivot_floor = 1e-12 * std::max(max_diag, 1.0);
  for (std::size_t j = 0; j < p; ++j) {
    double d = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    if (!(d > pivot_floor)) {
      throw SingularSystemError(
          "least_squares: normal equations are singular at column " + std::to_string(j) +
          (ridge == 0.0 ? "; retry with ridge > 0" : "; increase ridge"));
    }
    const double l = std::sqrt(d);
    a[j * p + j] = l;
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = s / l;
    }
  }
  std::vector<double> z(p);
  for (std::size_t i = 0; i < p; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * p + k] * z[k];
    z[i] = s / a[i * p + i];
  }
  std::vector<double> w(p);
  for (std::size_t ii = p; ii-- > 0;) {
    double s = z[ii];
    for (std::size_t k = ii + 1; k < p; ++k) s -= a[k * p + ii] * w[k];
    w[ii] = s / a[ii * p + ii];
  }
  return w;
}

}  // namespace circuitprobe
