#include <algorithm>
#include <cmath>
#include <sstream>

#include "circuitprobe/error.hpp"
#include "circuitprobe/tensor_ops.hpp"

namespace circuitprobe {
namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

void scale(Vec& a, double s) {
  for (double& v : a) v *= s;
}

// Removes the components of `v` along each vector in `basis` (twice, for
// numerical orthogonality).
void orthogonalize(Vec& v, const std::vector<Vec>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const Vec& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
  }
}

// Deterministic start vector orthogonal to `basis`: the normalized all-ones
// vector, falling back to unit basis vectors in index order.
Vec start_vector(std::size_t n, const std::vector<Vec>& basis) {
  Vec v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  orthogonalize(v, basis);
  if (norm(v) > 1e-8) {
    scale(v, 1.0 / norm(v));
    return v;
  }
  for (std::size_t e = 0; e < n; ++e) {
    Vec u(n, 0.0);
    u[e] = 1.0;
    orthogonalize(u, basis);
    const double nu = norm(u);
    if (nu > 1e-8) {
      scale(u, 1.0 / nu);
      return u;
    }
  }
  throw ValidationError("top_k_svd: cannot extend orthonormal basis");
}

// Symmetric Gram matrix of the smaller side: MᵀM when `columns`, else MMᵀ.
std::vector<double> gram(const Matrix& m, bool columns) {
  const std::size_t n = columns ? m.cols() : m.rows();
  std::vector<double> g(n * n, 0.0);
  if (columns) {
    std::vector<double> row(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto src = m.row(r);
      for (std::size_t i = 0; i < n; ++i) row[i] = src[i];
      for (std::size_t i = 0; i < n; ++i) {
        const double ri = row[i];
        double* gi = g.data() + i * n;
        for (std::size_t j = i; j < n; ++j) gi[j] += ri * row[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c)
          s += static_cast<double>(m(i, c)) * static_cast<double>(m(j, c));
        g[i * n + j] = s;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g[i * n + j] = g[j * n + i];
  return g;
}

Vec sym_multiply(const std::vector<double>& g, const Vec& v) {
  const std::size_t n = v.size();
  Vec out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = g.data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += gi[j] * v[j];
    out[i] = s;
  }
  return out;
}

// M·x (to_rows) or Mᵀ·x.
Vec apply(const Matrix& m, const Vec& x, bool to_rows) {
  if (to_rows) {
    Vec out(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = m.row(r);
      double s = 0.0;
      for (std::size_t c = 0; c < m.cols(); ++c) s += static_cast<double>(row[c]) * x[c];
      out[r] = s;
    }
    return out;
  }
  Vec out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += static_cast<double>(row[c]) * xr;
  }
  return out;
}

}  // namespace

SvdResult top_k_svd(const Matrix& m, std::size_t k, double tol, std::size_t max_iter) {
  const std::size_t limit = std::min(m.rows(), m.cols());
  if (k > limit)
    throw ValidationError("top_k_svd: k=" + std::to_string(k) + " exceeds min dimension of " +
                          m.shape_string());
  if (!all_finite(m)) throw NumericError("top_k_svd: input contains non-finite values");

  // Iterate on the Gram matrix of the smaller side; `columns` means the
  // eigenvectors found are right singular vectors.
  const bool columns = m.cols() <= m.rows();
  const std::vector<double> g = gram(m, columns);
  const std::size_t n = columns ? m.cols() : m.rows();

  SvdResult result;
  result.k = k;
  std::vector<Vec> found;
  double lambda_max = 0.0;

  for (std::size_t comp = 0; comp < k; ++comp) {
    Vec v = start_vector(n, found);
    double lambda = 0.0;
    double residual = std::numeric_limits<double>::infinity();
    bool converged = false;
    for (std::size_t it = 0; it < max_iter; ++it) {
      Vec w = sym_multiply(g, v);
      orthogonalize(w, found);
      lambda = dot(v, w);
      double r2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) r2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
      residual = std::sqrt(r2);
      const double scale_ref = std::max({lambda_max, lambda, 1e-300});
      const double wn = norm(w);
      if (residual <= tol * scale_ref || wn <= 1e-14 * std::max(lambda_max, 1.0)) {
        converged = true;
        break;
      }
      scale(w, 1.0 / wn);
      v = std::move(w);
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "top_k_svd: component " << comp << " did not converge in " << max_iter
          << " iterations (residual " << residual << ")";
      throw ConvergenceError(msg.str(), residual);
    }
    if (comp == 0) lambda_max = std::max(lambda, 0.0);
    result.residuals.push_back(residual);
    found.push_back(v);
  }

  // Convert eigenvectors of the Gram matrix into singular triplets.
  std::vector<Vec> other_side;
  for (std::size_t comp = 0; comp < k; ++comp) {
    const Vec& e = found[comp];
    Vec o = apply(m, e, /*to_rows=*/columns);
    double sigma = norm(o);
    const double sigma_floor = 1e-10 * std::sqrt(std::max(lambda_max, 0.0));
    if (sigma > sigma_floor && sigma > 0.0) {
      scale(o, 1.0 / sigma);
      orthogonalize(o, other_side);
      scale(o, 1.0 / norm(o));
    } else {
      sigma = std::max(sigma, 0.0);
      o = start_vector(o.size(), other_side);
    }
    other_side.push_back(o);
    Vec u = columns ? o : e;
    Vec v = columns ? e : o;
    std::size_t arg = 0;
    for (std::size_t i = 1; i < u.size(); ++i)
      if (std::abs(u[i]) > std::abs(u[arg])) arg = i;
    if (u[arg] < 0.0) {
      scale(u, -1.0);
      scale(v, -1.0);
    }
    result.singular_values.push_back(sigma);
    result.left_vectors.push_back(std::move(u));
    result.right_vectors.push_back(std::move(v));
  }
  // Power iteration can hand back near-degenerate pairs out of order.
  for (std::size_t i = 1; i < k; ++i) {
    for (std::size_t j = i; j > 0 && result.singular_values[j] > result.singular_values[j - 1];
         --j) {
      std::swap(result.singular_values[j], result.singular_values[j - 1]);
      std::swap(result.left_vectors[j], result.left_vectors[j - 1]);
      std::swap(result.right_vectors[j], result.right_vectors[j - 1]);
      std::swap(result.residuals[j], result.residuals[j - 1]);
    }
  }
  return result;
}

}  // namespace circuitprobe
