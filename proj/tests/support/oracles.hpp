#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "circuitprobe/tensor_ops.hpp"

namespace circuitprobe::testing {

// Brute-force definitions, written independently of metrics.cpp.
inline double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sx += x[i], sy += y[i];
  const long double mx = sx / n, my = sy / n;
  long double cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cxy += (x[i] - mx) * (y[i] - my);
    cxx += (x[i] - mx) * (x[i] - mx);
    cyy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(cxy / std::sqrt(cxx * cyy));
}

inline std::vector<double> naive_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) ++less;
      if (v == x[i]) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double naive_ndcg(const std::vector<double>& scores, const std::vector<double>& labels, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // selection sort: highest score first, earlier index on ties
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (scores[order[j]] > scores[order[i]] ||
          (scores[order[j]] == scores[order[i]] && order[j] < order[i]))
        std::swap(order[i], order[j]);
  auto dcg = [&](const std::vector<double>& ranked) {
    double s = 0;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
      s += (std::pow(2.0, ranked[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
  };
  std::vector<double> ranked;
  for (std::size_t i : order) ranked.push_back(labels[i]);
  std::vector<double> ideal = labels;
  std::sort(ideal.rbegin(), ideal.rend());
  return dcg(ranked) / dcg(ideal);
}

// Cyclic Jacobi eigenvalues of a symmetric matrix; independent of the
// power-iteration code path.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

inline std::vector<double> oracle_singular_values(const Matrix& m) {
  const std::size_t n = m.cols();
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < m.rows(); ++r) g[i * n + j] += double(m(r, i)) * m(r, j);
  auto ev = jacobi_eigenvalues(g, n);
  for (double& v : ev) v = std::sqrt(std::max(v, 0.0));
  return ev;
}

}  // namespace circuitprobe::testing
