#include "circuitprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "circuitprobe/error.hpp"

namespace circuitprobe {

namespace {

void same_length(std::span<const double> xs, std::span<const double> ys, const char* what) {
  if (xs.size() != ys.size())
    throw ValidationError(std::string(what) + ": series lengths differ (" +
                          std::to_string(xs.size()) + " vs " + std::to_string(ys.size()) + ")");
}

}  // namespace

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  same_length(xs, ys, "pearson");
  const std::size_t n = xs.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  same_length(xs, ys, "spearman");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

double dcg_at_k(std::span<const double> ranked_labels, std::size_t k) {
  double s = 0.0;
  const std::size_t n = std::min(k, ranked_labels.size());
  for (std::size_t i = 0; i < n; ++i)
    s += (std::exp2(ranked_labels[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

std::optional<double> ndcg_at_k(std::span<const double> ranked_labels, std::size_t k) {
  for (double l : ranked_labels)
    if (!(l >= 0.0)) throw ValidationError("ndcg: labels must be non-negative");
  std::vector<double> ideal(ranked_labels.begin(), ranked_labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg <= 0.0) return std::nullopt;
  return dcg_at_k(ranked_labels, k) / idcg;
}

std::optional<double> ndcg_for_scores(std::span<const double> scores,
                                      std::span<const double> labels, std::size_t k) {
  same_length(scores, labels, "ndcg");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> ranked(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = labels[order[i]];
  return ndcg_at_k(ranked, k);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

}  // namespace circuitprobe
