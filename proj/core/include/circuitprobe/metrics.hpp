#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace circuitprobe {

/// Pearson r. nullopt when either series has zero variance or fewer than
/// two points. Throws ValidationError on length mismatch.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

/// Spearman rho: Pearson over average ranks (ties share their mean rank).
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks, ascending; ties get the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> xs);

/// DCG over labels in ranked order: Σ (2^l − 1) / log2(i + 2), i < k.
double dcg_at_k(std::span<const double> ranked_labels, std::size_t k);

/// DCG normalized by the ideal ordering of the same labels. nullopt when no
/// label is positive. Throws ValidationError on negative labels.
std::optional<double> ndcg_at_k(std::span<const double> ranked_labels, std::size_t k);

/// Ranks `labels` by descending `scores` (ties keep input order), then ndcg.
std::optional<double> ndcg_for_scores(std::span<const double> scores,
                                      std::span<const double> labels, std::size_t k);

struct Summary {
  double median = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for n < 2
  std::size_t n = 0;
};

Summary summarize(std::span<const double> values);

}  // namespace circuitprobe
