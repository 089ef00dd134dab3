#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/circuit_analysis.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/embedding_lab.hpp"
#include "circuitprobe/metrics.hpp"
#include "circuitprobe/report.hpp"
#include "circuitprobe/tensor_ops.hpp"

namespace circuitprobe {

struct Bm25Config {
  double k1 = 1.2;
  double b = 0.75;
  double avgdl = 1.0;
  const IdfTable* idf = nullptr;

  /// Throws ValidationError unless k1 ≥ 0, 0 ≤ b ≤ 1, avgdl > 0 and idf set.
  void validate() const;
};

/// Σ over distinct query terms of IDF·TF·(k1+1) / (TF + k1·(1 − b + b·|d|/avgdl)).
double bm25(std::span<const TokenId> query, std::span<const TokenId> doc, const Bm25Config& config);

/// Doc token ids for BM25: wordpieces of the text, no specials.
std::vector<TokenId> bm25_tokens(std::string_view text, const Vocab& vocab);
double average_length(const std::vector<std::vector<TokenId>>& docs);

/// k1 ∈ {0.5, 0.9, 1.2, 2.0} × b ∈ {0, 0.4, 0.75, 0.9}
std::vector<std::pair<double, double>> bm25_grid();

enum class FeatureMode { per_head, aggregated };

std::string_view to_string(FeatureMode mode) noexcept;
std::optional<FeatureMode> parse_feature_mode(std::string_view name) noexcept;

/// 27N + 1 per head (13 heads), 3N + 1 aggregated.
std::size_t feature_width(std::size_t query_length, FeatureMode mode,
                          std::size_t num_heads = 13);

struct FeatureRow {
  std::string query_id;
  std::string doc_id;
  std::size_t query_length = 0;
  FeatureMode mode = FeatureMode::per_head;
  /// [1, block_1 … block_N]; block_i = (−u0(q_i), ms_i,k…, −u0(q_i)·ms_i,k…)
  /// per head, or (−u0(q_i), ms_i, −u0(q_i)·ms_i) with ms_i the uniform mean.
  std::vector<double> x;
  double y = 0.0;  // cross-encoder logit
};

/// One forward pass. Throws ValidationError when `expected_length` is set
/// and differs from the query token count.
FeatureRow extract_features(const ModelWeights& weights, const EncodedInput& input,
                            const U0View& u0, const std::vector<HeadId>& heads, FeatureMode mode,
                            std::optional<std::size_t> expected_length = {});

struct FeatureJob {
  std::string query_id;
  std::string doc_id;
  std::string query;
  std::string doc;
};

std::vector<FeatureRow> extract_feature_rows(const ModelWeights& weights, const Vocab& vocab,
                                             const std::vector<FeatureJob>& jobs,
                                             const U0View& u0, const std::vector<HeadId>& heads,
                                             FeatureMode mode, std::size_t workers = 0);

std::string to_json_line(const FeatureRow& row);
FeatureRow parse_feature_row(std::string_view json_line);
std::vector<FeatureRow> load_feature_rows(const std::filesystem::path& path);
void write_feature_rows(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                        std::string_view header = {});

/// Rows with the same width and a fresh N(0, 1) draw per cell (intercept
/// kept), seeded by (seed, query_id, doc_id).
std::vector<FeatureRow> random_feature_rows(const std::vector<FeatureRow>& rows, std::uint64_t seed);

struct FitOptions {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  double ridge = kDefaultRidge;
};

struct FitStats {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::optional<double> train_pearson;
  std::optional<double> test_pearson;
  std::optional<double> test_spearman;
};

struct SurrogateModel {
  std::size_t query_length = 0;
  FeatureMode mode = FeatureMode::per_head;
  std::vector<double> coefficients;
  FitStats stats;
  std::string warning;  // set when rows < 10 × coefficients

  double predict(const FeatureRow& row) const;
};

/// Seeded split of indices: first round(fraction·n) train, rest test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double train_fraction,
                                                                            std::uint64_t seed);

/// Least-squares fit on the train split. Rows must share one width; throws
/// ValidationError on mixed widths or when an unregularized system is
/// under-determined.
SurrogateModel fit(const std::vector<FeatureRow>& rows, const FitOptions& options = {});

std::string to_json(const SurrogateModel& model);
SurrogateModel parse_surrogate_model(std::string_view json);
void save_surrogate_model(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_surrogate_model(const std::filesystem::path& path);

/// Top-k documents of a pool per query by BM25 (ties keep pool order).
struct Candidate {
  std::size_t doc = 0;  // index into the pool
  double score = 0.0;
};
std::vector<std::vector<Candidate>> bm25_candidates(const std::vector<std::vector<TokenId>>& queries,
                                                    const std::vector<std::vector<TokenId>>& pool,
                                                    const Bm25Config& config, std::size_t k = 10);

/// Scores of one system and the cross-encoder over one candidate list.
struct RankedGroup {
  std::vector<double> reference;  // cross-encoder logits
  std::vector<double> system;
  std::vector<double> labels;
};

struct SystemReport {
  std::string system;
  Summary pearson, spearman, ndcg;
  std::size_t n_groups = 0;
  std::size_t n_skipped = 0;  // fewer than 2 candidates
};

/// Per-group Pearson and Spearman against the reference and NDCG@k of the
/// system ranking; undefined values (zero variance, no positive label) are
/// left out of their summary.
SystemReport evaluate_system(std::string name, const std::vector<RankedGroup>& groups,
                             std::size_t k = 10);

/// system, pearson_median, pearson_mean, pearson_sd, spearman_…, ndcg_…, groups, skipped
CsvTable evaluation_table(const std::vector<SystemReport>& reports);

}  // namespace circuitprobe
