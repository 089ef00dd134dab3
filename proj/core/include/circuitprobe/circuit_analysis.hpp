#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/encoder.hpp"
#include "circuitprobe/report.hpp"

namespace circuitprobe {

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  std::string str() const { return std::to_string(layer) + "." + std::to_string(head); }
  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

/// "10.1"; throws ValidationError.
HeadId parse_head(std::string_view text);
/// Comma-separated head list.
std::vector<HeadId> parse_head_list(std::string_view text);
std::vector<HeadId> all_heads(const ModelConfig& config);

const std::vector<HeadId>& matching_heads();                // 13 heads
const std::vector<HeadId>& relevance_scoring_heads();       // 10.1 10.4 10.7 10.10
const std::vector<HeadId>& query_contextualization_heads(); // 8.10 9.11

enum class HeadRole { matching, query_contextualization, relevance_scoring, other };
std::string_view to_string(HeadRole role) noexcept;
HeadRole role_of(const HeadId& head);

struct MatchingScore {
  std::size_t position = 0;  // query token index in the sequence
  HeadId head;
  double value = 0.0;        // Σ_j attn[position → j] over the document span
};

/// One score per (query position, head), position-major. Specials are
/// outside both spans and never counted. Throws ValidationError when a
/// head's pattern is missing from the cache.
std::vector<MatchingScore> matching_scores(const ActivationCache& cache,
                                           std::span<const HeadId> heads);

/// Σ_k α_k·MS_k per query position; α defaults to 1/|heads|.
std::vector<double> ms_total(const std::vector<MatchingScore>& scores, std::size_t num_heads,
                             std::span<const double> alphas = {});

struct Correlation {
  std::optional<double> r;
  std::size_t n = 0;
  bool degenerate() const noexcept { return !r.has_value(); }
};

/// Pearson between attn[i → j] and cos(e_i, e_j) over query×document pairs.
/// Embeddings are W_E rows, or the head's layer input when `contextual`.
Correlation similarity_correlation(const ModelWeights& weights, const ActivationCache& cache,
                                   const HeadId& head, bool contextual = false);

enum class IdfAttentionMode {
  cls_to_query,    // attn[CLS → q_i]
  query_to_query,  // mean over query tokens i' of attn[i' → q_i]
};

/// Pearson between attention to each query token and its IDF.
Correlation idf_attention_correlation(const ActivationCache& cache, const IdfTable& idf,
                                      const HeadId& head,
                                      IdfAttentionMode mode = IdfAttentionMode::cls_to_query);

struct HeadCorrelation {
  HeadId head;
  double mean_r = 0.0;  // NaN when every sample was degenerate
  std::size_t n_valid = 0;
  std::size_t n_degenerate = 0;
};

std::vector<HeadCorrelation> similarity_profile(const ModelWeights& weights,
                                                const std::vector<EncodedInput>& inputs,
                                                const std::vector<HeadId>& heads,
                                                bool contextual = false, std::size_t workers = 0);

std::vector<HeadCorrelation> idf_profile(const ModelWeights& weights,
                                         const std::vector<EncodedInput>& inputs,
                                         const IdfTable& idf, const std::vector<HeadId>& heads,
                                         IdfAttentionMode mode = IdfAttentionMode::cls_to_query,
                                         std::size_t workers = 0);

/// Mean of mean_r over the listed heads, and over every other head.
std::pair<double, double> group_means(const std::vector<HeadCorrelation>& profile,
                                      const std::vector<HeadId>& group);

struct SaturationCurve {
  HeadId head;
  std::vector<double> term;    // per k: (1/|Q|) Σ_i Σ_{j ∈ term} attn[i → j]
  std::vector<double> others;  // per k: (1/|Q|) Σ_i mean_{j ∈ others} attn[i → j]

  /// First difference is the largest one.
  bool concave() const;
  bool non_decreasing() const;
};

struct SaturationResult {
  std::vector<SaturationCurve> curves;
  std::size_t n_pairs = 0;
  std::size_t concave_heads() const;
};

/// Over TFC2 pairs: k = 0 is the baseline, k ≥ 1 perturbation k.
SaturationResult saturation_curve(const ModelWeights& weights, const Vocab& vocab,
                                  const std::vector<DiagnosticPair>& tfc2,
                                  const std::vector<HeadId>& heads, std::size_t workers = 0);

struct LengthCurve {
  HeadId head;
  std::vector<double> raw;         // per k: (1/|Q|) Σ_i Σ_{j ∈ doc} attn[i → j]
  std::vector<double> normalized;  // raw / document length in tokens
};

struct LengthResult {
  std::vector<LengthCurve> curves;
  std::vector<double> mean_logit;  // per k
  double non_increasing_fraction = 0.0;
  std::size_t n_pairs = 0;
};

/// Over LNC1 pairs: k = 0 is the baseline, k ≥ 1 perturbation k.
LengthResult length_curve(const ModelWeights& weights, const Vocab& vocab,
                          const std::vector<DiagnosticPair>& lnc1,
                          const std::vector<HeadId>& heads, std::size_t workers = 0);

/// Query × document attention grid of one head.
HeatmapSpec attention_grid(const ActivationCache& cache, const HeadId& head, const Vocab& vocab);

}  // namespace circuitprobe
