#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/circuit_analysis.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/tokenizer.hpp"

namespace circuitprobe {

struct U0View {
  std::vector<double> u0;  // length vocab_size, unit norm
  double sigma0 = 0.0;
  std::vector<double> v0;  // length hidden
  std::optional<double> pearson_vs_idf;
  std::size_t n_observed = 0;  // ids entering the correlation
  double residual = 0.0;
};

/// Top singular triplet of W_E. Sign convention: the largest-magnitude entry
/// of u0 is positive. The IDF correlation uses ids observed in the corpus.
U0View extract_u0(const ModelWeights& weights, const IdfTable* idf = nullptr);

enum class EditKind {
  multiplicative,  // token's U0 contribution u0[t]·σ0 scaled by s
  additive,        // s added to u0[t]
};

struct EditSpec {
  TokenId token = 0;
  double scale = 1.0;
  EditKind kind = EditKind::multiplicative;
};

/// Row t of W_E += (s−1)·u0[t]·σ0·v0 (multiplicative) or s·σ0·v0
/// (additive). Every other row is untouched. Throws ValidationError on a bad
/// token id or a non-finite scale.
ModelWeights apply_edit(const ModelWeights& weights, const U0View& u0, const EditSpec& edit);
ModelWeights apply_edits(const ModelWeights& weights, const U0View& u0,
                         std::span<const EditSpec> edits);

/// s ∈ {−1200, −100, −10, −2, 0, 0.5, 1, 2, 10, 100}
std::vector<double> default_scale_grid();

struct CausalOptions {
  std::vector<double> scales = default_scale_grid();
  std::size_t repetitions = 3;
  HeadId attention_head{10, 1};  // NaN attention when the model lacks it
  std::size_t workers = 0;
};

struct CausalRow {
  std::size_t query = 0;
  double scale = 1.0;
  double doc1 = 0.0;  // normalized scores
  double doc2 = 0.0;
  double attn = 0.0;  // [CLS] → tok1 at the attention head
};

struct CausalQuery {
  std::string query;
  std::string tok1;
  std::string tok2;
};

struct CausalResult {
  std::vector<CausalQuery> queries;
  std::vector<std::pair<std::string, std::string>> skipped;  // (query, reason)
  std::vector<CausalRow> rows;  // query-major, scale order of the grid
  std::vector<double> scales;
  double offset = 0.0;  // mean unscaled doc1 logit, subtracted from every score
  bool idf_increasing_below_one = true;  // from the sign of pearson_vs_idf

  std::vector<double> mean_doc1, mean_doc2, mean_attn;  // per scale
  /// Spearman(|s − 1|, mean doc1) over the IDF-increasing half of the grid.
  std::optional<double> doc1_spearman;
  std::optional<double> attn_spearman;
  /// Queries where Σ_s |Δdoc1| > Σ_s |Δdoc2|.
  double doc1_dominance = 0.0;
};

/// Picks tok1/tok2: the first two distinct non-stopword single-token words.
/// Throws ValidationError when the query has fewer.
CausalQuery causal_query(std::string_view query, const Vocab& vocab);

/// Scores "tok1 tok1 tok1" and "tok2 tok2 tok2" against each query while
/// scaling tok1's U0 component. Queries that are too short are skipped.
CausalResult causal_idf_experiment(const ModelWeights& weights, const Vocab& vocab,
                                   const std::vector<std::string>& queries, const U0View& u0,
                                   const CausalOptions& options = {});

/// One word per line; keeps single-token, in-vocab entries (lower-cased).
std::vector<TokenId> load_unsafe_words(const std::filesystem::path& path, const Vocab& vocab);
std::vector<TokenId> filter_unsafe_words(const std::vector<std::string>& words, const Vocab& vocab);

struct RankingQuery {
  std::string query;
  std::vector<std::string> docs;
  std::vector<double> labels;
};

/// Groups a labelled corpus by query id; unlabeled rows count as 0.
std::vector<RankingQuery> ranking_queries(const std::vector<BasePair>& corpus);

struct AdversarialOptions {
  std::vector<double> scales{-1200.0};
  std::size_t words_per_pair = 3;  // sampled with `seed` per pair
  double min_gain = 0.0;           // injected logit must exceed safe logit by more
  std::size_t ndcg_k = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

struct AdversarialSample {
  std::size_t pair = 0;
  TokenId word = 0;
  double safe = 0.0;
  double injected = 0.0;
};

struct AdversarialScaleResult {
  double scale = 1.0;
  double success_rate = 0.0;  // injected doc now scores below the safe doc
  double ndcg = 0.0;          // mean NDCG@k under the edited model
  double ndcg_ratio = 0.0;    // ndcg / unedited ndcg
};

struct AdversarialResult {
  std::size_t n_candidates = 0;
  std::vector<AdversarialSample> subgroup;
  double ndcg_unedited = 0.0;
  std::size_t ndcg_queries = 0;
  std::vector<AdversarialScaleResult> scales;
};

/// Appends unsafe words to the baseline documents of `pairs`, keeps the
/// samples where that raises the logit by more than min_gain, then
/// downweights every unsafe word in the subgroup at each scale. Throws
/// ValidationError when the subgroup is empty.
AdversarialResult adversarial_experiment(const ModelWeights& weights, const Vocab& vocab,
                                         const std::vector<DiagnosticPair>& pairs,
                                         const std::vector<TokenId>& unsafe, const U0View& u0,
                                         const std::vector<RankingQuery>& ranking,
                                         const AdversarialOptions& options = {});

}  // namespace circuitprobe
