#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/patching.hpp"
#include "circuitprobe/tokenizer.hpp"

namespace circuitprobe {

enum class Axiom { tfc1, stmc1, tfc2, lnc1 };

std::string_view to_string(Axiom axiom) noexcept;
std::optional<Axiom> parse_axiom(std::string_view name) noexcept;  // case-insensitive

struct BasePair {
  std::string query_id;
  std::string query;
  std::string doc_id;
  std::string doc;
  std::optional<double> label;
};

/// TSV: query_id, query, doc_id, doc[, label]. `#` lines are skipped.
std::vector<BasePair> load_base_pairs(const std::filesystem::path& path);

struct DiagnosticPair {
  Axiom axiom = Axiom::tfc1;
  std::string query_id;
  std::string doc_id;
  std::string query;
  std::string baseline_doc;
  std::vector<std::string> perturbed_docs;
  std::string selected_term;
  std::map<std::string, std::string> metadata;
};

std::string to_json_line(const DiagnosticPair& pair);
DiagnosticPair parse_diagnostic(std::string_view json_line);
std::vector<DiagnosticPair> load_diagnostics(const std::filesystem::path& path);
/// `header` (usually render_header output) precedes the JSON lines.
void write_diagnostics(const std::filesystem::path& path, const std::vector<DiagnosticPair>& pairs,
                       std::string_view header = {});

/// The fixed 50-word stopword list.
const std::vector<std::string>& stopwords();
bool is_stopword(std::string_view normalized_word);

struct TermPolicy {
  enum class Rule { max_idf, first };
  Rule rule = Rule::max_idf;
  /// Strict: only non-stopword words that are a single vocab token qualify.
  /// Otherwise any single-token query word is a fallback candidate.
  bool strict = true;
};

/// Picks the "selected query term" of a query.
class TermSelector {
 public:
  TermSelector(const Vocab& vocab, IdfTable idf, TermPolicy policy = {});

  /// Normalized term. Throws ValidationError when nothing qualifies.
  std::string select(std::string_view query) const;
  /// Single-token id of a normalized word, if it has one.
  std::optional<TokenId> single_token(std::string_view word) const;

  const Vocab& vocab() const noexcept { return *vocab_; }
  const IdfTable& idf() const noexcept { return idf_; }
  const TermPolicy& policy() const noexcept { return policy_; }

 private:
  const Vocab* vocab_;
  IdfTable idf_;
  TermPolicy policy_;
};

/// IDF over the documents of a base corpus, for runs without an IDF table.
IdfTable corpus_idf(const std::vector<BasePair>& corpus, const Vocab& vocab,
                    std::string corpus_name = "base");

/// Cosine search over word-embedding rows.
class EmbeddingIndex {
 public:
  EmbeddingIndex(const Matrix& word_embeddings, const Vocab& vocab);

  double cosine(TokenId a, TokenId b) const;
  /// Most similar whole-word token to `id`, skipping "##" pieces, special
  /// and [unused*] tokens and `id` itself; the lowest id wins ties.
  TokenId nearest(TokenId id) const;

 private:
  const Matrix* emb_;
  const Vocab* vocab_;
  std::vector<double> norms_;
  std::vector<std::uint8_t> eligible_;
};

/// term -> up to 20 candidate synonyms; JSONL {term, candidates}.
using SynonymTable = std::unordered_map<std::string, std::vector<std::string>>;
SynonymTable load_synonyms(const std::filesystem::path& path);

struct PronounSentences {
  std::string pronoun;
  std::vector<std::string> sentences;  // five, each starting with the pronoun
};

/// Keyed by query_id + '\t' + term; JSONL {query_id, term, pronoun, sentences}.
using SentenceTable = std::unordered_map<std::string, PronounSentences>;
SentenceTable load_sentences(const std::filesystem::path& path);

/// Fallback for missing TFC2 sentences: "It is <predicate>." templates.
PronounSentences template_sentences();

struct DiagnosticOptions {
  bool append_period = false;  // TFC1/STMC1: append "term." instead of "term"
  bool fallback = true;        // STMC1 nearest neighbour, TFC2 templates
  std::size_t lnc1_steps = 5;
  std::size_t tfc2_steps = 5;
};

DiagnosticPair make_tfc1(const BasePair& base, const TermSelector& terms,
                         const DiagnosticOptions& options = {});

DiagnosticPair make_stmc1(const BasePair& base, const TermSelector& terms,
                          const SynonymTable& synonyms, const EmbeddingIndex& index,
                          const DiagnosticOptions& options = {});

DiagnosticPair make_tfc2(const BasePair& base, const TermSelector& terms,
                         const SentenceTable& sentences, const DiagnosticOptions& options = {});

/// Sentences of every query in a corpus, indexed for LNC1 donor search.
class DonorPool {
 public:
  DonorPool(std::span<const BasePair> corpus, const Vocab& vocab);

  struct Donor {
    std::string query_id;
    std::vector<std::string> query_words;  // content words, sorted
    std::vector<std::string> sentences;
    std::vector<std::vector<std::string>> sentence_words;  // sorted per sentence
  };
  const std::vector<Donor>& donors() const noexcept { return donors_; }

 private:
  std::vector<Donor> donors_;
};

/// Appends 1..5 sentences drawn with `seed` from documents of other queries
/// that share no content word with the base query; drawn sentences contain
/// none of the base query's content words. Donors are visited in a seeded
/// order until enough sentences are collected.
DiagnosticPair make_lnc1(const BasePair& base, const DonorPool& pool, std::uint64_t seed,
                         const TermSelector& terms, const DiagnosticOptions& options = {});
DiagnosticPair make_lnc1(const BasePair& base, std::span<const BasePair> corpus,
                         std::uint64_t seed, const TermSelector& terms,
                         const DiagnosticOptions& options = {});

/// Sentences split after ". ", "! " and "? ", punctuation kept.
std::vector<std::string> split_sentences(std::string_view text);

/// Normalized words of a text (uncased BERT pre-tokenization).
std::vector<std::string> normalized_words(std::string_view text, const Vocab& vocab);

/// Whole-word occurrences of a normalized term in a text.
std::size_t count_term(std::string_view text, std::string_view term, const Vocab& vocab);

struct GenerationResult {
  std::vector<DiagnosticPair> pairs;
  std::vector<std::pair<std::string, std::string>> skipped;  // (query_id, reason)
};

struct GenerationInputs {
  const SynonymTable* synonyms = nullptr;
  const SentenceTable* sentences = nullptr;
  const EmbeddingIndex* index = nullptr;
  std::span<const BasePair> donors;  // LNC1 corpus; defaults to the base pairs
  std::uint64_t seed = 0;
};

/// Builds one diagnostic pair per base pair; failures are skipped and listed.
GenerationResult generate(Axiom axiom, const std::vector<BasePair>& base, const TermSelector& terms,
                          const GenerationInputs& inputs, const DiagnosticOptions& options = {},
                          std::size_t workers = 0);

/// Encodes baseline and perturbation k (0-based) as an aligned patch pair.
PatchPair encode_diagnostic(const DiagnosticPair& pair, std::size_t k, const Vocab& vocab,
                            TokenId filler, std::size_t max_length = kMaxSequenceLength);

struct ScoredDiagnostic {
  double baseline = 0.0;
  std::vector<double> perturbed;
};

/// Raw logits of every baseline and perturbed document.
std::vector<ScoredDiagnostic> score_diagnostics(const ModelWeights& weights, const Vocab& vocab,
                                                const std::vector<DiagnosticPair>& pairs,
                                                std::size_t workers = 0);

}  // namespace circuitprobe
