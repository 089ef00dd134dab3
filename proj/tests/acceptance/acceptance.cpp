// One PASS/FAIL line per acceptance criterion. Criteria that need the real
// cross-encoder read CIRCUITPROBE_MODEL_DIR (config.json, model.safetensors,
// vocab.txt, idf.tsv) and CIRCUITPROBE_DATA_DIR (base.tsv, optional
// synonyms.jsonl, sentences.jsonl, unsafe_words.txt, ranking.tsv,
// surrogate.tsv).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/circuit_analysis.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/embedding_lab.hpp"
#include "circuitprobe/encoder.hpp"
#include "circuitprobe/metrics.hpp"
#include "circuitprobe/patching.hpp"
#include "circuitprobe/surrogate.hpp"
#include "circuitprobe/tensor_ops.hpp"
#include "oracles.hpp"
#include "paths.hpp"
#include "synthetic.hpp"

using namespace circuitprobe;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Artifacts {
  fs::path model_dir, data_dir;
  ModelWeights weights;
  Vocab vocab;
  IdfTable idf;
  std::vector<BasePair> base;

  fs::path data(const char* name) const { return data_dir / name; }
  bool has(const char* name) const { return fs::exists(data_dir / name); }
};

std::optional<std::string> missing_artifacts() {
  const char* m = std::getenv("CIRCUITPROBE_MODEL_DIR");
  const char* d = std::getenv("CIRCUITPROBE_DATA_DIR");
  if (!m || !*m || !d || !*d) return "CIRCUITPROBE_MODEL_DIR / CIRCUITPROBE_DATA_DIR not set";
  for (const char* f : {"config.json", "model.safetensors", "vocab.txt"})
    if (!fs::exists(fs::path(m) / f)) return std::string("model dir lacks ") + f;
  if (!fs::exists(fs::path(d) / "base.tsv")) return "data dir lacks base.tsv";
  return std::nullopt;
}

const Artifacts& artifacts() {
  static const std::unique_ptr<Artifacts> a = [] {
    const fs::path m = std::getenv("CIRCUITPROBE_MODEL_DIR");
    const fs::path d = std::getenv("CIRCUITPROBE_DATA_DIR");
    auto vocab = load_vocab(m / "vocab.txt");
    auto base = load_base_pairs(d / "base.tsv");
    const fs::path idf_path = fs::exists(d / "idf.tsv") ? d / "idf.tsv" : m / "idf.tsv";
    auto idf = fs::exists(idf_path) ? load_idf_table(idf_path, vocab.size()) : corpus_idf(base, vocab, "base.tsv");
    return std::make_unique<Artifacts>(
        Artifacts{m, d, load_model_dir(m), std::move(vocab), std::move(idf), std::move(base)});
  }();
  return *a;
}

const TermSelector& terms() {
  static const TermSelector t(artifacts().vocab, artifacts().idf);
  return t;
}

std::vector<DiagnosticPair> generated(Axiom axiom, std::size_t limit) {
  const auto& a = artifacts();
  static SynonymTable synonyms = a.has("synonyms.jsonl") ? load_synonyms(a.data("synonyms.jsonl")) : SynonymTable{};
  static SentenceTable sentences =
      a.has("sentences.jsonl") ? load_sentences(a.data("sentences.jsonl")) : SentenceTable{};
  static const EmbeddingIndex index(a.weights.word_embeddings(), a.vocab);
  GenerationInputs inputs;
  inputs.synonyms = &synonyms;
  inputs.sentences = &sentences;
  inputs.index = &index;
  inputs.donors = a.base;
  inputs.seed = 1;
  auto out = generate(axiom, a.base, terms(), inputs).pairs;
  if (out.size() > limit) out.resize(limit);
  return out;
}

std::vector<PatchPair> encode_all(const std::vector<DiagnosticPair>& pairs, const ModelWeights& w,
                                  const Vocab& vocab) {
  const std::size_t max_len = std::min(kMaxSequenceLength, w.config().max_positions);
  std::vector<PatchPair> out;
  for (const auto& p : pairs) out.push_back(encode_diagnostic(p, 0, vocab, vocab.pad_id(), max_len));
  return out;
}

// 1. Forward parity against the reference fixtures, single-threaded.
Outcome forward_parity() {
  const auto fixtures = load_forward_fixtures(testing::fixture("forward.jsonl"));
  const auto t0 = Clock::now();
  const auto w = testing::make_synthetic_model();
  std::size_t ok = 0;
  double worst = 0.0;
  for (const auto& f : fixtures) {
    EncodedInput in;
    in.token_ids = f.token_ids;
    in.token_type_ids = f.token_type_ids;
    in.attention_mask.assign(f.token_ids.size(), 1);
    const double d = std::abs(forward_logit(w, in) - f.logit);
    worst = std::max(worst, d);
    if (d <= 1e-3) ++ok;
  }
  const double secs = seconds_since(t0);
  return {fixtures.size() >= 1000 && ok >= 999 && secs < 300.0,
          std::to_string(ok) + "/" + std::to_string(fixtures.size()) + " within 1e-3 (max |d| " + num(worst) +
              ") in " + num(secs, 3) + " s on synthetic weights"};
}

// 2. Patching identities on 200 TFC1 pairs.
Outcome patching_identities() {
  const bool real = !missing_artifacts();
  std::vector<PatchPair> pairs;
  std::optional<ModelWeights> synthetic;
  const ModelWeights* w = nullptr;
  if (real) {
    w = &artifacts().weights;
    pairs = encode_all(generated(Axiom::tfc1, 200), *w, artifacts().vocab);
  } else {
    synthetic = testing::make_synthetic_model();
    w = &*synthetic;
    const auto vocab = load_vocab(testing::fixture("vocab.txt"));
    const auto base = load_base_pairs(testing::data_file("toy_corpus.tsv"));
    const TermSelector sel(vocab, corpus_idf(base, vocab, "toy"));
    auto tfc1 = generate(Axiom::tfc1, base, sel, {}).pairs;
    if (tfc1.size() > 200) tfc1.resize(200);
    pairs = encode_all(tfc1, *w, vocab);
  }
  const auto& c = w->config();
  std::vector<HookPoint> everything{HookPoint::embedding()};
  for (const auto& h : all_head_senders(c)) everything.push_back(h);
  for (std::size_t l = 0; l < c.num_layers; ++l) everything.push_back(HookPoint::layer_hook(HookKind::mlp_out, l));

  double full_err = 0.0, empty_err = 0.0, self_err = 0.0;
  for (const auto& pair : pairs) {
    const PairContext ctx(*w, pair);
    full_err = std::max(full_err, std::abs(path_patch(ctx, everything, HookPoint::logit()).logit_patched - ctx.logit_p()));
    empty_err = std::max(empty_err,
                         std::abs(path_patch(ctx, std::span<const HookPoint>{}, HookPoint::logit()).logit_patched -
                                  ctx.logit_b()));
    const PairContext self(*w, PatchPair{pair.baseline, pair.baseline, pair.id});
    self_err = std::max(self_err,
                        std::abs(path_patch(self, everything, HookPoint::logit()).logit_patched - self.logit_b()));
    for (std::size_t l = 0; l < c.num_layers; ++l)
      self_err = std::max(self_err, std::abs(activation_patch(self, HookPoint::layer_hook(HookKind::resid_pre, l))
                                                     .logit_patched -
                                                 self.logit_b()));
  }
  return {pairs.size() >= 200 && full_err <= 1e-4 && empty_err == 0.0 && self_err < 1e-6,
          std::to_string(pairs.size()) + " pairs (" + (real ? "model" : "synthetic weights") + "): full " +
              num(full_err) + ", empty " + num(empty_err) + ", self " + num(self_err)};
}

Outcome blocked() {
  return {false, "blocked: artifacts missing (" + *missing_artifacts() + ")"};
}

// 3. Relevance-scoring heads lead the head sweep; TFC1 and STMC1 agree.
Outcome head_sweep() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  const auto tfc1 = encode_all(generated(Axiom::tfc1, 500), a.weights, a.vocab);
  const auto stmc1 = encode_all(generated(Axiom::stmc1, 500), a.weights, a.vocab);
  const auto senders = all_head_senders(a.weights.config());
  const auto r1 = sweep(a.weights, tfc1, senders, HookPoint::logit());
  const auto r2 = sweep(a.weights, stmc1, senders, HookPoint::logit());
  const auto order = r1.ranking();
  std::set<std::string> top;
  for (std::size_t i = 0; i < std::min<std::size_t>(6, order.size()); ++i)
    top.insert(to_string(r1.senders[order[i]]));
  std::size_t hits = 0;
  for (const auto& h : relevance_scoring_heads())
    hits += top.count(to_string(HookPoint::head_hook(HookKind::head_z, h.layer, h.head)));
  const auto r = pearson(r1.mean_normalized, r2.mean_normalized);
  return {tfc1.size() >= 500 && hits == 4 && r && *r >= 0.9,
          std::to_string(hits) + "/4 relevance heads in top 6 over " + std::to_string(tfc1.size()) +
              " TFC1 pairs; TFC1 vs STMC1 r = " + (r ? num(*r) : "nan")};
}

// 4. Matching heads track similarity and carry the perturbed logit.
Outcome matching_heads_check() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  const auto pairs = generated(Axiom::tfc1, 500);
  const std::size_t max_len = std::min(kMaxSequenceLength, a.weights.config().max_positions);
  std::vector<EncodedInput> baseline, perturbed;
  for (const auto& p : pairs) {
    baseline.push_back(encode_pair(p.query, p.baseline_doc, a.vocab, max_len));
    perturbed.push_back(encode_pair(p.query, p.perturbed_docs.front(), a.vocab, max_len));
  }
  const auto profile = similarity_profile(a.weights, baseline, all_heads(a.weights.config()));
  const auto [in, others] = group_means(profile, matching_heads());
  std::vector<double> before;
  for (const auto& in_p : perturbed) before.push_back(forward_logit(a.weights, in_p));
  std::vector<std::pair<std::size_t, std::size_t>> targets;
  for (const auto& h : matching_heads()) targets.emplace_back(h.layer, h.head);
  const double drop = mean(before) - mean(mean_ablate(a.weights, perturbed, targets));
  return {in - others >= 0.2 && drop >= 3.0,
          "sim-corr gap " + num(in - others) + ", ablation drop " + num(drop) + " over " +
              std::to_string(pairs.size()) + " pairs"};
}

// 5. U0 encodes IDF and edits move doc1 more than doc2.
Outcome idf_edits() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  const auto view = extract_u0(a.weights, &a.idf);
  std::vector<std::string> queries;
  std::set<std::string> seen;
  for (const auto& b : a.base)
    if (queries.size() < 100 && seen.insert(b.query).second) queries.push_back(b.query);
  const auto r = causal_idf_experiment(a.weights, a.vocab, queries, view);
  const double p = view.pearson_vs_idf.value_or(std::nan(""));
  return {p <= -0.6 && r.doc1_spearman && *r.doc1_spearman >= 0.9 && r.doc1_dominance >= 0.8,
          "pearson(u0, idf) " + num(p) + ", doc1 spearman " + (r.doc1_spearman ? num(*r.doc1_spearman) : "nan") +
              ", doc1 dominance " + num(r.doc1_dominance) + " over " + std::to_string(r.queries.size()) + " queries"};
}

// 6. N = 5 surrogate beats every BM25 setting; random features do not.
Outcome surrogate_check() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  const auto corpus = a.has("surrogate.tsv") ? load_base_pairs(a.data("surrogate.tsv")) : a.base;
  const auto t0 = Clock::now();
  std::vector<FeatureJob> jobs;
  for (const auto& b : corpus) jobs.push_back({b.query_id, b.doc_id, b.query, b.doc});
  const auto view = extract_u0(a.weights);
  const auto all = extract_feature_rows(a.weights, a.vocab, jobs, view, matching_heads(), FeatureMode::per_head);
  std::vector<FeatureRow> rows;
  std::map<std::pair<std::string, std::string>, const BasePair*> by_id;
  for (const auto& b : corpus) by_id[{b.query_id, b.doc_id}] = &b;
  for (const auto& r : all)
    if (r.query_length == 5) rows.push_back(r);
  if (rows.size() < 10) return {false, "only " + std::to_string(rows.size()) + " rows with N = 5"};
  const FitOptions options{0.8, 0, kDefaultRidge};
  const auto model = fit(rows, options);
  const auto random = fit(random_feature_rows(rows, 0), options);
  const double secs = seconds_since(t0);

  std::vector<std::vector<TokenId>> docs;
  for (const auto& b : corpus) docs.push_back(bm25_tokens(b.doc, a.vocab));
  const double avgdl = average_length(docs);
  const auto test = split_indices(rows.size(), options.train_fraction, options.seed).second;
  double best_bm25 = -1.0;
  for (const auto& [k1, b] : bm25_grid()) {
    const Bm25Config cfg{k1, b, avgdl, &a.idf};
    std::vector<double> ys, xs;
    for (auto i : test) {
      const auto* bp = by_id.at({rows[i].query_id, rows[i].doc_id});
      xs.push_back(bm25(bm25_tokens(bp->query, a.vocab), bm25_tokens(bp->doc, a.vocab), cfg));
      ys.push_back(rows[i].y);
    }
    if (const auto r = pearson(xs, ys)) best_bm25 = std::max(best_bm25, *r);
  }
  const double r = model.stats.test_pearson.value_or(std::nan(""));
  const double rr = random.stats.test_pearson.value_or(std::nan(""));
  return {corpus.size() >= 5000 && r >= 0.75 && r > best_bm25 && std::abs(rr) <= 0.05 && secs < 1800.0,
          "test r " + num(r) + " vs best BM25 " + num(best_bm25) + ", random " + num(rr) + "; " +
              std::to_string(corpus.size()) + " pairs (" + std::to_string(rows.size()) + " with N = 5) in " +
              num(secs, 4) + " s"};
}

// 7. Axiom behaviour of the logit and the matching heads.
Outcome axioms() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  auto gain = [&](Axiom axiom) {
    std::vector<double> d;
    for (const auto& s : score_diagnostics(a.weights, a.vocab, generated(axiom, 500)))
      d.push_back(s.perturbed.front() - s.baseline);
    return mean(d);
  };
  const double tfc1 = gain(Axiom::tfc1), stmc1 = gain(Axiom::stmc1);
  const auto length = length_curve(a.weights, a.vocab, generated(Axiom::lnc1, 500), matching_heads());
  const auto sat = saturation_curve(a.weights, a.vocab, generated(Axiom::tfc2, 500), matching_heads());
  return {tfc1 > 0 && stmc1 > 0 && length.non_increasing_fraction >= 0.9 && sat.concave_heads() >= 8,
          "TFC1 gain " + num(tfc1) + ", STMC1 gain " + num(stmc1) + ", LNC1 non-increasing " +
              num(length.non_increasing_fraction) + ", TFC2 concave " + std::to_string(sat.concave_heads()) + "/" +
              std::to_string(sat.curves.size())};
}

// 8. Downweighting injected unsafe words.
Outcome adversarial() {
  if (missing_artifacts()) return blocked();
  const auto& a = artifacts();
  if (!a.has("unsafe_words.txt")) return {false, "blocked: data dir lacks unsafe_words.txt"};
  const auto unsafe = load_unsafe_words(a.data("unsafe_words.txt"), a.vocab);
  const auto ranking = ranking_queries(a.has("ranking.tsv") ? load_base_pairs(a.data("ranking.tsv")) : a.base);
  AdversarialOptions options;
  options.seed = 1;
  const auto r = adversarial_experiment(a.weights, a.vocab, generated(Axiom::tfc1, 100000), unsafe,
                                        extract_u0(a.weights), ranking, options);
  const auto& s = r.scales.front();
  return {r.subgroup.size() >= 1000 && s.success_rate >= 0.7 && s.ndcg_ratio >= 0.95,
          "success " + num(s.success_rate) + ", NDCG " + num(s.ndcg) + " (ratio " + num(s.ndcg_ratio) + ") on " +
              std::to_string(r.subgroup.size()) + " samples"};
}

// 9. Numerical oracles.
Outcome oracles() {
  std::mt19937_64 rng(9);
  double metric_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> x(n), y(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng() % 1000) / 37.0;
      y[i] = static_cast<double>(rng() % 7);
      labels[i] = static_cast<double>(rng() % 3);
    }
    if (const auto p = pearson(x, y)) {
      metric_err = std::max(metric_err, std::abs(*p - testing::naive_pearson(x, y)));
      metric_err = std::max(metric_err, std::abs(*spearman(x, y) - testing::naive_pearson(testing::naive_ranks(x),
                                                                                         testing::naive_ranks(y))));
    }
    if (const auto nd = ndcg_for_scores(x, labels, 10))
      metric_err = std::max(metric_err, std::abs(*nd - testing::naive_ndcg(x, labels, 10)));
  }
  double svd_err = 0.0;
  std::normal_distribution<float> nd;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t r = 1 + rng() % 12, c = 1 + rng() % 12;
    Matrix m(r, c);
    for (float& v : m.data()) v = nd(rng);
    const std::size_t k = std::min(r, c);
    const auto got = top_k_svd(m, k).singular_values;
    const auto want = testing::oracle_singular_values(m);
    for (std::size_t i = 0; i < k; ++i) svd_err = std::max(svd_err, std::abs(got[i] - want[i]));
  }
  IdfTable idf;
  idf.idf.assign(10, 1.0);
  idf.observed.assign(10, 1);
  const std::vector<TokenId> q{3}, d{3, 3, 5, 6};
  const double b = bm25(q, d, Bm25Config{1.2, 0.75, 4.0, &idf});
  return {metric_err <= 1e-10 && svd_err <= 1e-4 && std::abs(b - 1.375) <= 1e-9,
          "metrics " + num(metric_err) + ", svd " + num(svd_err) + ", bm25 " + num(b, 12)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"forward parity", forward_parity},
      {"patching identities", patching_identities},
      {"relevance-scoring heads", head_sweep},
      {"matching heads", matching_heads_check},
      {"IDF in U0 and causal edits", idf_edits},
      {"linear surrogate", surrogate_check},
      {"axiom behaviour", axioms},
      {"adversarial downweighting", adversarial},
      {"numerical oracles", oracles},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::atoi(argv[i])));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
              << " (" << num(seconds_since(t0), 3) << " s)" << std::endl;
  }
  return failed ? 1 : 0;
}
