#include "circuitprobe/embedding_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "circuitprobe/error.hpp"
#include "circuitprobe/metrics.hpp"
#include "circuitprobe/parallel.hpp"
#include "circuitprobe/tensor_ops.hpp"
#include "circuitprobe/text_io.hpp"

namespace circuitprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t max_len(const ModelWeights& w) {
  return std::min(kMaxSequenceLength, w.config().max_positions);
}

bool head_exists(const HeadId& h, const ModelConfig& c) {
  return h.layer < c.num_layers && h.head < c.num_heads;
}

std::string repeat(const std::string& word, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + word;
  return out;
}

void check_view(const ModelWeights& w, const U0View& u0) {
  const Matrix& e = w.word_embeddings();
  if (u0.u0.size() != e.rows() || u0.v0.size() != e.cols())
    throw ShapeError("U0View does not match W_E " + e.shape_string());
}

void edit_row(Matrix& e, const U0View& u0, const EditSpec& edit) {
  if (!std::isfinite(edit.scale)) throw ValidationError("edit scale must be finite");
  if (edit.token < 0 || static_cast<std::size_t>(edit.token) >= e.rows())
    throw ValidationError("edit token id " + std::to_string(edit.token) + " out of range");
  const auto t = static_cast<std::size_t>(edit.token);
  const double delta = edit.kind == EditKind::multiplicative
                           ? (edit.scale - 1.0) * u0.u0[t] * u0.sigma0
                           : edit.scale * u0.sigma0;
  auto row = e.row(t);
  for (std::size_t j = 0; j < row.size(); ++j)
    row[j] = static_cast<float>(double(row[j]) + delta * u0.v0[j]);
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

}  // namespace

U0View extract_u0(const ModelWeights& weights, const IdfTable* idf) {
  const Matrix& e = weights.word_embeddings();
  const SvdResult svd = top_k_svd(e, 1);
  U0View view;
  view.u0 = svd.left_vectors[0];
  view.v0 = svd.right_vectors[0];
  view.sigma0 = svd.singular_values[0];
  view.residual = svd.residuals[0];
  if (idf) {
    if (idf->idf.size() != e.rows())
      throw ShapeError("IDF table covers " + std::to_string(idf->idf.size()) + " ids, W_E has " +
                       std::to_string(e.rows()));
    std::vector<double> u, v;
    for (std::size_t i = 0; i < e.rows(); ++i) {
      if (!idf->observed.empty() && !idf->observed[i]) continue;
      u.push_back(view.u0[i]);
      v.push_back(idf->idf[i]);
    }
    view.n_observed = u.size();
    view.pearson_vs_idf = pearson(u, v);
  }
  return view;
}

ModelWeights apply_edit(const ModelWeights& weights, const U0View& u0, const EditSpec& edit) {
  return apply_edits(weights, u0, std::span<const EditSpec>(&edit, 1));
}

ModelWeights apply_edits(const ModelWeights& weights, const U0View& u0,
                         std::span<const EditSpec> edits) {
  check_view(weights, u0);
  Matrix e = weights.word_embeddings();
  for (const auto& edit : edits) edit_row(e, u0, edit);
  return weights.with_word_embeddings(std::move(e));
}

std::vector<double> default_scale_grid() {
  return {-1200.0, -100.0, -10.0, -2.0, 0.0, 0.5, 1.0, 2.0, 10.0, 100.0};
}

CausalQuery causal_query(std::string_view query, const Vocab& vocab) {
  CausalQuery q{std::string(query), {}, {}};
  for (const auto& w : normalized_words(query, vocab)) {
    if (is_stopword(w) || !std::isalnum(static_cast<unsigned char>(w.front()))) continue;
    const auto id = vocab.find(w);
    if (!id || vocab.is_special(*id)) continue;
    if (q.tok1.empty()) {
      q.tok1 = w;
    } else if (w != q.tok1) {
      q.tok2 = w;
      return q;
    }
  }
  throw ValidationError("query needs two distinct single-token content words");
}

CausalResult causal_idf_experiment(const ModelWeights& weights, const Vocab& vocab,
                                   const std::vector<std::string>& queries, const U0View& u0,
                                   const CausalOptions& options) {
  check_view(weights, u0);
  if (options.scales.empty()) throw ValidationError("empty scale grid");
  CausalResult res;
  res.scales = options.scales;
  res.idf_increasing_below_one = !(u0.pearson_vs_idf && *u0.pearson_vs_idf > 0.0);
  for (const auto& q : queries) {
    try {
      res.queries.push_back(causal_query(q, vocab));
    } catch (const ValidationError& e) {
      res.skipped.emplace_back(q, e.what());
    }
  }
  if (res.queries.empty()) throw ValidationError("causal experiment: no usable queries");

  const bool with_attn = head_exists(options.attention_head, weights.config());
  HookSet hooks;
  if (with_attn)
    hooks.add(HookKind::attn_pattern, options.attention_head.layer, options.attention_head.head);
  const std::size_t len = max_len(weights);
  const std::size_t S = options.scales.size();

  struct Raw {
    double base1 = 0.0, base2 = 0.0;
    std::vector<double> d1, d2, attn;
  };
  std::vector<Raw> raw(res.queries.size());
  parallel_for(res.queries.size(), options.workers, [&](std::size_t n) {
    const auto& cq = res.queries[n];
    const TokenId t1 = *vocab.find(cq.tok1);
    const auto in1 = encode_pair(cq.query, repeat(cq.tok1, options.repetitions), vocab, len);
    const auto in2 = encode_pair(cq.query, repeat(cq.tok2, options.repetitions), vocab, len);
    auto score = [&](const ModelWeights& w, double& d1, double& d2, double& attn) {
      const auto cache = forward(w, in1, hooks);
      d1 = cache.logit();
      d2 = forward_logit(w, in2);
      attn = kNaN;
      if (with_attn) {
        const Matrix& p =
            cache.get(HookKind::attn_pattern, options.attention_head.layer, options.attention_head.head);
        attn = 0.0;
        for (std::size_t i = in1.query_span.begin; i < in1.query_span.end; ++i)
          if (in1.token_ids[i] == t1) attn += p(0, i);
      }
    };
    Raw& r = raw[n];
    double unused = 0.0;
    score(weights, r.base1, r.base2, unused);
    r.d1.resize(S);
    r.d2.resize(S);
    r.attn.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      const double scale = options.scales[s];
      if (scale == 1.0) {
        score(weights, r.d1[s], r.d2[s], r.attn[s]);
      } else {
        score(apply_edit(weights, u0, {t1, scale}), r.d1[s], r.d2[s], r.attn[s]);
      }
    }
  });

  std::vector<double> base1;
  for (const auto& r : raw) base1.push_back(r.base1);
  res.offset = mean(base1);
  res.mean_doc1.assign(S, 0.0);
  res.mean_doc2.assign(S, 0.0);
  res.mean_attn.assign(S, 0.0);
  std::size_t dominated = 0;
  const double nq = static_cast<double>(raw.size());
  for (std::size_t n = 0; n < raw.size(); ++n) {
    double delta1 = 0.0, delta2 = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const CausalRow row{n, options.scales[s], raw[n].d1[s] - res.offset,
                          raw[n].d2[s] - res.offset, raw[n].attn[s]};
      res.rows.push_back(row);
      res.mean_doc1[s] += row.doc1 / nq;
      res.mean_doc2[s] += row.doc2 / nq;
      res.mean_attn[s] += row.attn / nq;
      delta1 += std::abs(raw[n].d1[s] - raw[n].base1);
      delta2 += std::abs(raw[n].d2[s] - raw[n].base2);
    }
    if (delta1 > delta2) ++dominated;
  }
  res.doc1_dominance = static_cast<double>(dominated) / nq;

  std::vector<double> mag, d1, at;
  for (std::size_t s = 0; s < S; ++s) {
    const double scale = options.scales[s];
    if (res.idf_increasing_below_one ? scale > 1.0 : scale < 1.0) continue;
    mag.push_back(std::abs(scale - 1.0));
    d1.push_back(res.mean_doc1[s]);
    at.push_back(res.mean_attn[s]);
  }
  if (mag.size() >= 2) {
    res.doc1_spearman = spearman(mag, d1);
    if (with_attn) res.attn_spearman = spearman(mag, at);
  }
  return res;
}

std::vector<TokenId> filter_unsafe_words(const std::vector<std::string>& words, const Vocab& vocab) {
  std::set<TokenId> seen;
  std::vector<TokenId> out;
  for (const auto& raw : words) {
    const std::string w = to_lower_ascii(trim(raw));
    if (w.empty() || w.find(' ') != std::string::npos) continue;
    const auto id = vocab.find(w);
    if (!id || vocab.is_special(*id) || !seen.insert(*id).second) continue;
    out.push_back(*id);
  }
  return out;
}

std::vector<TokenId> load_unsafe_words(const std::filesystem::path& path, const Vocab& vocab) {
  return filter_unsafe_words(read_data_lines(path), vocab);
}

std::vector<RankingQuery> ranking_queries(const std::vector<BasePair>& corpus) {
  std::map<std::string, std::size_t> index;
  std::vector<RankingQuery> out;
  for (const auto& p : corpus) {
    auto [it, fresh] = index.emplace(p.query_id, out.size());
    if (fresh) out.push_back({p.query, {}, {}});
    out[it->second].docs.push_back(p.doc);
    out[it->second].labels.push_back(p.label.value_or(0.0));
  }
  return out;
}

AdversarialResult adversarial_experiment(const ModelWeights& weights, const Vocab& vocab,
                                         const std::vector<DiagnosticPair>& pairs,
                                         const std::vector<TokenId>& unsafe, const U0View& u0,
                                         const std::vector<RankingQuery>& ranking,
                                         const AdversarialOptions& options) {
  check_view(weights, u0);
  if (unsafe.empty()) throw ValidationError("adversarial experiment: no usable unsafe words");
  const std::size_t len = max_len(weights);
  const std::size_t per = std::min(options.words_per_pair, unsafe.size());

  std::vector<std::vector<TokenId>> drawn(pairs.size());
  std::vector<double> safe(pairs.size());
  std::vector<std::vector<double>> injected(pairs.size());
  parallel_for(pairs.size(), options.workers, [&](std::size_t n) {
    const auto& p = pairs[n];
    std::mt19937_64 rng(options.seed ^ fnv1a(p.query_id + "\t" + p.doc_id));
    std::vector<TokenId> words = unsafe;
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (words.size() - i));
      std::swap(words[i], words[j]);
    }
    words.resize(per);
    drawn[n] = words;
    safe[n] = forward_logit(weights, encode_pair(p.query, p.baseline_doc, vocab, len));
    for (TokenId w : words)
      injected[n].push_back(forward_logit(
          weights, encode_pair(p.query, p.baseline_doc + " " + vocab.token(w), vocab, len)));
  });

  AdversarialResult res;
  std::set<TokenId> used;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    for (std::size_t k = 0; k < drawn[n].size(); ++k) {
      ++res.n_candidates;
      if (injected[n][k] - safe[n] > options.min_gain) {
        res.subgroup.push_back({n, drawn[n][k], safe[n], injected[n][k]});
        used.insert(drawn[n][k]);
      }
    }
  }
  if (res.subgroup.empty())
    throw ValidationError("adversarial experiment: no sample where injection raises the score");

  auto mean_ndcg = [&](const ModelWeights& w, std::size_t& counted) {
    std::vector<double> per_query(ranking.size(), kNaN);
    parallel_for(ranking.size(), options.workers, [&](std::size_t q) {
      const auto& rq = ranking[q];
      if (rq.docs.size() < 2) return;
      std::vector<double> scores;
      for (const auto& d : rq.docs) scores.push_back(forward_logit(w, encode_pair(rq.query, d, vocab, len)));
      if (const auto v = ndcg_for_scores(scores, rq.labels, options.ndcg_k)) per_query[q] = *v;
    });
    std::vector<double> valid;
    for (double v : per_query)
      if (!std::isnan(v)) valid.push_back(v);
    counted = valid.size();
    return mean(valid);
  };
  res.ndcg_unedited = ranking.empty() ? kNaN : mean_ndcg(weights, res.ndcg_queries);

  for (double scale : options.scales) {
    std::vector<EditSpec> edits;
    for (TokenId t : used) edits.push_back({t, scale});
    const ModelWeights edited = apply_edits(weights, u0, edits);
    std::vector<std::uint8_t> ok(res.subgroup.size(), 0);
    parallel_for(res.subgroup.size(), options.workers, [&](std::size_t i) {
      const auto& s = res.subgroup[i];
      const auto& p = pairs[s.pair];
      const double a = forward_logit(edited, encode_pair(p.query, p.baseline_doc, vocab, len));
      const double b = forward_logit(
          edited, encode_pair(p.query, p.baseline_doc + " " + vocab.token(s.word), vocab, len));
      ok[i] = b < a ? 1 : 0;
    });
    AdversarialScaleResult r;
    r.scale = scale;
    r.success_rate = static_cast<double>(std::count(ok.begin(), ok.end(), 1)) /
                     static_cast<double>(ok.size());
    std::size_t counted = 0;
    r.ndcg = ranking.empty() ? kNaN : mean_ndcg(edited, counted);
    r.ndcg_ratio = r.ndcg / res.ndcg_unedited;
    res.scales.push_back(r);
  }
  return res;
}

}  // namespace circuitprobe
