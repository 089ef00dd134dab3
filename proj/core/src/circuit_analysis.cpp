#include "circuitprobe/circuit_analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "circuitprobe/error.hpp"
#include "circuitprobe/metrics.hpp"
#include "circuitprobe/parallel.hpp"

namespace circuitprobe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

HookSet pattern_hooks(const std::vector<HeadId>& heads) {
  HookSet hooks;
  for (const auto& h : heads) hooks.add(HookKind::attn_pattern, h.layer, h.head);
  return hooks;
}

std::size_t max_layer(const std::vector<HeadId>& heads) {
  std::size_t m = 0;
  for (const auto& h : heads) m = std::max(m, h.layer);
  return m;
}

void check_heads(const std::vector<HeadId>& heads, const ModelConfig& c) {
  if (heads.empty()) throw ValidationError("no heads given");
  for (const auto& h : heads)
    validate(HookPoint::head_hook(HookKind::attn_pattern, h.layer, h.head), c);
}

const Matrix& pattern(const ActivationCache& cache, const HeadId& h) {
  return cache.get(HookKind::attn_pattern, h.layer, h.head);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += double(a[k]) * b[k];
    na += double(a[k]) * a[k];
    nb += double(b[k]) * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<std::size_t> term_positions(const EncodedInput& in, const std::vector<TokenId>& pieces) {
  std::vector<std::size_t> out;
  if (pieces.empty()) return out;
  const std::size_t n = pieces.size();
  for (std::size_t j = in.doc_span.begin; j + n <= in.doc_span.end; ++j) {
    if (!std::equal(pieces.begin(), pieces.end(), in.token_ids.begin() + static_cast<std::ptrdiff_t>(j)))
      continue;
    for (std::size_t k = 0; k < n; ++k) out.push_back(j + k);
    j += n - 1;
  }
  return out;
}

std::vector<std::size_t> other_positions(const EncodedInput& in) {
  std::vector<TokenId> q(in.token_ids.begin() + static_cast<std::ptrdiff_t>(in.query_span.begin),
                         in.token_ids.begin() + static_cast<std::ptrdiff_t>(in.query_span.end));
  std::vector<std::size_t> out;
  for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j)
    if (std::find(q.begin(), q.end(), in.token_ids[j]) == q.end()) out.push_back(j);
  return out;
}

std::vector<HeadCorrelation> reduce_profile(const std::vector<HeadId>& heads,
                                            const std::vector<std::vector<Correlation>>& per_input) {
  std::vector<HeadCorrelation> out;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    HeadCorrelation hc{heads[h], kNaN, 0, 0};
    double sum = 0.0;
    for (const auto& row : per_input) {
      if (row[h].r) {
        sum += *row[h].r;
        ++hc.n_valid;
      } else {
        ++hc.n_degenerate;
      }
    }
    if (hc.n_valid) hc.mean_r = sum / static_cast<double>(hc.n_valid);
    out.push_back(hc);
  }
  return out;
}

std::size_t check_steps(const std::vector<DiagnosticPair>& pairs, const char* what) {
  if (pairs.empty()) throw ValidationError(std::string(what) + ": empty dataset");
  const std::size_t steps = pairs.front().perturbed_docs.size();
  for (const auto& p : pairs)
    if (p.perturbed_docs.size() != steps)
      throw ValidationError(std::string(what) + ": pairs have differing perturbation counts");
  return steps;
}

const std::string& doc_at(const DiagnosticPair& p, std::size_t k) {
  return k == 0 ? p.baseline_doc : p.perturbed_docs[k - 1];
}

}  // namespace

HeadId parse_head(std::string_view text) {
  auto fail = [&] { return ValidationError("bad head '" + std::string(text) + "'; expected L.H"); };
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) throw fail();
  HeadId h;
  auto num = [](std::string_view s, std::size_t& v) {
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && ec == std::errc{} && p == s.data() + s.size();
  };
  if (!num(text.substr(0, dot), h.layer) || !num(text.substr(dot + 1), h.head)) throw fail();
  return h;
}

std::vector<HeadId> parse_head_list(std::string_view text) {
  std::vector<HeadId> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    auto item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) out.push_back(parse_head(item));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ValidationError("empty head list");
  return out;
}

std::vector<HeadId> all_heads(const ModelConfig& config) {
  std::vector<HeadId> out;
  for (std::size_t l = 0; l < config.num_layers; ++l)
    for (std::size_t h = 0; h < config.num_heads; ++h) out.push_back({l, h});
  return out;
}

const std::vector<HeadId>& matching_heads() {
  static const std::vector<HeadId> heads{{0, 8}, {1, 7}, {2, 1}, {3, 1}, {4, 9}, {5, 7}, {5, 9},
                                         {6, 3}, {6, 5}, {7, 9}, {8, 0}, {8, 1}, {8, 8}};
  return heads;
}

const std::vector<HeadId>& relevance_scoring_heads() {
  static const std::vector<HeadId> heads{{10, 1}, {10, 4}, {10, 7}, {10, 10}};
  return heads;
}

const std::vector<HeadId>& query_contextualization_heads() {
  static const std::vector<HeadId> heads{{8, 10}, {9, 11}};
  return heads;
}

std::string_view to_string(HeadRole role) noexcept {
  switch (role) {
    case HeadRole::matching: return "matching";
    case HeadRole::query_contextualization: return "query_contextualization";
    case HeadRole::relevance_scoring: return "relevance_scoring";
    default: return "other";
  }
}

HeadRole role_of(const HeadId& head) {
  auto in = [&](const std::vector<HeadId>& v) { return std::find(v.begin(), v.end(), head) != v.end(); };
  if (in(relevance_scoring_heads())) return HeadRole::relevance_scoring;
  if (in(query_contextualization_heads())) return HeadRole::query_contextualization;
  if (in(matching_heads())) return HeadRole::matching;
  return HeadRole::other;
}

std::vector<MatchingScore> matching_scores(const ActivationCache& cache,
                                           std::span<const HeadId> heads) {
  const EncodedInput& in = cache.input();
  std::vector<const Matrix*> pats;
  for (const auto& h : heads) pats.push_back(&pattern(cache, h));
  std::vector<MatchingScore> out;
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
    for (std::size_t k = 0; k < heads.size(); ++k) {
      double s = 0.0;
      for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j) s += (*pats[k])(i, j);
      out.push_back({i, heads[k], s});
    }
  }
  return out;
}

std::vector<double> ms_total(const std::vector<MatchingScore>& scores, std::size_t num_heads,
                             std::span<const double> alphas) {
  if (num_heads == 0 || scores.size() % num_heads != 0)
    throw ValidationError("ms_total: scores are not a whole number of positions");
  if (!alphas.empty() && alphas.size() != num_heads)
    throw ValidationError("ms_total: " + std::to_string(alphas.size()) + " weights for " +
                          std::to_string(num_heads) + " heads");
  std::vector<double> out(scores.size() / num_heads, 0.0);
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const std::size_t k = n % num_heads;
    const double a = alphas.empty() ? 1.0 / static_cast<double>(num_heads) : alphas[k];
    out[n / num_heads] += a * scores[n].value;
  }
  return out;
}

Correlation similarity_correlation(const ModelWeights& weights, const ActivationCache& cache,
                                   const HeadId& head, bool contextual) {
  const EncodedInput& in = cache.input();
  const Matrix& p = pattern(cache, head);
  const Matrix* ctx = contextual ? &cache.get(HookKind::resid_pre, head.layer) : nullptr;
  auto vec = [&](std::size_t pos) {
    return ctx ? ctx->row(pos)
               : weights.word_embeddings().row(static_cast<std::size_t>(in.token_ids[pos]));
  };
  std::vector<double> att, sim;
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
    for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j) {
      att.push_back(p(i, j));
      sim.push_back(cosine(vec(i), vec(j)));
    }
  }
  Correlation c{std::nullopt, att.size()};
  if (att.size() >= 3) c.r = pearson(att, sim);
  return c;
}

Correlation idf_attention_correlation(const ActivationCache& cache, const IdfTable& idf,
                                      const HeadId& head, IdfAttentionMode mode) {
  const EncodedInput& in = cache.input();
  const Matrix& p = pattern(cache, head);
  std::vector<double> att, v;
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
    double a = 0.0;
    if (mode == IdfAttentionMode::cls_to_query) {
      a = p(0, i);
    } else {
      for (std::size_t s = in.query_span.begin; s < in.query_span.end; ++s) a += p(s, i);
      a /= static_cast<double>(in.query_span.size());
    }
    att.push_back(a);
    v.push_back(idf[in.token_ids[i]]);
  }
  Correlation c{std::nullopt, att.size()};
  if (att.size() >= 3) c.r = pearson(att, v);
  return c;
}

std::vector<HeadCorrelation> similarity_profile(const ModelWeights& weights,
                                                const std::vector<EncodedInput>& inputs,
                                                const std::vector<HeadId>& heads, bool contextual,
                                                std::size_t workers) {
  check_heads(heads, weights.config());
  HookSet hooks = pattern_hooks(heads);
  if (contextual) hooks.add(HookKind::resid_pre);
  std::vector<std::vector<Correlation>> per(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t n) {
    const auto cache = forward(weights, inputs[n], hooks, {}, {max_layer(heads)});
    for (const auto& h : heads) per[n].push_back(similarity_correlation(weights, cache, h, contextual));
  });
  return reduce_profile(heads, per);
}

std::vector<HeadCorrelation> idf_profile(const ModelWeights& weights,
                                         const std::vector<EncodedInput>& inputs,
                                         const IdfTable& idf, const std::vector<HeadId>& heads,
                                         IdfAttentionMode mode, std::size_t workers) {
  check_heads(heads, weights.config());
  const HookSet hooks = pattern_hooks(heads);
  std::vector<std::vector<Correlation>> per(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t n) {
    const auto cache = forward(weights, inputs[n], hooks, {}, {max_layer(heads)});
    for (const auto& h : heads) per[n].push_back(idf_attention_correlation(cache, idf, h, mode));
  });
  return reduce_profile(heads, per);
}

std::pair<double, double> group_means(const std::vector<HeadCorrelation>& profile,
                                      const std::vector<HeadId>& group) {
  double in_sum = 0.0, out_sum = 0.0;
  std::size_t in_n = 0, out_n = 0;
  for (const auto& hc : profile) {
    if (std::isnan(hc.mean_r)) continue;
    if (std::find(group.begin(), group.end(), hc.head) != group.end()) {
      in_sum += hc.mean_r;
      ++in_n;
    } else {
      out_sum += hc.mean_r;
      ++out_n;
    }
  }
  return {in_n ? in_sum / static_cast<double>(in_n) : kNaN,
          out_n ? out_sum / static_cast<double>(out_n) : kNaN};
}

bool SaturationCurve::concave() const {
  if (term.size() < 3) return false;
  const double first = term[1] - term[0];
  for (std::size_t k = 2; k < term.size(); ++k)
    if (term[k] - term[k - 1] >= first) return false;
  return true;
}

bool SaturationCurve::non_decreasing() const {
  for (std::size_t k = 1; k < term.size(); ++k)
    if (term[k] < term[k - 1]) return false;
  return true;
}

std::size_t SaturationResult::concave_heads() const {
  return static_cast<std::size_t>(
      std::count_if(curves.begin(), curves.end(), [](const auto& c) { return c.concave(); }));
}

SaturationResult saturation_curve(const ModelWeights& weights, const Vocab& vocab,
                                  const std::vector<DiagnosticPair>& tfc2,
                                  const std::vector<HeadId>& heads, std::size_t workers) {
  check_heads(heads, weights.config());
  const std::size_t points = check_steps(tfc2, "saturation_curve") + 1;
  const HookSet hooks = pattern_hooks(heads);
  const std::size_t max_len = std::min(kMaxSequenceLength, weights.config().max_positions);
  // [pair][k][head] -> (term, others)
  std::vector<std::vector<std::vector<std::pair<double, double>>>> per(tfc2.size());
  parallel_for(tfc2.size(), workers, [&](std::size_t n) {
    const auto& pair = tfc2[n];
    const auto pieces = wordpiece(pair.selected_term, vocab);
    per[n].resize(points);
    for (std::size_t k = 0; k < points; ++k) {
      const auto in = encode_pair(pair.query, doc_at(pair, k), vocab, max_len);
      const auto cache = forward(weights, in, hooks, {}, {max_layer(heads)});
      const auto term_pos = term_positions(in, pieces);
      const auto others = other_positions(in);
      const double nq = static_cast<double>(std::max<std::size_t>(1, in.query_span.size()));
      for (const auto& h : heads) {
        const Matrix& p = pattern(cache, h);
        double t = 0.0, o = 0.0;
        for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
          for (std::size_t j : term_pos) t += p(i, j);
          double os = 0.0;
          for (std::size_t j : others) os += p(i, j);
          if (!others.empty()) o += os / static_cast<double>(others.size());
        }
        per[n][k].emplace_back(t / nq, o / nq);
      }
    }
  });
  SaturationResult res;
  res.n_pairs = tfc2.size();
  for (std::size_t h = 0; h < heads.size(); ++h) {
    SaturationCurve c{heads[h], std::vector<double>(points, 0.0), std::vector<double>(points, 0.0)};
    for (const auto& pair : per)
      for (std::size_t k = 0; k < points; ++k) {
        c.term[k] += pair[k][h].first;
        c.others[k] += pair[k][h].second;
      }
    for (std::size_t k = 0; k < points; ++k) {
      c.term[k] /= static_cast<double>(per.size());
      c.others[k] /= static_cast<double>(per.size());
    }
    res.curves.push_back(std::move(c));
  }
  return res;
}

LengthResult length_curve(const ModelWeights& weights, const Vocab& vocab,
                          const std::vector<DiagnosticPair>& lnc1,
                          const std::vector<HeadId>& heads, std::size_t workers) {
  check_heads(heads, weights.config());
  const std::size_t points = check_steps(lnc1, "length_curve") + 1;
  const HookSet hooks = pattern_hooks(heads);
  const std::size_t max_len = std::min(kMaxSequenceLength, weights.config().max_positions);
  struct Sample {
    std::vector<double> logit;
    std::vector<std::vector<std::pair<double, double>>> att;  // [k][head] (raw, normalized)
  };
  std::vector<Sample> per(lnc1.size());
  parallel_for(lnc1.size(), workers, [&](std::size_t n) {
    auto& s = per[n];
    s.att.resize(points);
    for (std::size_t k = 0; k < points; ++k) {
      const auto in = encode_pair(lnc1[n].query, doc_at(lnc1[n], k), vocab, max_len);
      const auto cache = forward(weights, in, hooks);
      s.logit.push_back(cache.logit());
      const double nq = static_cast<double>(std::max<std::size_t>(1, in.query_span.size()));
      const double nd = static_cast<double>(std::max<std::size_t>(1, in.doc_span.size()));
      for (const auto& h : heads) {
        const Matrix& p = pattern(cache, h);
        double raw = 0.0;
        for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i)
          for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j) raw += p(i, j);
        raw /= nq;
        s.att[k].emplace_back(raw, raw / nd);
      }
    }
  });
  LengthResult res;
  res.n_pairs = lnc1.size();
  res.mean_logit.assign(points, 0.0);
  std::size_t mono = 0;
  for (const auto& s : per) {
    bool ok = true;
    for (std::size_t k = 0; k < points; ++k) {
      res.mean_logit[k] += s.logit[k];
      if (k && s.logit[k] > s.logit[k - 1]) ok = false;
    }
    mono += ok ? 1 : 0;
  }
  const double n = static_cast<double>(per.size());
  for (double& v : res.mean_logit) v /= n;
  res.non_increasing_fraction = static_cast<double>(mono) / n;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    LengthCurve c{heads[h], std::vector<double>(points, 0.0), std::vector<double>(points, 0.0)};
    for (const auto& s : per)
      for (std::size_t k = 0; k < points; ++k) {
        c.raw[k] += s.att[k][h].first / n;
        c.normalized[k] += s.att[k][h].second / n;
      }
    res.curves.push_back(std::move(c));
  }
  return res;
}

HeatmapSpec attention_grid(const ActivationCache& cache, const HeadId& head, const Vocab& vocab) {
  const EncodedInput& in = cache.input();
  const Matrix& p = pattern(cache, head);
  HeatmapSpec spec;
  spec.title = "attention " + head.str();
  spec.diverging = false;
  for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j)
    spec.col_labels.push_back(vocab.token(in.token_ids[j]));
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
    spec.row_labels.push_back(vocab.token(in.token_ids[i]));
    std::vector<double> row;
    for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j) row.push_back(p(i, j));
    spec.values.push_back(std::move(row));
  }
  return spec;
}

}  // namespace circuitprobe
