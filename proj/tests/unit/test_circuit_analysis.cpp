#include <doctest.h>

#include <cmath>

#include "circuitprobe/circuit_analysis.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/metrics.hpp"
#include "paths.hpp"
#include "synthetic.hpp"

using namespace circuitprobe;
using circuitprobe::testing::data_file;

namespace {

const Vocab& vocab() {
  static const Vocab v = load_vocab(circuitprobe::testing::fixture("vocab.txt"));
  return v;
}

const ModelWeights& tiny() {
  static const ModelWeights w =
      circuitprobe::testing::make_synthetic_model(circuitprobe::testing::tiny_config());
  return w;
}

const std::vector<BasePair>& corpus() {
  static const auto c = load_base_pairs(data_file("toy_corpus.tsv"));
  return c;
}

const TermSelector& selector() {
  static const TermSelector t(vocab(), corpus_idf(corpus(), vocab(), "toy"));
  return t;
}

std::vector<HeadId> tiny_heads() { return all_heads(tiny().config()); }

// Cache holding one hand-made pattern for head 0.0.
ActivationCache hand_cache(const EncodedInput& in, const Matrix& pattern) {
  ActivationCache c;
  c.set_input(in);
  c.put(HookKind::attn_pattern, 0, 0, pattern);
  return c;
}

}  // namespace

TEST_CASE("head ids and role sets") {
  CHECK(parse_head("10.10") == HeadId{10, 10});
  CHECK(parse_head("10.10").str() == "10.10");
  CHECK_THROWS_AS(parse_head("10"), ValidationError);
  CHECK_THROWS_AS(parse_head("a.1"), ValidationError);
  CHECK(parse_head_list("0.8, 1.7,2.1").size() == 3);
  CHECK(matching_heads().size() == 13);
  CHECK(relevance_scoring_heads().size() == 4);
  CHECK(role_of({10, 7}) == HeadRole::relevance_scoring);
  CHECK(role_of({9, 11}) == HeadRole::query_contextualization);
  CHECK(role_of({5, 9}) == HeadRole::matching);
  CHECK(role_of({0, 0}) == HeadRole::other);
  CHECK(all_heads(tiny().config()).size() == 12);
}

TEST_CASE("matching score hand case") {
  const auto in = encode_pair("cat dog", "cat sat", vocab());
  // [CLS] cat dog [SEP] cat sat [SEP]
  REQUIRE(in.size() == 7);
  Matrix p(7, 7, 0.0f);
  p(1, 4) = 0.5f;
  p(1, 5) = 0.25f;
  p(1, 0) = 0.25f;
  p(2, 6) = 1.0f;  // [SEP] is outside the doc span
  const auto cache = hand_cache(in, p);
  const std::vector<HeadId> h{{0, 0}};
  const auto ms = matching_scores(cache, h);
  REQUIRE(ms.size() == 2);
  CHECK(ms[0].position == 1);
  CHECK(ms[0].value == doctest::Approx(0.75));
  CHECK(ms[1].value == 0.0);
  const auto total = ms_total(ms, 1);
  CHECK(total[0] == doctest::Approx(0.75));
  const std::vector<double> alpha{2.0};
  CHECK(ms_total(ms, 1, alpha)[0] == doctest::Approx(1.5));
  CHECK_THROWS_AS(matching_scores(cache, std::vector<HeadId>{{0, 1}}), ValidationError);
}

TEST_CASE("matching scores from a real pass lie in [0, 1]") {
  const auto heads = tiny_heads();
  for (std::size_t n = 0; n < 10; ++n) {
    const auto in = encode_pair(corpus()[n].query, corpus()[n].doc, vocab());
    HookSet hooks;
    hooks.add(HookKind::attn_pattern);
    const auto cache = forward(tiny(), in, hooks);
    const auto ms = matching_scores(cache, heads);
    CHECK(ms.size() == in.query_span.size() * heads.size());
    for (const auto& m : ms) {
      CHECK(m.value >= 0.0);
      CHECK(m.value <= 1.0 + 1e-6);
    }
    for (double t : ms_total(ms, heads.size())) CHECK(t <= 1.0 + 1e-6);
  }
}

TEST_CASE("similarity correlation: proportional attention gives r = 1") {
  const auto in = encode_pair("cat dog bird", "cat sat on the mat", vocab());
  const Matrix& emb = tiny().word_embeddings();
  auto cos = [&](std::size_t a, std::size_t b) {
    const auto x = emb.row(static_cast<std::size_t>(in.token_ids[a]));
    const auto y = emb.row(static_cast<std::size_t>(in.token_ids[b]));
    double d = 0, nx = 0, ny = 0;
    for (std::size_t k = 0; k < x.size(); ++k) d += double(x[k]) * y[k], nx += double(x[k]) * x[k], ny += double(y[k]) * y[k];
    return d / std::sqrt(nx * ny);
  };
  Matrix p(in.size(), in.size(), 0.0f);
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i)
    for (std::size_t j = in.doc_span.begin; j < in.doc_span.end; ++j)
      p(i, j) = static_cast<float>(0.1 + 0.05 * cos(i, j));
  const auto c = similarity_correlation(tiny(), hand_cache(in, p), {0, 0});
  REQUIRE(c.r);
  CHECK(*c.r == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(c.n == in.query_span.size() * in.doc_span.size());

  // Scale invariance: a different positive scale yields the same r.
  Matrix q = p;
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) q(i, j) *= 3.0f;
  CHECK(*similarity_correlation(tiny(), hand_cache(in, q), {0, 0}).r ==
        doctest::Approx(*c.r).epsilon(1e-6));

  Matrix u(in.size(), in.size(), 0.125f);
  CHECK(similarity_correlation(tiny(), hand_cache(in, u), {0, 0}).degenerate());
}

TEST_CASE("idf correlation modes") {
  const auto in = encode_pair("cat dog bird", "cat", vocab());
  IdfTable idf = corpus_idf(corpus(), vocab(), "toy");
  Matrix p(in.size(), in.size(), 0.0f);
  for (std::size_t i = in.query_span.begin; i < in.query_span.end; ++i) {
    p(0, i) = static_cast<float>(0.2 * idf[in.token_ids[i]]);
    for (std::size_t s = in.query_span.begin; s < in.query_span.end; ++s)
      p(s, i) = static_cast<float>(-0.1 * idf[in.token_ids[i]] + 1.0);
  }
  const auto cache = hand_cache(in, p);
  const auto cls = idf_attention_correlation(cache, idf, {0, 0});
  const auto qq = idf_attention_correlation(cache, idf, {0, 0}, IdfAttentionMode::query_to_query);
  if (cls.r) {
    CHECK(*cls.r == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(*qq.r == doctest::Approx(-1.0).epsilon(1e-5));
  } else {
    CHECK(qq.degenerate());  // equal IDFs
  }
  const auto two = encode_pair("cat dog", "cat", vocab());
  CHECK(idf_attention_correlation(hand_cache(two, Matrix(two.size(), two.size(), 0.1f)), idf, {0, 0})
            .degenerate());
}

TEST_CASE("profiles are deterministic across worker counts") {
  std::vector<EncodedInput> inputs;
  for (std::size_t n = 0; n < 12; ++n)
    inputs.push_back(encode_pair(corpus()[n].query, corpus()[n].doc, vocab()));
  const auto heads = tiny_heads();
  const auto a = similarity_profile(tiny(), inputs, heads, false, 1);
  const auto b = similarity_profile(tiny(), inputs, heads, false, 3);
  REQUIRE(a.size() == heads.size());
  for (std::size_t h = 0; h < a.size(); ++h) {
    CHECK(a[h].n_valid + a[h].n_degenerate == inputs.size());
    if (a[h].n_valid) CHECK(a[h].mean_r == b[h].mean_r);
  }
  const auto ctx = similarity_profile(tiny(), inputs, heads, true, 1);
  CHECK(ctx.size() == heads.size());
  const auto idf = idf_profile(tiny(), inputs, corpus_idf(corpus(), vocab(), "toy"), heads);
  CHECK(idf.size() == heads.size());

  std::vector<HeadCorrelation> prof{{{0, 0}, 0.8, 1, 0}, {{0, 1}, 0.2, 1, 0}, {{0, 2}, 0.4, 1, 0},
                                    {{0, 3}, std::nan(""), 0, 1}};
  const auto [in_g, out_g] = group_means(prof, {{0, 0}});
  CHECK(in_g == doctest::Approx(0.8));
  CHECK(out_g == doctest::Approx(0.3));
}

TEST_CASE("saturation curve shape") {
  std::vector<DiagnosticPair> tfc2;
  for (std::size_t n = 0; n < 6; ++n) tfc2.push_back(make_tfc2(corpus()[n], selector(), {}));
  const auto heads = tiny_heads();
  const auto res = saturation_curve(tiny(), vocab(), tfc2, heads, 2);
  CHECK(res.n_pairs == 6);
  REQUIRE(res.curves.size() == heads.size());
  for (const auto& c : res.curves) {
    REQUIRE(c.term.size() == 6);
    CHECK(c.term[0] == 0.0);  // the baseline only has pronouns
    CHECK(c.term[5] > 0.0);
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(c.term[k] <= 1.0 + 1e-6);
      CHECK(c.others[k] >= 0.0);
    }
  }
  CHECK(res.concave_heads() <= heads.size());

  SaturationCurve concave{{0, 0}, {0.0, 0.5, 0.7, 0.8}, {}};
  CHECK(concave.concave());
  CHECK(concave.non_decreasing());
  SaturationCurve linear{{0, 0}, {0.0, 0.1, 0.2, 0.3}, {}};
  CHECK_FALSE(linear.concave());

  auto bad = tfc2;
  bad[1].perturbed_docs.pop_back();
  CHECK_THROWS_AS(saturation_curve(tiny(), vocab(), bad, heads), ValidationError);
}

TEST_CASE("length curve shape") {
  std::vector<DiagnosticPair> lnc1;
  for (std::size_t n = 0; n < 5; ++n) lnc1.push_back(make_lnc1(corpus()[n], corpus(), 3, selector()));
  const auto heads = tiny_heads();
  const auto res = length_curve(tiny(), vocab(), lnc1, heads, 1);
  REQUIRE(res.mean_logit.size() == 6);
  CHECK(res.non_increasing_fraction >= 0.0);
  CHECK(res.non_increasing_fraction <= 1.0);
  const auto scored = score_diagnostics(tiny(), vocab(), lnc1, 1);
  double mean0 = 0.0;
  for (const auto& s : scored) mean0 += s.baseline / 5.0;
  CHECK(res.mean_logit[0] == doctest::Approx(mean0).epsilon(1e-9));
  for (const auto& c : res.curves) {
    REQUIRE(c.raw.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
      CHECK(c.raw[k] >= 0.0);
      CHECK(c.raw[k] <= 1.0 + 1e-6);
      CHECK(c.normalized[k] < c.raw[k] + 1e-12);
    }
  }
}

TEST_CASE("attention grid") {
  const auto in = encode_pair("cat dog", "cat sat", vocab());
  Matrix p(in.size(), in.size(), 0.0f);
  p(1, 4) = 1.0f;
  const auto spec = attention_grid(hand_cache(in, p), {0, 0}, vocab());
  CHECK(spec.row_labels == std::vector<std::string>{"cat", "dog"});
  CHECK(spec.col_labels == std::vector<std::string>{"cat", "sat"});
  CHECK(spec.values[0][0] == 1.0);
  CHECK(heatmap_svg(spec).find("<svg") != std::string::npos);
}
