#include "circuitprobe/surrogate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

#include <json.hpp>

#include "circuitprobe/error.hpp"
#include "circuitprobe/parallel.hpp"
#include "circuitprobe/text_io.hpp"

namespace circuitprobe {

using nlohmann::json;

namespace {

// Box-Muller over raw 64-bit draws, identical on every standard library.
double gaussian(std::mt19937_64& rng) {
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * kScale;
  const double u2 = static_cast<double>(rng() >> 11) * kScale;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t row_width(const std::vector<FeatureRow>& rows) {
  if (rows.empty()) throw ValidationError("no feature rows");
  const std::size_t w = rows.front().x.size();
  for (const auto& r : rows)
    if (r.x.size() != w)
      throw ValidationError("feature rows mix widths " + std::to_string(w) + " and " +
                            std::to_string(r.x.size()));
  return w;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

void Bm25Config::validate() const {
  if (!(k1 >= 0.0)) throw ValidationError("bm25: k1 must be >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("bm25: b must lie in [0, 1]");
  if (!(avgdl > 0.0)) throw ValidationError("bm25: avgdl must be > 0");
  if (!idf) throw ValidationError("bm25: no IDF table");
}

double bm25(std::span<const TokenId> query, std::span<const TokenId> doc, const Bm25Config& c) {
  c.validate();
  std::vector<TokenId> terms(query.begin(), query.end());
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  const double norm = c.k1 * (1.0 - c.b + c.b * static_cast<double>(doc.size()) / c.avgdl);
  double score = 0.0;
  for (TokenId t : terms) {
    const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), t));
    if (tf == 0.0) continue;
    score += (*c.idf)[t] * tf * (c.k1 + 1.0) / (tf + norm);
  }
  return score;
}

std::vector<TokenId> bm25_tokens(std::string_view text, const Vocab& vocab) {
  return wordpiece(text, vocab);
}

double average_length(const std::vector<std::vector<TokenId>>& docs) {
  if (docs.empty()) throw ValidationError("average_length: no documents");
  double total = 0.0;
  for (const auto& d : docs) total += static_cast<double>(d.size());
  return total / static_cast<double>(docs.size());
}

std::vector<std::pair<double, double>> bm25_grid() {
  std::vector<std::pair<double, double>> out;
  for (double k1 : {0.5, 0.9, 1.2, 2.0})
    for (double b : {0.0, 0.4, 0.75, 0.9}) out.emplace_back(k1, b);
  return out;
}

std::string_view to_string(FeatureMode mode) noexcept {
  return mode == FeatureMode::per_head ? "per_head" : "aggregated";
}

std::optional<FeatureMode> parse_feature_mode(std::string_view name) noexcept {
  if (name == "per_head") return FeatureMode::per_head;
  if (name == "aggregated") return FeatureMode::aggregated;
  return std::nullopt;
}

std::size_t feature_width(std::size_t n, FeatureMode mode, std::size_t num_heads) {
  return (mode == FeatureMode::per_head ? 1 + 2 * num_heads : 3) * n + 1;
}

FeatureRow extract_features(const ModelWeights& weights, const EncodedInput& input,
                            const U0View& u0, const std::vector<HeadId>& heads, FeatureMode mode,
                            std::optional<std::size_t> expected_length) {
  const std::size_t n = input.query_span.size();
  if (expected_length && *expected_length != n)
    throw ValidationError("query has " + std::to_string(n) + " tokens, model expects " +
                          std::to_string(*expected_length));
  if (u0.u0.size() != weights.config().vocab_size)
    throw ShapeError("U0View does not match the vocabulary");
  HookSet hooks;
  for (const auto& h : heads) {
    validate(HookPoint::head_hook(HookKind::attn_pattern, h.layer, h.head), weights.config());
    hooks.add(HookKind::attn_pattern, h.layer, h.head);
  }
  const auto cache = forward(weights, input, hooks);
  const auto ms = matching_scores(cache, heads);
  const std::size_t H = heads.size();

  FeatureRow row;
  row.query_length = n;
  row.mode = mode;
  row.y = cache.logit();
  row.x.reserve(feature_width(n, mode, H));
  row.x.push_back(1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId t = input.token_ids[input.query_span.begin + i];
    const double u = -u0.u0[static_cast<std::size_t>(t)];
    row.x.push_back(u);
    if (mode == FeatureMode::per_head) {
      for (std::size_t k = 0; k < H; ++k) row.x.push_back(ms[i * H + k].value);
      for (std::size_t k = 0; k < H; ++k) row.x.push_back(u * ms[i * H + k].value);
    } else {
      double m = 0.0;
      for (std::size_t k = 0; k < H; ++k) m += ms[i * H + k].value;
      m /= static_cast<double>(H);
      row.x.push_back(m);
      row.x.push_back(u * m);
    }
  }
  for (double v : row.x)
    if (!std::isfinite(v)) throw NumericError("non-finite feature value");
  return row;
}

std::vector<FeatureRow> extract_feature_rows(const ModelWeights& weights, const Vocab& vocab,
                                             const std::vector<FeatureJob>& jobs,
                                             const U0View& u0, const std::vector<HeadId>& heads,
                                             FeatureMode mode, std::size_t workers) {
  const std::size_t len = std::min(kMaxSequenceLength, weights.config().max_positions);
  std::vector<FeatureRow> out(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const auto& j = jobs[i];
    out[i] = extract_features(weights, encode_pair(j.query, j.doc, vocab, len), u0, heads, mode);
    out[i].query_id = j.query_id;
    out[i].doc_id = j.doc_id;
  });
  return out;
}

std::string to_json_line(const FeatureRow& row) {
  json j;
  j["query_id"] = row.query_id;
  j["doc_id"] = row.doc_id;
  j["N"] = row.query_length;
  j["mode"] = to_string(row.mode);
  j["x"] = row.x;
  j["y"] = row.y;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

FeatureRow parse_feature_row(std::string_view line) {
  try {
    const json j = json::parse(line);
    FeatureRow r;
    r.query_id = j.value("query_id", std::string{});
    r.doc_id = j.value("doc_id", std::string{});
    r.query_length = j.at("N").get<std::size_t>();
    const auto mode = parse_feature_mode(j.at("mode").get<std::string>());
    if (!mode) throw FormatError("unknown feature mode " + j.at("mode").dump());
    r.mode = *mode;
    r.x = j.at("x").get<std::vector<double>>();
    r.y = j.at("y").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("feature row: ") + e.what());
  }
}

std::vector<FeatureRow> load_feature_rows(const std::filesystem::path& path) {
  std::vector<FeatureRow> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    try {
      out.push_back(parse_feature_row(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError(path.string() + ": no feature rows");
  return out;
}

void write_feature_rows(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                        std::string_view header) {
  std::string out(header);
  for (const auto& r : rows) out += to_json_line(r) + '\n';
  write_text_file(path, out);
}

std::vector<FeatureRow> random_feature_rows(const std::vector<FeatureRow>& rows, std::uint64_t seed) {
  std::vector<FeatureRow> out = rows;
  for (auto& r : out) {
    std::mt19937_64 rng(seed ^ fnv1a(r.query_id + "\t" + r.doc_id));
    for (std::size_t i = 1; i < r.x.size(); ++i) r.x[i] = gaussian(rng);
  }
  return out;
}

double SurrogateModel::predict(const FeatureRow& row) const {
  if (row.x.size() != coefficients.size())
    throw ValidationError("feature row has " + std::to_string(row.x.size()) + " values, model " +
                          std::to_string(coefficients.size()));
  return dot(row.x, coefficients);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double fraction,
                                                                            std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("train fraction must lie in (0, 1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  return {std::move(train), std::move(test)};
}

SurrogateModel fit(const std::vector<FeatureRow>& rows, const FitOptions& options) {
  const std::size_t width = row_width(rows);
  auto [train, test] = split_indices(rows.size(), options.train_fraction, options.seed);
  if (options.ridge == 0.0 && train.size() < width)
    throw ValidationError("fit: " + std::to_string(train.size()) + " training rows for " +
                          std::to_string(width) + " coefficients; use ridge > 0");
  Matrix x(train.size(), width);
  std::vector<double> y(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto& row = rows[train[r]];
    for (std::size_t c = 0; c < width; ++c) x(r, c) = static_cast<float>(row.x[c]);
    y[r] = row.y;
  }
  SurrogateModel m;
  m.query_length = rows.front().query_length;
  m.mode = rows.front().mode;
  m.coefficients = least_squares(x, y, options.ridge);
  if (rows.size() < 10 * width)
    m.warning = std::to_string(rows.size()) + " rows for " + std::to_string(width) +
                " coefficients (fewer than 10x)";

  auto eval = [&](const std::vector<std::size_t>& idx, std::vector<double>& pred, std::vector<double>& truth) {
    for (std::size_t i : idx) {
      pred.push_back(m.predict(rows[i]));
      truth.push_back(rows[i].y);
    }
  };
  std::vector<double> p, t;
  eval(train, p, t);
  m.stats.n_train = train.size();
  if (p.size() >= 2) m.stats.train_pearson = pearson(p, t);
  p.clear();
  t.clear();
  eval(test, p, t);
  m.stats.n_test = test.size();
  if (p.size() >= 2) {
    m.stats.test_pearson = pearson(p, t);
    m.stats.test_spearman = spearman(p, t);
  }
  return m;
}

std::string to_json(const SurrogateModel& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["N"] = m.query_length;
  j["mode"] = to_string(m.mode);
  j["coefficients"] = m.coefficients;
  j["fit_stats"] = {{"n_train", m.stats.n_train},
                    {"n_test", m.stats.n_test},
                    {"train_pearson", opt(m.stats.train_pearson)},
                    {"test_pearson", opt(m.stats.test_pearson)},
                    {"test_spearman", opt(m.stats.test_spearman)}};
  if (!m.warning.empty()) j["warning"] = m.warning;
  return j.dump(2);
}

SurrogateModel parse_surrogate_model(std::string_view text) {
  try {
    const json j = json::parse(text);
    SurrogateModel m;
    m.query_length = j.at("N").get<std::size_t>();
    const auto mode = parse_feature_mode(j.at("mode").get<std::string>());
    if (!mode) throw FormatError("unknown feature mode " + j.at("mode").dump());
    m.mode = *mode;
    m.coefficients = j.at("coefficients").get<std::vector<double>>();
    if (m.coefficients.empty()) throw FormatError("model has no coefficients");
    if (j.contains("fit_stats")) {
      const auto& s = j.at("fit_stats");
      auto opt = [&](const char* k) {
        return s.contains(k) && s.at(k).is_number() ? std::optional<double>(s.at(k).get<double>())
                                                    : std::nullopt;
      };
      m.stats.n_train = s.value("n_train", std::size_t{0});
      m.stats.n_test = s.value("n_test", std::size_t{0});
      m.stats.train_pearson = opt("train_pearson");
      m.stats.test_pearson = opt("test_pearson");
      m.stats.test_spearman = opt("test_spearman");
    }
    m.warning = j.value("warning", std::string{});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("surrogate model: ") + e.what());
  }
}

void save_surrogate_model(const SurrogateModel& model, const std::filesystem::path& path) {
  write_text_file(path, to_json(model) + "\n");
}

SurrogateModel load_surrogate_model(const std::filesystem::path& path) {
  std::string text;
  for (const auto& line : read_lines(path)) text += line + "\n";
  try {
    return parse_surrogate_model(text);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::vector<Candidate>> bm25_candidates(const std::vector<std::vector<TokenId>>& queries,
                                                    const std::vector<std::vector<TokenId>>& pool,
                                                    const Bm25Config& config, std::size_t k) {
  config.validate();
  std::vector<std::vector<Candidate>> out;
  for (const auto& q : queries) {
    std::vector<Candidate> all;
    for (std::size_t d = 0; d < pool.size(); ++d) all.push_back({d, bm25(q, pool[d], config)});
    std::stable_sort(all.begin(), all.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (all.size() > k) all.resize(k);
    out.push_back(std::move(all));
  }
  return out;
}

SystemReport evaluate_system(std::string name, const std::vector<RankedGroup>& groups, std::size_t k) {
  SystemReport rep;
  rep.system = std::move(name);
  std::vector<double> pr, sr, nd;
  for (const auto& g : groups) {
    if (g.system.size() != g.reference.size() || g.labels.size() != g.reference.size())
      throw ValidationError("ranked group sizes differ");
    if (g.system.size() < 2) {
      ++rep.n_skipped;
      continue;
    }
    ++rep.n_groups;
    if (const auto r = pearson(g.system, g.reference)) pr.push_back(*r);
    if (const auto r = spearman(g.system, g.reference)) sr.push_back(*r);
    if (const auto r = ndcg_for_scores(g.system, g.labels, k)) nd.push_back(*r);
  }
  rep.pearson = summarize(pr);
  rep.spearman = summarize(sr);
  rep.ndcg = summarize(nd);
  return rep;
}

CsvTable evaluation_table(const std::vector<SystemReport>& reports) {
  CsvTable t({"system", "pearson_median", "pearson_mean", "pearson_sd", "spearman_median",
              "spearman_mean", "spearman_sd", "ndcg10_median", "ndcg10_mean", "ndcg10_sd",
              "groups", "skipped"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto cells = [&](const Summary& s) {
    return std::array{fmt(s.n ? s.median : nan), fmt(s.n ? s.mean : nan), fmt(s.n ? s.sd : nan)};
  };
  for (const auto& r : reports) {
    const auto p = cells(r.pearson), s = cells(r.spearman), n = cells(r.ndcg);
    t.add_row({r.system, p[0], p[1], p[2], s[0], s[1], s[2], n[0], n[1], n[2], std::to_string(r.n_groups),
               std::to_string(r.n_skipped)});
  }
  return t;
}

}  // namespace circuitprobe
