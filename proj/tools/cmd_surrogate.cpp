#include <iostream>
#include <map>
#include <memory>

#include "common.hpp"
#include "circuitprobe/embedding_lab.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/parallel.hpp"
#include "circuitprobe/surrogate.hpp"

namespace {

struct SurrogateArgs {
  std::string base, out, heads, features, models, idf;
  std::string mode = "per_head";
  std::size_t query_length = 0;
  double ridge = cp::kDefaultRidge;
  double train_fraction = 0.8;
  std::size_t ndcg_k = 10;
  std::size_t candidates = 10;
  std::size_t min_rows = 500;
  double k1 = 0.9, b = 0.4;
};

constexpr std::size_t kMaxQueryLength = 22;

cp::FeatureMode feature_mode(const std::string& name) {
  const auto mode = cp::parse_feature_mode(name);
  if (!mode) throw cp::ValidationError("--mode is per_head or aggregated");
  return *mode;
}

fs::path model_path(const fs::path& dir, std::size_t n, cp::FeatureMode mode) {
  return dir / ("model_N" + std::to_string(n) + "_" + std::string(cp::to_string(mode)) + ".json");
}

void run_features(const SurrogateArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto mode = feature_mode(a.mode);
  auto heads = heads_or(a.heads, cp::matching_heads());
  if (heads.empty()) heads = cp::all_heads(m.weights.config());
  auto base = cp::load_base_pairs(a.base);
  apply_limit(base, g.limit);
  if (base.empty()) throw cp::ValidationError(a.base + " has no pairs");
  std::vector<cp::FeatureJob> jobs;
  jobs.reserve(base.size());
  for (const auto& b : base) jobs.push_back({b.query_id, b.doc_id, b.query, b.doc});
  const auto view = cp::extract_u0(m.weights);
  const auto rows = cp::extract_feature_rows(m.weights, m.vocab, jobs, view, heads, mode, g.workers);
  std::map<std::size_t, std::size_t> by_n;
  for (const auto& r : rows) ++by_n[r.query_length];
  std::string lengths;
  for (const auto& [n, count] : by_n) lengths += (lengths.empty() ? "" : ",") + std::to_string(n) + ":" + std::to_string(count);
  const auto header = make_header(g, &m.weights,
                                  {{"base", a.base},
                                   {"mode", std::string(cp::to_string(mode))},
                                   {"heads", std::to_string(heads.size())},
                                   {"rows", std::to_string(rows.size())},
                                   {"query_lengths", lengths}});
  cp::write_feature_rows(a.out, rows, cp::render_header(header));
  std::cout << "wrote " << rows.size() << " rows to " << a.out << "\nN\trows\n";
  for (const auto& [n, count] : by_n) std::cout << n << '\t' << count << '\n';
}

std::map<std::pair<std::size_t, cp::FeatureMode>, std::vector<cp::FeatureRow>> group_rows(
    std::vector<cp::FeatureRow> rows) {
  std::map<std::pair<std::size_t, cp::FeatureMode>, std::vector<cp::FeatureRow>> out;
  for (auto& r : rows) out[{r.query_length, r.mode}].push_back(std::move(r));
  return out;
}

void run_fit(const SurrogateArgs& a, const GlobalOptions& g) {
  const auto groups = group_rows(cp::load_feature_rows(a.features));
  if (a.min_rows < 500)
    std::cerr << "warning: row floor lowered to " << a.min_rows << " (500 for full-scale fits)\n";
  fs::create_directories(a.out);
  cp::FitOptions options{a.train_fraction, g.seed, a.ridge};
  std::size_t fitted = 0;
  std::cout << "N\tmode\ttrain\ttest\ttest_pearson\n";
  for (const auto& [key, rows] : groups) {
    const auto n = key.first;
    if (a.query_length && n != a.query_length) continue;
    if (n < 1 || n > kMaxQueryLength) continue;
    if (rows.size() < a.min_rows) {
      std::cerr << "N=" << n << ": " << rows.size() << " rows, below the floor of " << a.min_rows << "; skipped\n";
      continue;
    }
    auto model = cp::fit(rows, options);
    if (!model.warning.empty()) std::cerr << "N=" << n << ": " << model.warning << '\n';
    cp::save_surrogate_model(model, model_path(a.out, n, key.second));
    ++fitted;
    std::cout << n << '\t' << cp::to_string(key.second) << '\t' << model.stats.n_train << '\t'
              << model.stats.n_test << '\t'
              << (model.stats.test_pearson ? cp::fmt(*model.stats.test_pearson) : "nan") << '\n';
  }
  if (!fitted) throw cp::ValidationError("no query length has enough feature rows to fit");
}

struct QueryScores {
  bool evaluated = false;
  cp::RankedGroup surrogate, random, cross_encoder;
  std::vector<cp::RankedGroup> bm25;
};

void run_eval(const SurrogateArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto mode = feature_mode(a.mode);
  auto heads = heads_or(a.heads, cp::matching_heads());
  if (heads.empty()) heads = cp::all_heads(m.weights.config());
  const auto base = cp::load_base_pairs(a.base);

  // Candidate pool: every distinct document; qrels: binary labels.
  std::vector<const cp::BasePair*> pool;
  std::map<std::string, std::size_t> pool_index;
  std::map<std::pair<std::string, std::string>, double> qrels;
  std::vector<std::pair<std::string, std::string>> queries;  // (query_id, query)
  std::map<std::string, bool> seen_query;
  for (const auto& b : base) {
    if (pool_index.emplace(b.doc_id, pool.size()).second) pool.push_back(&b);
    qrels[{b.query_id, b.doc_id}] = b.label.value_or(0.0) > 0.0 ? 1.0 : 0.0;
    if (!seen_query[b.query_id]) {
      seen_query[b.query_id] = true;
      queries.emplace_back(b.query_id, b.query);
    }
  }
  apply_limit(queries, g.limit);
  std::vector<std::vector<cp::TokenId>> pool_tokens;
  for (const auto* b : pool) pool_tokens.push_back(cp::bm25_tokens(b->doc, m.vocab));
  const auto idf = !a.idf.empty() ? cp::load_idf_table(a.idf, m.vocab.size())
                   : m.idf       ? *m.idf
                                 : cp::corpus_idf(base, m.vocab, a.base);
  const double avgdl = cp::average_length(pool_tokens);
  const cp::Bm25Config retrieval{a.k1, a.b, avgdl, &idf};
  retrieval.validate();
  const auto grid = cp::bm25_grid();

  // One surrogate per query length; the random-feature baseline is fit on
  // the train split of the same feature rows.
  const auto groups = group_rows(cp::load_feature_rows(a.features));
  std::map<std::size_t, cp::SurrogateModel> models, random_models;
  for (std::size_t n = 1; n <= kMaxQueryLength; ++n) {
    const auto path = model_path(a.models, n, mode);
    if (!fs::exists(path)) continue;
    models.emplace(n, cp::load_surrogate_model(path));
    const auto it = groups.find({n, mode});
    if (it == groups.end()) throw cp::ValidationError("no feature rows for N=" + std::to_string(n) + " in " + a.features);
    const auto random_rows = cp::random_feature_rows(it->second, g.seed);
    std::vector<cp::FeatureRow> train;
    for (auto i : cp::split_indices(random_rows.size(), a.train_fraction, g.seed).first) train.push_back(random_rows[i]);
    random_models.emplace(n, cp::fit(train, cp::FitOptions{1.0, g.seed, a.ridge}));
  }
  if (models.empty()) throw cp::ValidationError("no models in " + a.models);

  const auto view = cp::extract_u0(m.weights);
  const std::size_t max_len = std::min(cp::kMaxSequenceLength, m.weights.config().max_positions);
  std::vector<QueryScores> scores(queries.size());
  cp::parallel_for(queries.size(), g.workers, [&](std::size_t qi) {
    const auto& [qid, query] = queries[qi];
    const auto q_tokens = cp::bm25_tokens(query, m.vocab);
    const auto model = models.find(q_tokens.size());
    if (model == models.end()) return;
    const auto& random_model = random_models.at(q_tokens.size());
    auto& out = scores[qi];
    out.bm25.resize(grid.size());
    const auto candidates = cp::bm25_candidates({q_tokens}, pool_tokens, retrieval, a.candidates);
    for (const auto& cand : candidates.front()) {
      const auto* doc = pool[cand.doc];
      auto row = cp::extract_features(m.weights, cp::encode_pair(query, doc->doc, m.vocab, max_len), view, heads, mode,
                                      q_tokens.size());
      row.query_id = qid;
      row.doc_id = doc->doc_id;
      const auto label_it = qrels.find({qid, doc->doc_id});
      const double label = label_it == qrels.end() ? 0.0 : label_it->second;
      const auto random_row = cp::random_feature_rows({row}, g.seed).front();
      auto push = [&](cp::RankedGroup& grp, double v) {
        grp.reference.push_back(row.y);
        grp.system.push_back(v);
        grp.labels.push_back(label);
      };
      push(out.surrogate, model->second.predict(row));
      push(out.random, random_model.predict(random_row));
      push(out.cross_encoder, row.y);
      for (std::size_t c = 0; c < grid.size(); ++c)
        push(out.bm25[c], cp::bm25(q_tokens, pool_tokens[cand.doc], {grid[c].first, grid[c].second, avgdl, &idf}));
    }
    out.evaluated = true;
  });

  std::vector<cp::RankedGroup> surrogate, random, cross;
  std::vector<std::vector<cp::RankedGroup>> bm25(grid.size());
  std::size_t no_model = 0;
  for (auto& s : scores) {
    if (!s.evaluated) {
      ++no_model;
      continue;
    }
    surrogate.push_back(std::move(s.surrogate));
    random.push_back(std::move(s.random));
    cross.push_back(std::move(s.cross_encoder));
    for (std::size_t c = 0; c < grid.size(); ++c) bm25[c].push_back(std::move(s.bm25[c]));
  }
  if (surrogate.empty()) throw cp::ValidationError("no query length in " + a.base + " has a fitted model");

  std::vector<cp::SystemReport> reports;
  reports.push_back(cp::evaluate_system("surrogate", surrogate, a.ndcg_k));
  reports.push_back(cp::evaluate_system("random_features", random, a.ndcg_k));
  reports.push_back(cp::evaluate_system("cross_encoder", cross, a.ndcg_k));
  for (std::size_t c = 0; c < grid.size(); ++c)
    reports.push_back(cp::evaluate_system(
        "bm25(k1=" + cp::fmt(grid[c].first) + ";b=" + cp::fmt(grid[c].second) + ")", bm25[c], a.ndcg_k));
  cp::evaluation_table(reports).write(a.out, make_header(g, &m.weights,
                                                         {{"features", a.features},
                                                          {"models", a.models},
                                                          {"base", a.base},
                                                          {"candidates", std::to_string(a.candidates)},
                                                          {"retrieval", "bm25(k1=" + cp::fmt(a.k1) + ";b=" + cp::fmt(a.b) + ")"},
                                                          {"queries", std::to_string(surrogate.size())},
                                                          {"queries_without_model", std::to_string(no_model)},
                                                          {"idf", idf.corpus}}));
  std::cout << "system\tpearson_median\tspearman_median\tndcg10_median\n";
  for (const auto& r : reports)
    std::cout << r.system << '\t' << cp::fmt(r.pearson.median) << '\t' << cp::fmt(r.spearman.median) << '\t'
              << cp::fmt(r.ndcg.median) << '\n';
}

}  // namespace

void register_surrogate(CLI::App& app, GlobalOptions& g, CommandRegistry& reg) {
  auto* sur = app.add_subcommand("surrogate", "Linear surrogate of the cross-encoder");
  sur->require_subcommand(1);

  auto a = std::make_shared<SurrogateArgs>();
  auto* features = sur->add_subcommand("features", "Extract matching-head features");
  features->add_option("--base", a->base, "Corpus TSV")->required()->check(CLI::ExistingFile);
  features->add_option("--mode", a->mode, "per_head or aggregated");
  features->add_option("--heads", a->heads, "Heads (default: matching heads)");
  features->add_option("--out", a->out, "Output JSONL")->required();
  reg.add(features, [a, &g] { run_features(*a, g); });

  auto b = std::make_shared<SurrogateArgs>();
  auto* fitc = sur->add_subcommand("fit", "Fit one model per query length");
  fitc->add_option("--features", b->features, "Feature JSONL")->required()->check(CLI::ExistingFile);
  fitc->add_option("--query-length,-N", b->query_length, "Only this query length (default: 1..22)");
  fitc->add_option("--min-rows", b->min_rows, "Rows needed to fit a query length");
  fitc->add_option("--ridge", b->ridge, "Ridge penalty");
  fitc->add_option("--train-fraction", b->train_fraction, "Train split fraction")->check(CLI::Range(0.0, 1.0));
  fitc->add_option("--out", b->out, "Model directory")->required();
  reg.add(fitc, [b, &g] { run_fit(*b, g); });

  auto c = std::make_shared<SurrogateArgs>();
  auto* eval = sur->add_subcommand("eval", "Re-rank BM25 candidates with the surrogate and baselines");
  eval->add_option("--base", c->base, "Queries, documents and labels (TSV)")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", c->features, "Feature JSONL the models were fit on")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--models", c->models, "Model directory from `surrogate fit`")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--mode", c->mode, "per_head or aggregated");
  eval->add_option("--heads", c->heads, "Heads (default: matching heads)");
  eval->add_option("--idf", c->idf, "IDF table TSV for BM25")->check(CLI::ExistingFile);
  eval->add_option("--candidates", c->candidates, "BM25 candidates per query");
  eval->add_option("--k1", c->k1, "Retrieval BM25 k1");
  eval->add_option("--b", c->b, "Retrieval BM25 b");
  eval->add_option("--ridge", c->ridge, "Ridge penalty for the random baseline");
  eval->add_option("--train-fraction", c->train_fraction, "Split used at fit time")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--ndcg-k", c->ndcg_k, "NDCG cutoff");
  eval->add_option("--out", c->out, "Output CSV")->required();
  reg.add(eval, [c, &g] { run_eval(*c, g); });
}
