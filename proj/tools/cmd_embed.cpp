#include <iostream>
#include <memory>
#include <set>

#include "common.hpp"
#include "circuitprobe/embedding_lab.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

namespace {

struct EmbedArgs {
  std::string idf, out, token, queries, scales, head = "10.1", dataset, unsafe, ranking, svg;
  double scale = 0.0;
  bool additive = false;
  std::size_t repetitions = 3;
  std::size_t words_per_pair = 3;
  double min_gain = 0.0;
  std::size_t ndcg_k = 10;
};

std::optional<cp::IdfTable> optional_idf(const std::string& flag, const LoadedModel& m) {
  if (!flag.empty()) return cp::load_idf_table(flag, m.vocab.size());
  return m.idf;
}

void run_extract(const EmbedArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto idf = optional_idf(a.idf, m);
  const auto view = cp::extract_u0(m.weights, idf ? &*idf : nullptr);
  std::cout << "sigma0\t" << cp::fmt(view.sigma0) << '\n';
  std::cout << "pearson_vs_idf\t" << (view.pearson_vs_idf ? cp::fmt(*view.pearson_vs_idf) : "nan") << '\n';
  std::cout << "n_observed\t" << view.n_observed << '\n';
  std::cout << "residual\t" << cp::fmt(view.residual) << '\n';
  if (a.out.empty()) return;
  cp::CsvTable t({"token_id", "token", "u0", "idf"});
  for (std::size_t i = 0; i < view.u0.size(); ++i) {
    const auto id = static_cast<cp::TokenId>(i);
    t.add_row({std::to_string(i), m.vocab.token(id), cp::fmt(view.u0[i]), idf ? cp::fmt((*idf)[id]) : "nan"});
  }
  t.write(a.out, make_header(g, &m.weights,
                             {{"sigma0", cp::fmt(view.sigma0)},
                              {"pearson_vs_idf", view.pearson_vs_idf ? cp::fmt(*view.pearson_vs_idf) : "nan"},
                              {"idf", idf ? idf->corpus : "none"}}));
}

cp::TokenId single_token(const std::string& word, const cp::Vocab& vocab) {
  const auto ids = cp::wordpiece(word, vocab);
  if (ids.size() != 1 || ids[0] == vocab.unk_id())
    throw cp::ValidationError("'" + word + "' is not a single vocabulary token");
  return ids[0];
}

void run_edit(const EmbedArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto view = cp::extract_u0(m.weights);
  std::vector<cp::EditSpec> edits;
  for (auto word : cp::split(a.token, ',')) {
    word = cp::trim(word);
    if (word.empty()) continue;
    edits.push_back({single_token(std::string(word), m.vocab), a.scale,
                     a.additive ? cp::EditKind::additive : cp::EditKind::multiplicative});
  }
  if (edits.empty()) throw cp::ValidationError("--token names no words");
  const auto edited = cp::apply_edits(m.weights, view, edits);
  cp::save_checkpoint(edited, a.out);
  std::cout << "edited " << edits.size() << " token(s); checksum " << m.weights.checksum_hex() << " -> "
            << edited.checksum_hex() << '\n';
}

std::vector<std::string> load_queries(const std::string& path) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& line : cp::read_data_lines(path)) {
    const auto cols = cp::split(line, '\t');
    // A base-corpus TSV carries the query in its second column.
    std::string q(cols.size() >= 4 ? cols[1] : cols[0]);
    if (seen.insert(q).second) out.push_back(std::move(q));
  }
  return out;
}

void run_causal(const EmbedArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto idf = optional_idf(a.idf, m);
  const auto view = cp::extract_u0(m.weights, idf ? &*idf : nullptr);
  auto queries = load_queries(a.queries);
  apply_limit(queries, g.limit);
  cp::CausalOptions options;
  if (!a.scales.empty()) options.scales = parse_doubles(a.scales);
  options.repetitions = a.repetitions;
  options.attention_head = cp::parse_head(a.head);
  options.workers = g.workers;
  const auto r = cp::causal_idf_experiment(m.weights, m.vocab, queries, view, options);
  for (const auto& [q, reason] : r.skipped) std::cerr << "skipped '" << q << "': " << reason << '\n';
  if (r.queries.empty()) throw cp::ValidationError("no usable queries in " + a.queries);

  cp::CsvTable t({"query", "tok1", "tok2", "scale", "doc1", "doc2", "attn"});
  for (const auto& row : r.rows) {
    const auto& q = r.queries[row.query];
    t.add_row({q.query, q.tok1, q.tok2, cp::fmt(row.scale), cp::fmt(row.doc1), cp::fmt(row.doc2), cp::fmt(row.attn)});
  }
  auto opt = [](const std::optional<double>& v) { return v ? cp::fmt(*v) : std::string("nan"); };
  t.write(a.out, make_header(g, &m.weights,
                             {{"queries", std::to_string(r.queries.size())},
                              {"skipped", std::to_string(r.skipped.size())},
                              {"offset", cp::fmt(r.offset)},
                              {"doc1_spearman", opt(r.doc1_spearman)},
                              {"attn_spearman", opt(r.attn_spearman)},
                              {"doc1_dominance", cp::fmt(r.doc1_dominance)}}));
  if (!a.svg.empty()) {
    std::vector<std::string> labels;
    for (double s : r.scales) labels.push_back(cp::fmt(s));
    cp::write_text_file(a.svg, cp::line_chart_svg("scores under tok1 edits", labels,
                                                  {{"doc1", r.mean_doc1}, {"doc2", r.mean_doc2}}));
  }
  std::cout << "scale\tdoc1\tdoc2\tattn\n";
  for (std::size_t i = 0; i < r.scales.size(); ++i)
    std::cout << cp::fmt(r.scales[i]) << '\t' << cp::fmt(r.mean_doc1[i]) << '\t' << cp::fmt(r.mean_doc2[i]) << '\t'
              << cp::fmt(r.mean_attn[i]) << '\n';
  std::cout << "doc1_spearman\t" << opt(r.doc1_spearman) << "\ndoc1_dominance\t" << cp::fmt(r.doc1_dominance)
            << '\n';
}

void run_adversarial(const EmbedArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto view = cp::extract_u0(m.weights);
  auto pairs = cp::load_diagnostics(a.dataset);
  apply_limit(pairs, g.limit);
  const auto unsafe = cp::load_unsafe_words(a.unsafe, m.vocab);
  if (unsafe.empty()) throw cp::ValidationError(a.unsafe + " has no single-token words");
  std::vector<cp::RankingQuery> ranking;
  if (!a.ranking.empty()) ranking = cp::ranking_queries(cp::load_base_pairs(a.ranking));

  cp::AdversarialOptions options;
  if (!a.scales.empty()) options.scales = parse_doubles(a.scales);
  options.words_per_pair = a.words_per_pair;
  options.min_gain = a.min_gain;
  options.ndcg_k = a.ndcg_k;
  options.seed = g.seed;
  options.workers = g.workers;
  const auto r = cp::adversarial_experiment(m.weights, m.vocab, pairs, unsafe, view, ranking, options);

  cp::CsvTable t({"scale", "success_rate", "ndcg", "ndcg_ratio"});
  for (const auto& s : r.scales)
    t.add_row({cp::fmt(s.scale), cp::fmt(s.success_rate), cp::fmt(s.ndcg), cp::fmt(s.ndcg_ratio)});
  t.write(a.out, make_header(g, &m.weights,
                             {{"candidates", std::to_string(r.n_candidates)},
                              {"subgroup", std::to_string(r.subgroup.size())},
                              {"unsafe_words", std::to_string(unsafe.size())},
                              {"ndcg_unedited", cp::fmt(r.ndcg_unedited)},
                              {"ndcg_queries", std::to_string(r.ndcg_queries)}}));
  std::cout << r.subgroup.size() << " of " << r.n_candidates << " injections raised the logit\n";
  for (const auto& s : r.scales)
    std::cout << "scale " << cp::fmt(s.scale) << ": success " << cp::fmt(s.success_rate) << ", ndcg "
              << cp::fmt(s.ndcg) << " (ratio " << cp::fmt(s.ndcg_ratio) << ")\n";
}

}  // namespace

void register_embed(CLI::App& app, GlobalOptions& g, CommandRegistry& reg) {
  auto* embed = app.add_subcommand("embed", "Low-rank embedding experiments");
  embed->require_subcommand(1);

  auto a = std::make_shared<EmbedArgs>();
  auto* extract = embed->add_subcommand("extract-u0", "Top singular vector of W_E and its IDF correlation");
  extract->add_option("--idf", a->idf, "IDF table TSV")->check(CLI::ExistingFile);
  extract->add_option("--out", a->out, "Per-token CSV");
  reg.add(extract, [a, &g] { run_extract(*a, g); });

  auto b = std::make_shared<EmbedArgs>();
  auto* edit = embed->add_subcommand("edit", "Scale tokens' U0 component and save the checkpoint");
  edit->add_option("--token", b->token, "Word or comma-separated words")->required();
  edit->add_option("--scale", b->scale, "Scale s")->required();
  edit->add_flag("--additive", b->additive, "Add s to u0[t] instead of multiplying");
  edit->add_option("--out", b->out, "Output .safetensors")->required();
  reg.add(edit, [b, &g] { run_edit(*b, g); });

  auto c = std::make_shared<EmbedArgs>();
  auto* causal = embed->add_subcommand("causal", "Score changes under tok1 U0 edits");
  causal->add_option("--queries", c->queries, "One query per line, or a base corpus TSV")
      ->required()
      ->check(CLI::ExistingFile);
  causal->add_option("--idf", c->idf, "IDF table TSV (orients the grid)")->check(CLI::ExistingFile);
  causal->add_option("--scales", c->scales, "Comma-separated scale grid");
  causal->add_option("--repetitions", c->repetitions, "Copies of the token per document");
  causal->add_option("--head", c->head, "Head whose [CLS] attention is recorded");
  causal->add_option("--out", c->out, "Output CSV")->required();
  causal->add_option("--svg", c->svg, "Mean score chart");
  reg.add(causal, [c, &g] { run_causal(*c, g); });

  auto d = std::make_shared<EmbedArgs>();
  auto* adv = embed->add_subcommand("adversarial", "Downweight unsafe words appended to documents");
  adv->add_option("--dataset", d->dataset, "Diagnostic JSONL (baseline documents)")
      ->required()
      ->check(CLI::ExistingFile);
  adv->add_option("--unsafe", d->unsafe, "Word list, one per line")->required()->check(CLI::ExistingFile);
  adv->add_option("--ranking", d->ranking, "Labelled corpus TSV for NDCG")->check(CLI::ExistingFile);
  adv->add_option("--scales", d->scales, "Comma-separated scales");
  adv->add_option("--words-per-pair", d->words_per_pair, "Unsafe words sampled per pair");
  adv->add_option("--min-gain", d->min_gain, "Logit gain required to enter the subgroup");
  adv->add_option("--ndcg-k", d->ndcg_k, "NDCG cutoff");
  adv->add_option("--out", d->out, "Output CSV")->required();
  reg.add(adv, [d, &g] { run_adversarial(*d, g); });
}
