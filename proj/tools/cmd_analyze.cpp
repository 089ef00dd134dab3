#include <algorithm>
#include <iostream>
#include <memory>
#include <numeric>

#include "common.hpp"
#include "circuitprobe/encoder.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

namespace {

struct AnalyzeArgs {
  std::string dataset, out, svg, heads, idf;
  std::string group;
  std::string idf_mode = "cls";
  bool contextual = false;
  bool ablate = false;
};

std::vector<cp::DiagnosticPair> load_limited(const std::string& path, std::size_t limit) {
  auto data = cp::load_diagnostics(path);
  apply_limit(data, limit);
  if (data.empty()) throw cp::ValidationError(path + " has no pairs");
  return data;
}

std::vector<cp::EncodedInput> encode_docs(const std::vector<cp::DiagnosticPair>& data, const LoadedModel& m,
                                          bool perturbed) {
  const std::size_t max_len = std::min(cp::kMaxSequenceLength, m.weights.config().max_positions);
  std::vector<cp::EncodedInput> out;
  out.reserve(data.size());
  for (const auto& d : data) {
    if (perturbed && d.perturbed_docs.empty()) throw cp::ValidationError("pair " + d.query_id + " has no perturbation");
    out.push_back(cp::encode_pair(d.query, perturbed ? d.perturbed_docs.front() : d.baseline_doc, m.vocab, max_len));
  }
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void write_profile(const std::vector<cp::HeadCorrelation>& profile, const std::vector<cp::HeadId>& group,
                   const std::string& out, const cp::RunHeader& header) {
  cp::CsvTable t({"head", "role", "in_group", "mean_r", "n_valid", "n_degenerate"});
  for (const auto& p : profile) {
    const bool in = std::find(group.begin(), group.end(), p.head) != group.end();
    t.add_row({p.head.str(), std::string(cp::to_string(cp::role_of(p.head))), in ? "1" : "0", cp::fmt(p.mean_r),
               std::to_string(p.n_valid), std::to_string(p.n_degenerate)});
  }
  t.write(out, header);
}

void run_matching(const AnalyzeArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto data = load_limited(a.dataset, g.limit);
  const auto group = heads_or(a.group, cp::matching_heads());
  const auto heads = cp::all_heads(m.weights.config());
  const auto profile = cp::similarity_profile(m.weights, encode_docs(data, m, false), heads, a.contextual, g.workers);
  const auto [in, others] = cp::group_means(profile, group);

  std::vector<std::pair<std::string, std::string>> extra{
      {"dataset", a.dataset},
      {"pairs", std::to_string(data.size())},
      {"embeddings", a.contextual ? "contextual" : "static"},
      {"group_mean", cp::fmt(in)},
      {"others_mean", cp::fmt(others)},
      {"difference", cp::fmt(in - others)}};
  std::cout << "group mean r " << cp::fmt(in) << ", others " << cp::fmt(others) << ", difference "
            << cp::fmt(in - others) << '\n';

  if (a.ablate) {
    const auto perturbed = encode_docs(data, m, true);
    std::vector<double> before(perturbed.size());
    for (std::size_t i = 0; i < perturbed.size(); ++i) before[i] = cp::forward_logit(m.weights, perturbed[i]);
    std::vector<std::pair<std::size_t, std::size_t>> targets;
    for (const auto& h : group) targets.emplace_back(h.layer, h.head);
    const auto after = cp::mean_ablate(m.weights, perturbed, targets, g.workers);
    extra.emplace_back("perturbed_logit_mean", cp::fmt(mean(before)));
    extra.emplace_back("ablated_logit_mean", cp::fmt(mean(after)));
    extra.emplace_back("ablation_drop", cp::fmt(mean(before) - mean(after)));
    std::cout << "mean-ablation: perturbed logit " << cp::fmt(mean(before)) << " -> " << cp::fmt(mean(after))
              << '\n';
  }
  write_profile(profile, group, a.out, make_header(g, &m.weights, std::move(extra)));
}

void run_idf_attn(const AnalyzeArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto idf = require_idf(a.idf, m);
  const auto data = load_limited(a.dataset, g.limit);
  cp::IdfAttentionMode mode;
  if (a.idf_mode == "cls") mode = cp::IdfAttentionMode::cls_to_query;
  else if (a.idf_mode == "query") mode = cp::IdfAttentionMode::query_to_query;
  else throw cp::ValidationError("--idf-mode is cls or query");
  const auto heads = heads_or(a.heads, cp::all_heads(m.weights.config()));
  const auto profile =
      cp::idf_profile(m.weights, encode_docs(data, m, false), idf, heads.empty() ? cp::all_heads(m.weights.config()) : heads,
                      mode, g.workers);
  const auto group = heads_or(a.group, cp::relevance_scoring_heads());
  const auto [in, others] = cp::group_means(profile, group);
  std::cout << "group mean r " << cp::fmt(in) << ", others " << cp::fmt(others) << '\n';
  write_profile(profile, group, a.out,
                make_header(g, &m.weights,
                            {{"dataset", a.dataset},
                             {"idf", idf.corpus},
                             {"mode", a.idf_mode},
                             {"group_mean", cp::fmt(in)},
                             {"others_mean", cp::fmt(others)}}));
}

void run_saturation(const AnalyzeArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto data = load_limited(a.dataset, g.limit);
  auto heads = heads_or(a.heads, cp::matching_heads());
  if (heads.empty()) heads = cp::all_heads(m.weights.config());
  const auto result = cp::saturation_curve(m.weights, m.vocab, data, heads, g.workers);

  cp::CsvTable t({"head", "k", "term", "others", "concave", "non_decreasing"});
  std::vector<cp::LineSeries> series;
  std::vector<std::string> ks;
  for (const auto& c : result.curves) {
    for (std::size_t k = 0; k < c.term.size(); ++k)
      t.add_row({c.head.str(), std::to_string(k), cp::fmt(c.term[k]), cp::fmt(c.others[k]), c.concave() ? "1" : "0",
                 c.non_decreasing() ? "1" : "0"});
    series.push_back({c.head.str(), c.term});
    if (ks.size() < c.term.size())
      for (std::size_t k = ks.size(); k < c.term.size(); ++k) ks.push_back(std::to_string(k));
  }
  t.write(a.out, make_header(g, &m.weights,
                             {{"dataset", a.dataset},
                              {"pairs", std::to_string(result.n_pairs)},
                              {"concave_heads", std::to_string(result.concave_heads())},
                              {"heads", std::to_string(result.curves.size())}}));
  if (!a.svg.empty()) cp::write_text_file(a.svg, cp::line_chart_svg("attention to the selected term", ks, series));
  std::cout << result.concave_heads() << " of " << result.curves.size() << " heads concave over "
            << result.n_pairs << " pairs\n";
}

void run_length(const AnalyzeArgs& a, const GlobalOptions& g) {
  const auto m = load_model(g);
  const auto data = load_limited(a.dataset, g.limit);
  auto heads = heads_or(a.heads, cp::matching_heads());
  if (heads.empty()) heads = cp::all_heads(m.weights.config());
  const auto result = cp::length_curve(m.weights, m.vocab, data, heads, g.workers);

  cp::CsvTable t({"series", "k", "value"});
  std::vector<std::string> ks;
  for (std::size_t k = 0; k < result.mean_logit.size(); ++k) {
    t.add_row({"logit", std::to_string(k), cp::fmt(result.mean_logit[k])});
    ks.push_back(std::to_string(k));
  }
  std::vector<cp::LineSeries> series;
  for (const auto& c : result.curves) {
    for (std::size_t k = 0; k < c.raw.size(); ++k) {
      t.add_row({c.head.str() + ":raw", std::to_string(k), cp::fmt(c.raw[k])});
      t.add_row({c.head.str() + ":normalized", std::to_string(k), cp::fmt(c.normalized[k])});
    }
    series.push_back({c.head.str(), c.normalized});
  }
  t.write(a.out, make_header(g, &m.weights,
                             {{"dataset", a.dataset},
                              {"pairs", std::to_string(result.n_pairs)},
                              {"non_increasing_fraction", cp::fmt(result.non_increasing_fraction)}}));
  if (!a.svg.empty())
    cp::write_text_file(a.svg, cp::line_chart_svg("length-normalized document attention", ks, series));
  std::cout << "logit non-increasing for " << cp::fmt(result.non_increasing_fraction) << " of " << result.n_pairs
            << " pairs\n";
}

}  // namespace

void register_analyze(CLI::App& app, GlobalOptions& g, CommandRegistry& reg) {
  auto* analyze = app.add_subcommand("analyze", "Head-level circuit analyses");
  analyze->require_subcommand(1);

  auto add = [&](const char* name, const char* desc, auto run) {
    auto a = std::make_shared<AnalyzeArgs>();
    auto* sub = analyze->add_subcommand(name, desc);
    sub->add_option("--dataset", a->dataset, "Diagnostic JSONL")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a->out, "Output CSV")->required();
    reg.add(sub, [a, &g, run] { run(*a, g); });
    return std::pair{sub, a};
  };

  auto [matching, ma] = add("matching", "Attention vs embedding similarity for every head", run_matching);
  matching->add_option("--group", ma->group, "Heads treated as the matching group");
  matching->add_flag("--contextual", ma->contextual, "Use layer inputs instead of W_E rows");
  matching->add_flag("--ablate", ma->ablate, "Mean-ablate the group on perturbed documents");

  auto [saturation, sa] = add("saturation", "Attention to the selected term over TFC2 steps", run_saturation);
  saturation->add_option("--heads", sa->heads, "Heads (default: matching heads; \"all\" for every head)");
  saturation->add_option("--svg", sa->svg, "Line chart SVG");

  auto [length, la] = add("length", "Document attention and logit over LNC1 steps", run_length);
  length->add_option("--heads", la->heads, "Heads (default: matching heads; \"all\" for every head)");
  length->add_option("--svg", la->svg, "Line chart SVG");

  auto [idf, ia] = add("idf-attn", "Attention to query tokens vs IDF", run_idf_attn);
  idf->add_option("--idf", ia->idf, "IDF table TSV")->check(CLI::ExistingFile);
  idf->add_option("--heads", ia->heads, "Heads (default: all)");
  idf->add_option("--group", ia->group, "Heads summarized as a group");
  idf->add_option("--idf-mode", ia->idf_mode, "cls or query")->check(CLI::IsMember({"cls", "query"}));
}
