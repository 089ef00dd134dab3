#include <iostream>
#include <memory>

#include "common.hpp"
#include "circuitprobe/error.hpp"

namespace {

struct DataArgs {
  std::string axiom, base, out, synonyms, sentences, idf, vocab, donors;
  std::string policy = "max-idf";
  bool no_fallback = false;
  bool append_period = false;
  bool lenient_terms = false;
};

void run_gen_data(const DataArgs& a, const GlobalOptions& g) {
  const auto axiom = cp::parse_axiom(a.axiom);
  if (!axiom) throw cp::ValidationError("unknown axiom '" + a.axiom + "' (tfc1, stmc1, tfc2, lnc1)");
  const auto base = cp::load_base_pairs(a.base);
  if (base.empty()) throw cp::ValidationError(a.base + " has no pairs");

  // Model weights are only needed for the STMC1 nearest-neighbour fallback.
  std::optional<LoadedModel> model;
  if (model_dir(g) && (a.vocab.empty() || (*axiom == cp::Axiom::stmc1 && !a.no_fallback)))
    model = load_model(g);
  if (*axiom == cp::Axiom::stmc1 && !a.no_fallback && !model)
    throw cp::ValidationError("stmc1 fallback needs --model; pass --no-fallback to use synonyms only");
  if (!model && a.vocab.empty()) throw cp::ValidationError("pass --vocab or --model");
  const cp::Vocab vocab = a.vocab.empty() ? model->vocab : cp::load_vocab(a.vocab);

  cp::IdfTable idf = !a.idf.empty()           ? cp::load_idf_table(a.idf, vocab.size())
                     : model && model->idf    ? *model->idf
                                              : cp::corpus_idf(base, vocab, a.base);
  cp::TermPolicy policy;
  if (a.policy == "first") policy.rule = cp::TermPolicy::Rule::first;
  else if (a.policy != "max-idf") throw cp::ValidationError("--term-policy is max-idf or first");
  policy.strict = !a.lenient_terms;
  const std::string idf_source = idf.corpus;
  const cp::TermSelector terms(vocab, std::move(idf), policy);

  cp::SynonymTable synonyms;
  if (!a.synonyms.empty()) synonyms = cp::load_synonyms(a.synonyms);
  cp::SentenceTable sentences;
  if (!a.sentences.empty()) sentences = cp::load_sentences(a.sentences);
  std::unique_ptr<cp::EmbeddingIndex> index;
  if (*axiom == cp::Axiom::stmc1 && model)
    index = std::make_unique<cp::EmbeddingIndex>(model->weights.word_embeddings(), vocab);
  std::vector<cp::BasePair> donors;
  if (!a.donors.empty()) donors = cp::load_base_pairs(a.donors);

  cp::GenerationInputs inputs;
  inputs.synonyms = &synonyms;
  inputs.sentences = &sentences;
  inputs.index = index.get();
  inputs.donors = donors.empty() ? std::span<const cp::BasePair>(base) : donors;
  inputs.seed = g.seed;
  cp::DiagnosticOptions options;
  options.append_period = a.append_period;
  options.fallback = !a.no_fallback;

  auto subset = base;
  apply_limit(subset, g.limit);
  const auto result = cp::generate(*axiom, subset, terms, inputs, options, g.workers);
  for (const auto& [qid, reason] : result.skipped) std::cerr << "skipped " << qid << ": " << reason << '\n';
  if (result.pairs.empty()) throw cp::ValidationError("no pairs generated from " + a.base);

  const auto header = make_header(g, model ? &model->weights : nullptr,
                                  {{"axiom", std::string(cp::to_string(*axiom))},
                                   {"base", a.base},
                                   {"idf", idf_source},
                                   {"pairs", std::to_string(result.pairs.size())},
                                   {"skipped", std::to_string(result.skipped.size())}});
  cp::write_diagnostics(a.out, result.pairs, cp::render_header(header));
  std::cout << "wrote " << result.pairs.size() << " " << cp::to_string(*axiom) << " pairs to " << a.out
            << " (" << result.skipped.size() << " skipped)\n";
}

}  // namespace

void register_data(CLI::App& app, GlobalOptions& g, CommandRegistry& reg) {
  auto a = std::make_shared<DataArgs>();
  auto* sub = app.add_subcommand("gen-data", "Generate diagnostic pairs from a base corpus");
  sub->add_option("--axiom", a->axiom, "tfc1, stmc1, tfc2 or lnc1")->required();
  sub->add_option("--base", a->base, "Base corpus TSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a->out, "Output JSONL")->required();
  sub->add_option("--synonyms", a->synonyms, "STMC1 synonym candidates (JSONL)")->check(CLI::ExistingFile);
  sub->add_option("--sentences", a->sentences, "TFC2 pronoun sentences (JSONL)")->check(CLI::ExistingFile);
  sub->add_option("--idf", a->idf, "IDF table TSV")->check(CLI::ExistingFile);
  sub->add_option("--vocab", a->vocab, "vocab.txt when no model is given")->check(CLI::ExistingFile);
  sub->add_option("--donors", a->donors, "LNC1 donor corpus TSV")->check(CLI::ExistingFile);
  sub->add_option("--term-policy", a->policy, "max-idf or first");
  sub->add_flag("--no-fallback", a->no_fallback, "Skip pairs instead of falling back");
  sub->add_flag("--append-period", a->append_period, "Append \"term.\" for TFC1/STMC1");
  sub->add_flag("--lenient-terms", a->lenient_terms, "Allow stopwords as selected terms");
  reg.add(sub, [a, &g] { run_gen_data(*a, g); });
}
