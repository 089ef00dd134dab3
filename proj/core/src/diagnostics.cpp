#include "circuitprobe/diagnostics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "circuitprobe/encoder.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/parallel.hpp"
#include "circuitprobe/text_io.hpp"

namespace circuitprobe {

using nlohmann::json;

namespace {

constexpr std::string_view kAxiomNames[] = {"TFC1", "STMC1", "TFC2", "LNC1"};

bool is_content_piece(std::string_view word) {
  return std::any_of(word.begin(), word.end(), [](char ch) {
    const auto u = static_cast<unsigned char>(ch);
    return u >= 0x80 || std::isalnum(u);
  });
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

bool starts_upper(std::string_view s) {
  return !s.empty() && std::isupper(static_cast<unsigned char>(s[0]));
}

std::string strip_punct(std::string_view chunk) {
  auto punct = [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
  };
  while (!chunk.empty() && punct(chunk.front())) chunk.remove_prefix(1);
  while (!chunk.empty() && punct(chunk.back())) chunk.remove_suffix(1);
  return std::string(chunk);
}

/// How the term is written in `text`, or the term itself if absent.
std::string surface_form(std::string_view text, const std::string& term, const Vocab& vocab) {
  std::istringstream in{std::string(text)};
  std::string chunk;
  while (in >> chunk) {
    const std::string word = strip_punct(chunk);
    if (word.empty()) continue;
    const auto norm = basic_tokenize(word, vocab);
    if (norm.size() == 1 && norm[0] == term) return word;
  }
  return term;
}

std::string join(const std::vector<std::string>& parts, std::size_t count, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < count && i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> content_words(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (auto& w : basic_tokenize(text, vocab))
    if (is_content_piece(w) && !is_stopword(w)) out.push_back(std::move(w));
  return sorted_unique(std::move(out));
}

bool disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return false;
    if (*i < *j) ++i;
    else ++j;
  }
  return true;
}

/// Unbiased-enough Fisher-Yates with an explicit draw rule, so the order is
/// identical across standard libraries.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::string appended(const std::string& word, bool period) { return period ? word + "." : word; }

DiagnosticPair start_pair(Axiom axiom, const BasePair& base, std::string term) {
  DiagnosticPair p;
  p.axiom = axiom;
  p.query_id = base.query_id;
  p.doc_id = base.doc_id;
  p.query = base.query;
  p.baseline_doc = base.doc;
  p.selected_term = std::move(term);
  return p;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(9);
  s << v;
  return s.str();
}

}  // namespace

std::string_view to_string(Axiom axiom) noexcept { return kAxiomNames[static_cast<int>(axiom)]; }

std::optional<Axiom> parse_axiom(std::string_view name) noexcept {
  std::string upper(name);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (int i = 0; i < 4; ++i)
    if (kAxiomNames[i] == upper) return static_cast<Axiom>(i);
  return std::nullopt;
}

std::vector<BasePair> load_base_pairs(const std::filesystem::path& path) {
  std::vector<BasePair> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto cols = split(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 4 && cols.size() != 5)
      throw FormatError(where + ": expected 4 or 5 tab-separated columns, got " +
                        std::to_string(cols.size()));
    BasePair p{std::string(cols[0]), std::string(trim(cols[1])), std::string(cols[2]),
               std::string(trim(cols[3])), std::nullopt};
    if (p.query.empty() || p.doc.empty()) throw FormatError(where + ": empty query or document");
    if (cols.size() == 5 && !trim(cols[4]).empty()) {
      try {
        p.label = std::stod(std::string(cols[4]));
      } catch (const std::exception&) {
        throw FormatError(where + ": bad label '" + std::string(cols[4]) + "'");
      }
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw FormatError(path.string() + ": no query-document pairs");
  return out;
}

std::string to_json_line(const DiagnosticPair& p) {
  json j;
  j["axiom"] = to_string(p.axiom);
  j["query_id"] = p.query_id;
  j["doc_id"] = p.doc_id;
  j["query"] = p.query;
  j["baseline_doc"] = p.baseline_doc;
  j["perturbed_docs"] = p.perturbed_docs;
  j["selected_term"] = p.selected_term;
  j["metadata"] = p.metadata;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

DiagnosticPair parse_diagnostic(std::string_view line) {
  try {
    const json j = json::parse(line);
    DiagnosticPair p;
    const auto axiom = parse_axiom(j.at("axiom").get<std::string>());
    if (!axiom) throw FormatError("unknown axiom " + j.at("axiom").dump());
    p.axiom = *axiom;
    p.query_id = j.at("query_id").get<std::string>();
    p.doc_id = j.value("doc_id", std::string{});
    p.query = j.at("query").get<std::string>();
    p.baseline_doc = j.at("baseline_doc").get<std::string>();
    p.perturbed_docs = j.at("perturbed_docs").get<std::vector<std::string>>();
    p.selected_term = j.value("selected_term", std::string{});
    if (j.contains("metadata"))
      for (const auto& [k, v] : j.at("metadata").items())
        p.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    if (p.perturbed_docs.empty()) throw FormatError("no perturbed documents");
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("diagnostic record: ") + e.what());
  }
}

std::vector<DiagnosticPair> load_diagnostics(const std::filesystem::path& path) {
  std::vector<DiagnosticPair> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    try {
      out.push_back(parse_diagnostic(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError(path.string() + ": no diagnostic pairs");
  return out;
}

void write_diagnostics(const std::filesystem::path& path, const std::vector<DiagnosticPair>& pairs,
                       std::string_view header) {
  std::string out(header);
  for (const auto& p : pairs) out += to_json_line(p) + '\n';
  write_text_file(path, out);
}

const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> words{
      "a",     "an",   "and",  "are",   "as",   "at",    "be",    "but",   "by",   "for",
      "from",  "had",  "has",  "have",  "he",   "her",   "his",   "how",   "i",    "in",
      "is",    "it",   "its",  "of",    "on",   "or",    "she",   "that",  "the",  "their",
      "them",  "then", "there", "these", "they", "this", "to",    "was",   "we",   "were",
      "what",  "when", "where", "which", "who",  "why",  "will",  "with",  "you",  "your"};
  return words;
}

bool is_stopword(std::string_view w) {
  const auto& s = stopwords();
  return std::find(s.begin(), s.end(), w) != s.end();
}

TermSelector::TermSelector(const Vocab& vocab, IdfTable idf, TermPolicy policy)
    : vocab_(&vocab), idf_(std::move(idf)), policy_(policy) {
  if (idf_.idf.size() < vocab.size())
    throw ValidationError("term selector: IDF table covers " + std::to_string(idf_.idf.size()) +
                          " ids, vocab has " + std::to_string(vocab.size()));
}

std::optional<TokenId> TermSelector::single_token(std::string_view word) const {
  const auto ids = wordpiece_word(word, *vocab_);
  if (ids.size() != 1 || ids[0] == vocab_->unk_id()) return std::nullopt;
  return ids[0];
}

std::string TermSelector::select(std::string_view query) const {
  const auto words = basic_tokenize(query, *vocab_);
  auto pick = [&](bool allow_stop) -> std::optional<std::string> {
    std::optional<std::string> best;
    double best_idf = -1.0;
    for (const auto& w : words) {
      if (!is_content_piece(w) || (!allow_stop && is_stopword(w))) continue;
      const auto id = single_token(w);
      if (!id) continue;
      if (policy_.rule == TermPolicy::Rule::first) return w;
      const double v = idf_[*id];
      if (v > best_idf) {
        best_idf = v;
        best = w;
      }
    }
    return best;
  };
  if (auto t = pick(false)) return *t;
  if (!policy_.strict)
    if (auto t = pick(true)) return *t;
  throw ValidationError("no eligible query term in '" + std::string(query) + "'");
}

IdfTable corpus_idf(const std::vector<BasePair>& corpus, const Vocab& vocab, std::string name) {
  std::vector<std::vector<TokenId>> docs;
  std::set<std::string> seen;
  for (const auto& p : corpus)
    if (seen.insert(p.doc_id + '\t' + p.doc).second) docs.push_back(wordpiece(p.doc, vocab));
  return compute_idf(docs, vocab.size(), std::move(name));
}

EmbeddingIndex::EmbeddingIndex(const Matrix& emb, const Vocab& vocab)
    : emb_(&emb), vocab_(&vocab), norms_(emb.rows()), eligible_(emb.rows(), 0) {
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    double s = 0.0;
    for (float v : emb.row(i)) s += double(v) * v;
    norms_[i] = std::sqrt(s);
    if (i < vocab.size()) {
      const auto& tok = vocab.token(static_cast<TokenId>(i));
      eligible_[i] = !tok.starts_with("##") && !tok.starts_with("[unused") &&
                     !vocab.is_special(static_cast<TokenId>(i)) && norms_[i] > 0.0;
    }
  }
}

double EmbeddingIndex::cosine(TokenId a, TokenId b) const {
  const auto ra = emb_->row(static_cast<std::size_t>(a));
  const auto rb = emb_->row(static_cast<std::size_t>(b));
  const double na = norms_[static_cast<std::size_t>(a)];
  const double nb = norms_[static_cast<std::size_t>(b)];
  if (na == 0.0 || nb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t j = 0; j < ra.size(); ++j) dot += double(ra[j]) * rb[j];
  return dot / (na * nb);
}

TokenId EmbeddingIndex::nearest(TokenId id) const {
  TokenId best = -1;
  double best_cos = -2.0;
  for (std::size_t i = 0; i < eligible_.size(); ++i) {
    if (!eligible_[i] || static_cast<TokenId>(i) == id) continue;
    const double c = cosine(id, static_cast<TokenId>(i));
    if (c > best_cos) {
      best_cos = c;
      best = static_cast<TokenId>(i);
    }
  }
  if (best < 0) throw ValidationError("embedding index: no eligible neighbour");
  return best;
}

SynonymTable load_synonyms(const std::filesystem::path& path) {
  SynonymTable out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    try {
      const json j = json::parse(line);
      auto cands = j.at("candidates").get<std::vector<std::string>>();
      if (cands.size() > 20) cands.resize(20);
      auto& slot = out[to_lower_ascii(j.at("term").get<std::string>())];
      slot.insert(slot.end(), cands.begin(), cands.end());
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

SentenceTable load_sentences(const std::filesystem::path& path) {
  SentenceTable out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      PronounSentences s{j.at("pronoun").get<std::string>(),
                         j.at("sentences").get<std::vector<std::string>>()};
      if (s.sentences.empty()) throw FormatError(where + ": no sentences");
      out[j.at("query_id").get<std::string>() + '\t' + to_lower_ascii(j.at("term").get<std::string>())] =
          std::move(s);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

PronounSentences template_sentences() {
  return {"It",
          {"It is described here.", "It is widely known.", "It is often discussed.",
           "It is worth noting.", "It is easy to find."}};
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && text[i + 1] == ' ') {
      const auto s = trim(text.substr(start, i + 1 - start));
      if (!s.empty()) out.emplace_back(s);
      start = i + 2;
    }
  }
  if (start < text.size()) {
    const auto s = trim(text.substr(start));
    if (!s.empty()) out.emplace_back(s);
  }
  return out;
}

std::vector<std::string> normalized_words(std::string_view text, const Vocab& vocab) {
  return basic_tokenize(text, vocab);
}

std::size_t count_term(std::string_view text, std::string_view term, const Vocab& vocab) {
  const auto words = basic_tokenize(text, vocab);
  return static_cast<std::size_t>(std::count(words.begin(), words.end(), term));
}

DiagnosticPair make_tfc1(const BasePair& base, const TermSelector& terms,
                         const DiagnosticOptions& options) {
  std::string term = terms.select(base.query);
  std::string surface = surface_form(base.doc, term, terms.vocab());
  if (surface == term) surface = surface_form(base.query, term, terms.vocab());
  DiagnosticPair p = start_pair(Axiom::tfc1, base, std::move(term));
  p.perturbed_docs.push_back(base.doc + " " + appended(surface, options.append_period));
  p.metadata["appended"] = surface;
  return p;
}

DiagnosticPair make_stmc1(const BasePair& base, const TermSelector& terms,
                          const SynonymTable& synonyms, const EmbeddingIndex& index,
                          const DiagnosticOptions& options) {
  const Vocab& vocab = terms.vocab();
  std::string term = terms.select(base.query);
  const auto term_id = terms.single_token(term);
  if (!term_id) throw ValidationError("selected term '" + term + "' is not a single token");

  std::optional<std::string> best;
  double best_cos = -2.0;
  std::string source = "candidates";
  if (auto it = synonyms.find(term); it != synonyms.end()) {
    for (const auto& cand : it->second) {
      const auto norm = basic_tokenize(cand, vocab);
      if (norm.size() != 1 || norm[0] == term) continue;
      const auto id = terms.single_token(norm[0]);
      if (!id) continue;
      const double c = index.cosine(*term_id, *id);
      if (c > best_cos) {
        best_cos = c;
        best = norm[0];
      }
    }
  }
  if (!best) {
    if (!options.fallback)
      throw ValidationError("no synonym candidates for '" + term + "' and fallback disabled");
    const TokenId nn = index.nearest(*term_id);
    best = vocab.token(nn);
    best_cos = index.cosine(*term_id, nn);
    source = "nearest_neighbour";
  }
  const std::string term_surface = surface_form(base.doc, term, vocab);
  const std::string syn = starts_upper(term_surface) ? capitalize(*best) : *best;
  DiagnosticPair p = start_pair(Axiom::stmc1, base, std::move(term));
  p.perturbed_docs.push_back(base.doc + " " + appended(syn, options.append_period));
  p.metadata["synonym"] = *best;
  p.metadata["cosine"] = num(best_cos);
  p.metadata["source"] = source;
  return p;
}

DiagnosticPair make_tfc2(const BasePair& base, const TermSelector& terms,
                         const SentenceTable& sentences, const DiagnosticOptions& options) {
  const Vocab& vocab = terms.vocab();
  std::string term = terms.select(base.query);
  PronounSentences ps;
  std::string source = "file";
  if (auto it = sentences.find(base.query_id + '\t' + term); it != sentences.end()) {
    ps = it->second;
  } else if (options.fallback) {
    ps = template_sentences();
    source = "template";
  } else {
    throw ValidationError("no pronoun sentences for query " + base.query_id + " term '" + term +
                          "' and fallback disabled");
  }
  const std::size_t steps = options.tfc2_steps;
  if (ps.sentences.size() < steps)
    throw ValidationError("query " + base.query_id + ": need " + std::to_string(steps) +
                          " pronoun sentences, have " + std::to_string(ps.sentences.size()));
  ps.sentences.resize(steps);
  const std::string pronoun_lc = to_lower_ascii(ps.pronoun);
  for (const auto& s : ps.sentences) {
    const auto head = to_lower_ascii(s.substr(0, ps.pronoun.size()));
    if (head != pronoun_lc || s.size() <= ps.pronoun.size() || s[ps.pronoun.size()] != ' ')
      throw ValidationError("query " + base.query_id + ": sentence does not start with '" +
                            ps.pronoun + "': " + s);
  }
  const std::string surface = capitalize(surface_form(base.doc, term, vocab));

  DiagnosticPair p = start_pair(Axiom::tfc2, base, term);
  p.baseline_doc = join(ps.sentences, steps, " ");
  const std::size_t base_count = count_term(p.baseline_doc, term, vocab);
  for (std::size_t k = 1; k <= steps; ++k) {
    std::vector<std::string> s = ps.sentences;
    for (std::size_t i = 0; i < k; ++i) s[i] = surface + s[i].substr(ps.pronoun.size());
    std::string doc = join(s, steps, " ");
    if (count_term(doc, term, vocab) != base_count + k)
      throw ValidationError("query " + base.query_id + ": restoring '" + term +
                            "' does not add exactly one occurrence per step");
    p.perturbed_docs.push_back(std::move(doc));
  }
  p.metadata["pronoun"] = ps.pronoun;
  p.metadata["source"] = source;
  p.metadata["original_doc"] = base.doc;
  return p;
}

DonorPool::DonorPool(std::span<const BasePair> corpus, const Vocab& vocab) {
  std::unordered_map<std::string, std::size_t> index;
  std::set<std::pair<std::string, std::string>> seen_docs;
  for (const auto& bp : corpus) {
    auto [it, fresh] = index.try_emplace(bp.query_id, donors_.size());
    if (fresh) donors_.push_back({bp.query_id, content_words(bp.query, vocab), {}, {}});
    if (!seen_docs.insert({bp.query_id, bp.doc}).second) continue;
    Donor& d = donors_[it->second];
    for (auto& s : split_sentences(bp.doc)) {
      d.sentence_words.push_back(content_words(s, vocab));
      d.sentences.push_back(std::move(s));
    }
  }
}

DiagnosticPair make_lnc1(const BasePair& base, const DonorPool& pool, std::uint64_t seed,
                         const TermSelector& terms, const DiagnosticOptions& options) {
  const Vocab& vocab = terms.vocab();
  const auto qwords = content_words(base.query, vocab);
  std::vector<const DonorPool::Donor*> eligible;
  for (const auto& d : pool.donors())
    if (d.query_id != base.query_id && disjoint(d.query_words, qwords)) eligible.push_back(&d);
  if (eligible.empty())
    throw ValidationError("query " + base.query_id + ": no eligible LNC1 donor");

  std::mt19937_64 rng(seed ^ fnv1a(base.query_id + '\t' + base.doc_id));
  seeded_shuffle(eligible, rng);
  const std::size_t steps = options.lnc1_steps;
  std::vector<std::string> drawn;
  std::vector<std::string> donor_ids;
  for (const auto* d : eligible) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d->sentences.size(); ++i)
      if (disjoint(d->sentence_words[i], qwords)) idx.push_back(i);
    if (idx.empty()) continue;
    seeded_shuffle(idx, rng);
    donor_ids.push_back(d->query_id);
    for (std::size_t i : idx) {
      drawn.push_back(d->sentences[i]);
      if (drawn.size() == steps) break;
    }
    if (drawn.size() == steps) break;
  }
  if (drawn.size() < steps)
    throw ValidationError("query " + base.query_id + ": donors supply only " +
                          std::to_string(drawn.size()) + " clean sentences");

  std::string term;
  try {
    term = terms.select(base.query);
  } catch (const ValidationError&) {
  }
  DiagnosticPair p = start_pair(Axiom::lnc1, base, std::move(term));
  for (std::size_t k = 1; k <= steps; ++k) p.perturbed_docs.push_back(base.doc + " " + join(drawn, k, " "));
  p.metadata["donor_query_ids"] = join(donor_ids, donor_ids.size(), ",");
  p.metadata["seed"] = std::to_string(seed);
  return p;
}

DiagnosticPair make_lnc1(const BasePair& base, std::span<const BasePair> corpus,
                         std::uint64_t seed, const TermSelector& terms,
                         const DiagnosticOptions& options) {
  return make_lnc1(base, DonorPool(corpus, terms.vocab()), seed, terms, options);
}

GenerationResult generate(Axiom axiom, const std::vector<BasePair>& base, const TermSelector& terms,
                          const GenerationInputs& inputs, const DiagnosticOptions& options,
                          std::size_t workers) {
  static const SynonymTable kNoSynonyms;
  static const SentenceTable kNoSentences;
  if (axiom == Axiom::stmc1 && !inputs.index)
    throw ValidationError("STMC1 generation needs an embedding index");
  std::optional<DonorPool> pool;
  if (axiom == Axiom::lnc1)
    pool.emplace(inputs.donors.empty() ? std::span<const BasePair>(base) : inputs.donors,
                 terms.vocab());

  std::vector<std::optional<DiagnosticPair>> made(base.size());
  std::vector<std::string> errors(base.size());
  parallel_for(base.size(), workers, [&](std::size_t i) {
    try {
      switch (axiom) {
        case Axiom::tfc1: made[i] = make_tfc1(base[i], terms, options); break;
        case Axiom::stmc1:
          made[i] = make_stmc1(base[i], terms, inputs.synonyms ? *inputs.synonyms : kNoSynonyms,
                               *inputs.index, options);
          break;
        case Axiom::tfc2:
          made[i] = make_tfc2(base[i], terms, inputs.sentences ? *inputs.sentences : kNoSentences,
                              options);
          break;
        case Axiom::lnc1: made[i] = make_lnc1(base[i], *pool, inputs.seed, terms, options); break;
      }
    } catch (const ValidationError& e) {
      errors[i] = e.what();
    }
  });
  GenerationResult res;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (made[i]) res.pairs.push_back(std::move(*made[i]));
    else res.skipped.emplace_back(base[i].query_id, errors[i]);
  }
  return res;
}

PatchPair encode_diagnostic(const DiagnosticPair& pair, std::size_t k, const Vocab& vocab,
                            TokenId filler, std::size_t max_length) {
  if (k >= pair.perturbed_docs.size())
    throw ValidationError("pair " + pair.query_id + ": no perturbation " + std::to_string(k));
  return align_pair(encode_pair(pair.query, pair.baseline_doc, vocab, max_length),
                    encode_pair(pair.query, pair.perturbed_docs[k], vocab, max_length), filler,
                    pair.query_id + "/" + pair.doc_id);
}

std::vector<ScoredDiagnostic> score_diagnostics(const ModelWeights& weights, const Vocab& vocab,
                                                const std::vector<DiagnosticPair>& pairs,
                                                std::size_t workers) {
  std::vector<ScoredDiagnostic> out(pairs.size());
  const std::size_t max_len = std::min(kMaxSequenceLength, weights.config().max_positions);
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const auto& p = pairs[i];
    out[i].baseline = forward_logit(weights, encode_pair(p.query, p.baseline_doc, vocab, max_len));
    for (const auto& d : p.perturbed_docs)
      out[i].perturbed.push_back(forward_logit(weights, encode_pair(p.query, d, vocab, max_len)));
  });
  return out;
}

}  // namespace circuitprobe
