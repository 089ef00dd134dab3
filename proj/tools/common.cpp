#include "common.hpp"

#include <cstdlib>

#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

std::optional<fs::path> model_dir(const GlobalOptions& g) {
  if (!g.model.empty()) return fs::path(g.model);
  if (const char* env = std::getenv("CIRCUITPROBE_MODEL_DIR"); env && *env) return fs::path(env);
  return std::nullopt;
}

LoadedModel load_model(const GlobalOptions& g) {
  const auto dir = model_dir(g);
  if (!dir) throw cp::ValidationError("no model: pass --model or set CIRCUITPROBE_MODEL_DIR");
  if (!fs::is_directory(*dir)) throw cp::ValidationError("model directory " + dir->string() + " does not exist");
  LoadedModel m{*dir, cp::load_model_dir(*dir), cp::load_vocab(*dir / "vocab.txt"), std::nullopt};
  if (m.vocab.size() != m.weights.config().vocab_size)
    throw cp::ValidationError("vocab.txt has " + std::to_string(m.vocab.size()) + " tokens, config " +
                              std::to_string(m.weights.config().vocab_size));
  if (fs::exists(*dir / "idf.tsv")) m.idf = cp::load_idf_table(*dir / "idf.tsv", m.vocab.size());
  return m;
}

cp::RunHeader make_header(const GlobalOptions& g, const cp::ModelWeights* weights,
                          std::vector<std::pair<std::string, std::string>> extra) {
  cp::RunHeader h;
  h.command = g.command_line;
  h.seed = g.seed;
  h.config_hash = cp::hex64(cp::fnv1a(g.config_text, cp::fnv1a(g.command_line)));
  h.weights_checksum = weights ? weights->checksum_hex() : "none";
  h.extra = std::move(extra);
  return h;
}

cp::IdfTable require_idf(const std::string& flag, const LoadedModel& m) {
  if (!flag.empty()) return cp::load_idf_table(flag, m.vocab.size());
  if (m.idf) return *m.idf;
  throw cp::ValidationError("no IDF table: pass --idf or put idf.tsv in the model directory");
}

std::vector<cp::HeadId> heads_or(const std::string& flag, const std::vector<cp::HeadId>& fallback) {
  if (flag.empty()) return fallback;
  if (flag == "all") return {};
  return cp::parse_head_list(flag);
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  for (auto part : cp::split(csv, ',')) {
    part = cp::trim(part);
    if (part.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(std::string(part), &used));
      if (used != part.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw cp::ValidationError("bad number '" + std::string(part) + "'");
    }
  }
  if (out.empty()) throw cp::ValidationError("empty number list");
  return out;
}

bool CommandRegistry::run() const {
  for (const auto& [app, action] : entries_) {
    if (!app->parsed()) continue;
    bool leaf = true;
    for (const auto* sub : app->get_subcommands()) leaf = leaf && !sub->parsed();
    if (!leaf) continue;
    action();
    return true;
  }
  return false;
}
