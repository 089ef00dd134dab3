#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/circuit_analysis.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/patching.hpp"
#include "circuitprobe/report.hpp"
#include "circuitprobe/tokenizer.hpp"

namespace cp = circuitprobe;
namespace fs = std::filesystem;

struct GlobalOptions {
  std::string model;  // falls back to $CIRCUITPROBE_MODEL_DIR
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::size_t limit = 0;  // 0 = everything
  std::string command_line;
  std::string config_text;
};

/// config.json + model.safetensors + vocab.txt, idf.tsv when present.
struct LoadedModel {
  fs::path dir;
  cp::ModelWeights weights;
  cp::Vocab vocab;
  std::optional<cp::IdfTable> idf;
};

std::optional<fs::path> model_dir(const GlobalOptions& g);
LoadedModel load_model(const GlobalOptions& g);

cp::RunHeader make_header(const GlobalOptions& g, const cp::ModelWeights* weights,
                          std::vector<std::pair<std::string, std::string>> extra = {});

/// The IDF table from --idf, else the model's idf.tsv; throws ValidationError.
cp::IdfTable require_idf(const std::string& flag, const LoadedModel& m);

template <typename T>
void apply_limit(std::vector<T>& v, std::size_t limit) {
  if (limit && v.size() > limit) v.resize(limit);
}

std::vector<cp::HeadId> heads_or(const std::string& flag, const std::vector<cp::HeadId>& fallback);

std::vector<double> parse_doubles(const std::string& csv);

/// Runs the action of whichever leaf subcommand was parsed.
class CommandRegistry {
 public:
  void add(CLI::App* app, std::function<void()> action) { entries_.emplace_back(app, std::move(action)); }
  bool run() const;

 private:
  std::vector<std::pair<CLI::App*, std::function<void()>>> entries_;
};

void register_data(CLI::App& app, GlobalOptions& g, CommandRegistry& reg);
void register_patch(CLI::App& app, GlobalOptions& g, CommandRegistry& reg);
void register_analyze(CLI::App& app, GlobalOptions& g, CommandRegistry& reg);
void register_embed(CLI::App& app, GlobalOptions& g, CommandRegistry& reg);
void register_surrogate(CLI::App& app, GlobalOptions& g, CommandRegistry& reg);
