#include <iostream>
#include <memory>

#include "common.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

namespace {

struct PatchArgs {
  std::string mode = "path";
  std::string dataset, out, heatmap;
  std::string receiver = "logits";
  std::string senders = "heads";
  std::string filler = "[PAD]";
  std::size_t perturbation = 0;
  std::size_t top = 10;
  bool no_freeze = false;
};

std::vector<cp::HookPoint> parse_senders(const std::string& text, const cp::ModelConfig& config) {
  if (text == "heads") return cp::all_head_senders(config);
  std::vector<cp::HookPoint> out;
  for (auto part : cp::split(text, ',')) {
    part = cp::trim(part);
    if (part.empty()) continue;
    auto hp = cp::parse_hook_point(part);
    cp::validate(hp, config);
    out.push_back(hp);
  }
  if (out.empty()) throw cp::ValidationError("no senders in '" + text + "'");
  return out;
}

void run_patch(const PatchArgs& a, const GlobalOptions& g) {
  cp::PatchMode mode;
  if (a.mode == "path") mode = cp::PatchMode::path;
  else if (a.mode == "activation") mode = cp::PatchMode::activation;
  else throw cp::ValidationError("--mode is activation or path");
  const auto receiver = cp::parse_receiver(a.receiver);

  const auto m = load_model(g);
  cp::validate(receiver, m.weights.config());
  const auto senders = parse_senders(a.senders, m.weights.config());
  const auto filler = m.vocab.find(a.filler);
  if (!filler) throw cp::ValidationError("filler token '" + a.filler + "' is not in the vocabulary");

  auto data = cp::load_diagnostics(a.dataset);
  apply_limit(data, g.limit);
  if (data.empty()) throw cp::ValidationError(a.dataset + " has no pairs");
  const std::size_t max_len = std::min(cp::kMaxSequenceLength, m.weights.config().max_positions);
  std::vector<cp::PatchPair> pairs;
  pairs.reserve(data.size());
  for (const auto& d : data) pairs.push_back(cp::encode_diagnostic(d, a.perturbation, m.vocab, *filler, max_len));

  cp::PatchOptions options;
  options.freeze_heads = options.freeze_mlps = !a.no_freeze;
  const auto result = cp::sweep(m.weights, pairs, senders, receiver, mode, options, g.workers);

  const auto header = make_header(g, &m.weights,
                                  {{"mode", a.mode},
                                   {"dataset", a.dataset},
                                   {"receiver", cp::receiver_name(receiver)},
                                   {"perturbation", std::to_string(a.perturbation)},
                                   {"filler", a.filler},
                                   {"pairs", std::to_string(pairs.size())},
                                   {"used", std::to_string(result.n_used)},
                                   {"degenerate", std::to_string(result.n_degenerate)}});
  cp::sweep_table(result).write(a.out, header);
  if (!a.heatmap.empty()) cp::write_text_file(a.heatmap, cp::sweep_heatmap(result, m.weights.config()));

  std::cout << pairs.size() << " pairs, " << result.n_used << " used, " << result.n_degenerate
            << " degenerate\n";
  const auto order = result.ranking();
  for (std::size_t i = 0; i < std::min(a.top, order.size()); ++i)
    std::cout << i + 1 << '\t' << cp::to_string(result.senders[order[i]]) << '\t'
              << cp::fmt(result.mean_normalized[order[i]]) << '\n';
}

}  // namespace

void register_patch(CLI::App& app, GlobalOptions& g, CommandRegistry& reg) {
  auto a = std::make_shared<PatchArgs>();
  auto* sub = app.add_subcommand("patch", "Activation or path patching sweep");
  sub->add_option("--mode", a->mode, "activation or path")->check(CLI::IsMember({"activation", "path"}));
  sub->add_option("--dataset", a->dataset, "Diagnostic JSONL")->required()->check(CLI::ExistingFile);
  sub->add_option("--receiver", a->receiver, "logits or head:L.H:value|query|key");
  sub->add_option("--senders", a->senders, "\"heads\" or comma-separated hook points");
  sub->add_option("--out", a->out, "Output CSV")->required();
  sub->add_option("--heatmap", a->heatmap, "Layer x head SVG");
  sub->add_option("--perturbation", a->perturbation, "Perturbed document index (0-based)");
  sub->add_option("--filler", a->filler, "Token used to align pair lengths");
  sub->add_option("--top", a->top, "Senders to print");
  sub->add_flag("--no-freeze", a->no_freeze, "Do not freeze non-sender components");
  reg.add(sub, [a, &g] { run_patch(*a, g); });
}
