#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/tensor_ops.hpp"
#include "circuitprobe/tokenizer.hpp"

namespace circuitprobe {

enum class HookKind {
  embedding_out,  // [T, H] after the embedding layernorm
  resid_pre,      // [T, H] input to a layer
  head_query,     // [T, D] per head
  head_key,       // [T, D] per head
  head_value,     // [T, D] per head
  attn_pattern,   // [T, T] per head, rows are queries
  head_z,         // [T, D] per head, pattern · value
  attn_out,       // [T, H] output projection (with bias), before the residual add
  mlp_out,        // [T, H] feed-forward output (with bias), before the residual add
  resid_post,     // [T, H] output of a layer
  logits,         // receiver-only pseudo hook
};

bool is_per_head(HookKind kind) noexcept;
std::string_view to_string(HookKind kind) noexcept;
std::optional<HookKind> parse_hook_kind(std::string_view name) noexcept;

struct HookPoint {
  HookKind kind = HookKind::resid_post;
  std::size_t layer = 0;
  std::optional<std::size_t> head;      // present iff kind is per-head
  std::optional<std::size_t> position;  // restrict an intervention to one token row

  static HookPoint embedding() { return {HookKind::embedding_out, 0, {}, {}}; }
  static HookPoint logit() { return {HookKind::logits, 0, {}, {}}; }
  static HookPoint layer_hook(HookKind kind, std::size_t layer) { return {kind, layer, {}, {}}; }
  static HookPoint head_hook(HookKind kind, std::size_t layer, std::size_t head) {
    return {kind, layer, head, {}};
  }

  friend bool operator==(const HookPoint&, const HookPoint&) = default;
};

/// "head_z:10.1", "resid_pre:3", "embedding_out", "logits", with an
/// optional "@pos" suffix.
std::string to_string(const HookPoint& hp);
HookPoint parse_hook_point(std::string_view text);

/// Throws ValidationError when the hook does not exist in this geometry.
void validate(const HookPoint& hp, const ModelConfig& config);

/// Position in computation order; a < b means a can influence b.
std::size_t topo_order(const HookPoint& hp) noexcept;

/// Which activations a forward pass records.
class HookSet {
 public:
  static HookSet all();
  static HookSet none() { return {}; }

  /// Unset layer/head match every layer/head.
  HookSet& add(HookKind kind, std::optional<std::size_t> layer = {},
               std::optional<std::size_t> head = {});

  bool contains(HookKind kind, std::size_t layer, std::size_t head = 0) const noexcept;
  bool empty() const noexcept { return !all_ && rules_.empty(); }
  bool is_all() const noexcept { return all_; }

 private:
  struct Rule {
    HookKind kind;
    std::optional<std::size_t> layer, head;
  };
  bool all_ = false;
  std::vector<Rule> rules_;
};

enum class InterventionMode { replace, freeze };

/// Pins the activation at `target` to `payload`. Full-tensor payloads match
/// the hook's shape; with target.position set the payload is a single row.
/// replace and freeze act identically inside one pass; the distinction is
/// recorded for the patching engine.
struct Intervention {
  HookPoint target;
  InterventionMode mode = InterventionMode::replace;
  Matrix payload;
};

class ActivationCache {
 public:
  using Key = std::tuple<HookKind, std::size_t, std::size_t>;

  const EncodedInput& input() const noexcept { return input_; }
  double logit() const noexcept { return logit_; }
  bool has_logit() const noexcept { return has_logit_; }

  bool has(const HookPoint& hp) const;
  /// Throws ValidationError if the hook was not recorded.
  const Matrix& get(const HookPoint& hp) const;
  const Matrix& get(HookKind kind, std::size_t layer, std::size_t head = 0) const;
  std::size_t size() const noexcept { return store_.size(); }

  void put(HookKind kind, std::size_t layer, std::size_t head, Matrix value);
  void set_input(EncodedInput input) { input_ = std::move(input); }
  void set_logit(double logit) {
    logit_ = logit;
    has_logit_ = true;
  }

 private:
  EncodedInput input_;
  double logit_ = 0.0;
  bool has_logit_ = false;
  std::map<Key, Matrix> store_;
};

struct ForwardOptions {
  /// Stop after this layer's resid_post; the cache then carries no logit.
  std::optional<std::size_t> stop_after_layer;
};

/// Post-layernorm BERT forward pass with hooks and interventions.
///
/// Returns the raw classifier logit in the cache. Interventions are applied
/// where their hook is produced, before anything downstream reads it; the
/// cache records the post-intervention value. A full replacement of
/// resid_pre/embedding_out starts the pass there, full head_z replacement of
/// a layer skips its attention, and a full mlp_out replacement skips the
/// feed-forward block, unless hooks inside the skipped region are requested.
ActivationCache forward(const ModelWeights& weights, const EncodedInput& input,
                        const HookSet& hooks = HookSet::none(),
                        std::span<const Intervention> interventions = {},
                        const ForwardOptions& options = {});

double forward_logit(const ModelWeights& weights, const EncodedInput& input,
                     std::span<const Intervention> interventions = {});

/// Replaces each target head's z with its mean over `dataset` and returns
/// the ablated logits. Means are per position when all inputs share a
/// length, else a sequence mean broadcast to every position.
std::vector<double> mean_ablate(const ModelWeights& weights,
                                const std::vector<EncodedInput>& dataset,
                                const std::vector<std::pair<std::size_t, std::size_t>>& targets,
                                std::size_t workers = 0);

/// Columns [head·D, (head+1)·D) of a [T, H] activation.
Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim);

/// Σ_i Σ_j attn[i][j]·j, the per-head fixture checksum.
double attention_checksum(const Matrix& pattern);

}  // namespace circuitprobe
