#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "circuitprobe/encoder.hpp"
#include "circuitprobe/report.hpp"

namespace circuitprobe {

inline constexpr double kDegenerateDelta = 1e-6;

/// Baseline and perturbed encodings of one minimal pair, aligned to the same
/// length so activations can be swapped position by position.
struct PatchPair {
  EncodedInput baseline;
  EncodedInput perturbed;
  std::string id;
};

/// Pads the shorter document with `filler` (unmasked, token type 1) just
/// before its final [SEP]. Throws ValidationError when the query tokens
/// differ between the two encodings.
PatchPair align_pair(EncodedInput baseline, EncodedInput perturbed, TokenId filler,
                     std::string id = {});

struct PatchEffect {
  std::vector<HookPoint> senders;
  HookPoint receiver = HookPoint::logit();
  double logit_b = 0.0;
  double logit_p = 0.0;
  double logit_patched = 0.0;
  double raw = 0.0;                   // logit_patched - logit_b
  std::optional<double> normalized;   // raw / (logit_p - logit_b)

  bool degenerate() const noexcept { return !normalized.has_value(); }
};

struct PatchOptions {
  bool freeze_heads = true;  // pin non-sender head_z to baseline in pass 3
  bool freeze_mlps = true;   // pin non-sender mlp_out to baseline in pass 3
  bool reference = false;    // always take the generic intervention route
};

/// Both runs of a pair, cached with every hook.
class PairContext {
 public:
  PairContext(const ModelWeights& weights, PatchPair pair);

  const ModelWeights& weights() const noexcept { return *weights_; }
  const PatchPair& pair() const noexcept { return pair_; }
  const ActivationCache& baseline() const noexcept { return cache_b_; }
  const ActivationCache& perturbed() const noexcept { return cache_p_; }
  double logit_b() const noexcept { return cache_b_.logit(); }
  double logit_p() const noexcept { return cache_p_.logit(); }
  bool degenerate() const noexcept;

  PatchEffect effect(std::vector<HookPoint> senders, HookPoint receiver, double patched) const;

 private:
  const ModelWeights* weights_;
  PatchPair pair_;
  ActivationCache cache_b_;
  ActivationCache cache_p_;
};

/// Runs x_b with target replaced by its x_p activation and reads the logit.
PatchEffect activation_patch(const PairContext& ctx, const HookPoint& target);

/// Four-pass path patching: with sender activations taken from x_p and, for
/// component senders, every other head_z / mlp_out frozen at x_b, record the
/// receiver; then run x_b with only the receiver replaced. Residual senders
/// (embedding_out, resid_pre, resid_post) are patched without freezing.
/// Receivers are logits or a head's query/key/value. Throws ValidationError
/// unless every sender is strictly upstream of the receiver.
PatchEffect path_patch(const PairContext& ctx, std::span<const HookPoint> senders,
                       const HookPoint& receiver, const PatchOptions& options = {});
PatchEffect path_patch(const PairContext& ctx, const HookPoint& sender, const HookPoint& receiver,
                       const PatchOptions& options = {});

enum class PatchMode { activation, path };

struct SweepResult {
  PatchMode mode = PatchMode::path;
  std::vector<HookPoint> senders;
  HookPoint receiver = HookPoint::logit();
  std::vector<std::string> pair_ids;
  std::vector<std::vector<PatchEffect>> effects;  // [pair][sender]
  std::vector<double> mean_raw;                   // over non-degenerate pairs
  std::vector<double> mean_normalized;
  std::size_t n_used = 0;
  std::size_t n_degenerate = 0;

  /// Sender indices by descending mean normalized effect.
  std::vector<std::size_t> ranking() const;
  /// 1 for senders whose mean raw effect is within the top `fraction`
  /// (at least one sender when any mean is defined).
  std::vector<std::uint8_t> in_top_fraction(double fraction = 0.3) const;
};

/// Patches every sender on every pair. In activation mode the receiver is
/// ignored and each sender is patched directly into x_b.
SweepResult sweep(const ModelWeights& weights, const std::vector<PatchPair>& pairs,
                  const std::vector<HookPoint>& senders, const HookPoint& receiver,
                  PatchMode mode = PatchMode::path, const PatchOptions& options = {},
                  std::size_t workers = 0);

std::vector<HookPoint> all_head_senders(const ModelConfig& config);

/// "logits" or "head:L.H:value|query|key".
HookPoint parse_receiver(std::string_view text);
std::string receiver_name(const HookPoint& receiver);

/// sender_layer, sender_head, receiver, mean_raw, mean_norm, n, sender, n_degenerate, top30.
CsvTable sweep_table(const SweepResult& result);

/// Layer × head grid of mean normalized effects for head senders.
std::string sweep_heatmap(const SweepResult& result, const ModelConfig& config);

}  // namespace circuitprobe
