#include "circuitprobe/patching.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "circuitprobe/error.hpp"
#include "circuitprobe/parallel.hpp"

namespace circuitprobe {

namespace {

bool is_residual(HookKind k) {
  return k == HookKind::embedding_out || k == HookKind::resid_pre || k == HookKind::resid_post;
}

bool is_sender_kind(HookKind k) {
  return is_residual(k) || k == HookKind::head_z || k == HookKind::attn_out ||
         k == HookKind::mlp_out;
}

bool is_head_receiver(HookKind k) {
  return k == HookKind::head_query || k == HookKind::head_key || k == HookKind::head_value;
}

Matrix first_rows(const Matrix& m, std::size_t rows) {
  if (rows == m.rows()) return m;
  std::vector<float> data(m.data().begin(),
                          m.data().begin() + static_cast<std::ptrdiff_t>(rows * m.cols()));
  return Matrix(rows, m.cols(), std::move(data));
}

Matrix linear(const Matrix& x, const Linear& l) {
  Matrix y = matmul(x, l.weight);
  add_row_bias(y, l.bias);
  return y;
}

void add_inplace(Matrix& a, const Matrix& b) {
  auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
}

double classify(const ModelWeights& w, const Matrix& x) {
  const auto& b = w.body();
  Matrix cls(1, x.cols(), std::vector<float>(x.row(0).begin(), x.row(0).end()));
  Matrix pooled = linear(cls, b.pooler);
  tanh_inplace(pooled);
  const Matrix out = linear(pooled, b.classifier);
  if (!all_finite(out)) throw NumericError("classifier: non-finite logit");
  return out(0, 0);
}

const Linear& receiver_projection(const LayerWeights& lw, HookKind kind) {
  switch (kind) {
    case HookKind::head_query: return lw.query;
    case HookKind::head_key: return lw.key;
    default: return lw.value;
  }
}

Matrix payload_for(const ActivationCache& cache, const HookPoint& hp) {
  const Matrix& full = cache.get(hp);
  if (!hp.position) return full;
  if (*hp.position >= full.rows())
    throw ValidationError("hook " + to_string(hp) + ": position out of range");
  return Matrix(1, full.cols(),
                std::vector<float>(full.row(*hp.position).begin(), full.row(*hp.position).end()));
}

void check_receiver(const HookPoint& receiver, const ModelConfig& c) {
  if (receiver.kind != HookKind::logits && !is_head_receiver(receiver.kind))
    throw ValidationError("receiver " + to_string(receiver) +
                          ": must be logits or a head's query/key/value");
  if (receiver.position)
    throw ValidationError("receiver " + to_string(receiver) + ": positions are not supported");
  validate(receiver, c);
}

void check_sender(const HookPoint& sender, const HookPoint& receiver, const ModelConfig& c) {
  validate(sender, c);
  if (!is_sender_kind(sender.kind))
    throw ValidationError("sender " + to_string(sender) +
                          ": must be head_z, attn_out, mlp_out or a residual hook");
  if (topo_order(sender) >= topo_order(receiver))
    throw ValidationError("sender " + to_string(sender) + " is not upstream of receiver " +
                          to_string(receiver));
}

/// Pass 3 when only row-local computation separates a single component
/// sender from the receiver: every head is frozen, so rows never mix and a
/// logit receiver needs only the [CLS] row.
double fast_path(const PairContext& ctx, const HookPoint& sender, const HookPoint& receiver,
                 const PatchOptions& opt, Matrix* r_prime) {
  const ModelWeights& w = ctx.weights();
  const ModelConfig& c = w.config();
  const auto& cb = ctx.baseline();
  const auto& cp = ctx.perturbed();
  const bool to_logits = receiver.kind == HookKind::logits;
  const std::size_t rows = to_logits ? 1 : cb.input().size();
  const std::size_t first = sender.layer;
  const std::size_t end = to_logits ? c.num_layers : receiver.layer;
  const std::size_t hd = c.head_dim();

  Matrix x = first_rows(cb.get(HookKind::resid_pre, first), rows);
  for (std::size_t l = first; l < end; ++l) {
    const LayerWeights& lw = w.layer(l);
    try {
      Matrix attn;
      if (l == first && sender.kind == HookKind::head_z) {
        Matrix z_all(rows, c.hidden_size);
        for (std::size_t h = 0; h < c.num_heads; ++h) {
          const Matrix& z = (h == *sender.head ? cp : cb).get(HookKind::head_z, l, h);
          for (std::size_t r = 0; r < rows; ++r)
            std::copy(z.row(r).begin(), z.row(r).end(), z_all.row(r).begin() + h * hd);
        }
        attn = linear(z_all, lw.attn_output);
      } else if (l == first && sender.kind == HookKind::attn_out) {
        attn = first_rows(cp.get(HookKind::attn_out, l), rows);
      } else {
        attn = first_rows(cb.get(HookKind::attn_out, l), rows);
      }
      add_inplace(attn, x);
      Matrix h1 = layer_norm(attn, lw.attn_norm.gamma, lw.attn_norm.beta, c.layer_norm_eps);

      Matrix ff;
      if (l == first && sender.kind == HookKind::mlp_out) {
        ff = first_rows(cp.get(HookKind::mlp_out, l), rows);
      } else if (opt.freeze_mlps) {
        ff = first_rows(cb.get(HookKind::mlp_out, l), rows);
      } else {
        Matrix inner = linear(h1, lw.ffn_in);
        gelu_inplace(inner);
        ff = linear(inner, lw.ffn_out);
      }
      add_inplace(ff, h1);
      x = layer_norm(ff, lw.ffn_norm.gamma, lw.ffn_norm.beta, c.layer_norm_eps);
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(l) + ": " + e.what());
    }
  }
  if (to_logits) return classify(w, x);
  const Matrix proj = linear(x, receiver_projection(w.layer(receiver.layer), receiver.kind));
  *r_prime = head_slice(proj, *receiver.head, hd);
  return 0.0;
}

double generic_pass3(const PairContext& ctx, std::span<const HookPoint> senders,
                     const HookPoint& receiver, const PatchOptions& opt, Matrix* r_prime) {
  const ModelConfig& c = ctx.weights().config();
  const auto& cb = ctx.baseline();
  const auto& cp = ctx.perturbed();
  const bool to_logits = receiver.kind == HookKind::logits;
  const std::size_t end = to_logits ? c.num_layers : receiver.layer;

  std::vector<Intervention> ivs;
  bool from_embedding = senders.empty();
  bool residual = false;
  std::size_t first = c.num_layers;
  for (const auto& s : senders) {
    residual = residual || is_residual(s.kind);
    if (s.kind == HookKind::embedding_out) from_embedding = true;
    else first = std::min(first, s.layer);
  }
  if (from_embedding) first = 0;
  if (first > 0 && first < c.num_layers)
    ivs.push_back({HookPoint::layer_hook(HookKind::resid_pre, first), InterventionMode::freeze,
                   cb.get(HookKind::resid_pre, first)});

  auto is_full_sender = [&](HookKind kind, std::size_t layer, std::size_t head) {
    return std::any_of(senders.begin(), senders.end(), [&](const HookPoint& s) {
      return !s.position && s.kind == kind && s.layer == layer && s.head.value_or(0) == head;
    });
  };
  if (!residual) {
    for (std::size_t l = first; l < end; ++l) {
      if (opt.freeze_heads && !is_full_sender(HookKind::attn_out, l, 0)) {
        for (std::size_t h = 0; h < c.num_heads; ++h) {
          if (is_full_sender(HookKind::head_z, l, h)) continue;
          ivs.push_back({HookPoint::head_hook(HookKind::head_z, l, h), InterventionMode::freeze,
                         cb.get(HookKind::head_z, l, h)});
        }
      }
      if (opt.freeze_mlps && !is_full_sender(HookKind::mlp_out, l, 0))
        ivs.push_back({HookPoint::layer_hook(HookKind::mlp_out, l), InterventionMode::freeze,
                       cb.get(HookKind::mlp_out, l)});
    }
  }
  for (const auto& s : senders) ivs.push_back({s, InterventionMode::replace, payload_for(cp, s)});

  HookSet hooks;
  ForwardOptions fo;
  if (!to_logits) {
    hooks.add(receiver.kind, receiver.layer, receiver.head);
    fo.stop_after_layer = receiver.layer;
  }
  const ActivationCache out = forward(ctx.weights(), cb.input(), hooks, ivs, fo);
  if (to_logits) return out.logit();
  *r_prime = out.get(receiver);
  return 0.0;
}

}  // namespace

PatchPair align_pair(EncodedInput baseline, EncodedInput perturbed, TokenId filler,
                     std::string id) {
  auto query_ids = [](const EncodedInput& e) {
    return std::vector<TokenId>(e.token_ids.begin() + static_cast<std::ptrdiff_t>(e.query_span.begin),
                                e.token_ids.begin() + static_cast<std::ptrdiff_t>(e.query_span.end));
  };
  if (query_ids(baseline) != query_ids(perturbed))
    throw ValidationError("patch pair " + id + ": query tokens differ between runs");
  if (baseline.size() < 2 || perturbed.size() < 2)
    throw ValidationError("patch pair " + id + ": encoding too short");
  auto pad = [filler](EncodedInput& e, std::size_t n) {
    const auto at = static_cast<std::ptrdiff_t>(e.size() - 1);
    e.token_ids.insert(e.token_ids.begin() + at, n, filler);
    e.token_type_ids.insert(e.token_type_ids.begin() + at, n, std::uint8_t{1});
    e.attention_mask.insert(e.attention_mask.begin() + at, n, std::uint8_t{1});
  };
  if (baseline.size() < perturbed.size()) pad(baseline, perturbed.size() - baseline.size());
  if (perturbed.size() < baseline.size()) pad(perturbed, baseline.size() - perturbed.size());
  return {std::move(baseline), std::move(perturbed), std::move(id)};
}

PairContext::PairContext(const ModelWeights& weights, PatchPair pair)
    : weights_(&weights), pair_(std::move(pair)) {
  if (pair_.baseline.size() != pair_.perturbed.size())
    throw ValidationError("patch pair " + pair_.id + ": runs differ in length; align first");
  cache_b_ = forward(weights, pair_.baseline, HookSet::all());
  cache_p_ = forward(weights, pair_.perturbed, HookSet::all());
}

bool PairContext::degenerate() const noexcept {
  return std::abs(logit_p() - logit_b()) <= kDegenerateDelta;
}

PatchEffect PairContext::effect(std::vector<HookPoint> senders, HookPoint receiver,
                                double patched) const {
  PatchEffect e;
  e.senders = std::move(senders);
  e.receiver = receiver;
  e.logit_b = logit_b();
  e.logit_p = logit_p();
  e.logit_patched = patched;
  e.raw = patched - e.logit_b;
  if (!degenerate()) e.normalized = e.raw / (e.logit_p - e.logit_b);
  return e;
}

PatchEffect activation_patch(const PairContext& ctx, const HookPoint& target) {
  const ModelConfig& c = ctx.weights().config();
  validate(target, c);
  if (target.kind == HookKind::logits) throw ValidationError("cannot patch the logits");
  std::vector<Intervention> ivs;
  if (target.kind != HookKind::embedding_out && target.layer > 0)
    ivs.push_back({HookPoint::layer_hook(HookKind::resid_pre, target.layer),
                   InterventionMode::freeze, ctx.baseline().get(HookKind::resid_pre, target.layer)});
  ivs.push_back({target, InterventionMode::replace, payload_for(ctx.perturbed(), target)});
  const double patched = forward_logit(ctx.weights(), ctx.baseline().input(), ivs);
  return ctx.effect({target}, HookPoint::logit(), patched);
}

PatchEffect path_patch(const PairContext& ctx, std::span<const HookPoint> senders,
                       const HookPoint& receiver, const PatchOptions& options) {
  const ModelConfig& c = ctx.weights().config();
  check_receiver(receiver, c);
  for (const auto& s : senders) check_sender(s, receiver, c);

  const bool fast = !options.reference && options.freeze_heads && senders.size() == 1 &&
                    !senders[0].position &&
                    (senders[0].kind == HookKind::head_z || senders[0].kind == HookKind::attn_out ||
                     senders[0].kind == HookKind::mlp_out);
  Matrix r_prime;
  double patched = fast ? fast_path(ctx, senders[0], receiver, options, &r_prime)
                        : generic_pass3(ctx, senders, receiver, options, &r_prime);
  if (receiver.kind != HookKind::logits) {
    const std::vector<Intervention> ivs{
        {HookPoint::layer_hook(HookKind::resid_pre, receiver.layer), InterventionMode::freeze,
         ctx.baseline().get(HookKind::resid_pre, receiver.layer)},
        {receiver, InterventionMode::replace, std::move(r_prime)}};
    patched = forward_logit(ctx.weights(), ctx.baseline().input(), ivs);
  }
  return ctx.effect({senders.begin(), senders.end()}, receiver, patched);
}

PatchEffect path_patch(const PairContext& ctx, const HookPoint& sender, const HookPoint& receiver,
                       const PatchOptions& options) {
  return path_patch(ctx, std::span<const HookPoint>(&sender, 1), receiver, options);
}

std::vector<std::size_t> SweepResult::ranking() const {
  std::vector<std::size_t> idx(senders.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const double v = mean_normalized[i];
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  return idx;
}

std::vector<std::uint8_t> SweepResult::in_top_fraction(double fraction) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < senders.size(); ++i)
    if (!std::isnan(mean_raw[i])) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mean_raw[a] > mean_raw[b]; });
  const auto keep = std::min(idx.size(), static_cast<std::size_t>(
                                             std::ceil(fraction * static_cast<double>(senders.size()))));
  std::vector<std::uint8_t> out(senders.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) out[idx[i]] = 1;
  return out;
}

SweepResult sweep(const ModelWeights& weights, const std::vector<PatchPair>& pairs,
                  const std::vector<HookPoint>& senders, const HookPoint& receiver,
                  PatchMode mode, const PatchOptions& options, std::size_t workers) {
  const ModelConfig& c = weights.config();
  if (mode == PatchMode::path) {
    check_receiver(receiver, c);
    for (const auto& s : senders) check_sender(s, receiver, c);
  }
  SweepResult res;
  res.mode = mode;
  res.senders = senders;
  res.receiver = mode == PatchMode::path ? receiver : HookPoint::logit();
  res.effects.resize(pairs.size());
  for (const auto& p : pairs) res.pair_ids.push_back(p.id);

  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const PairContext ctx(weights, pairs[i]);
    auto& row = res.effects[i];
    row.reserve(senders.size());
    for (const auto& s : senders)
      row.push_back(mode == PatchMode::path ? path_patch(ctx, s, receiver, options)
                                            : activation_patch(ctx, s));
  });

  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.mean_raw.assign(senders.size(), nan);
  res.mean_normalized.assign(senders.size(), nan);
  std::vector<double> sum_raw(senders.size(), 0.0), sum_norm(senders.size(), 0.0);
  for (const auto& row : res.effects) {
    if (row.empty() || row.front().degenerate()) {
      ++res.n_degenerate;
      continue;
    }
    ++res.n_used;
    for (std::size_t s = 0; s < row.size(); ++s) {
      sum_raw[s] += row[s].raw;
      sum_norm[s] += *row[s].normalized;
    }
  }
  if (res.n_used > 0 && !pairs.empty()) {
    for (std::size_t s = 0; s < senders.size(); ++s) {
      res.mean_raw[s] = sum_raw[s] / static_cast<double>(res.n_used);
      res.mean_normalized[s] = sum_norm[s] / static_cast<double>(res.n_used);
    }
  }
  return res;
}

std::vector<HookPoint> all_head_senders(const ModelConfig& config) {
  std::vector<HookPoint> out;
  out.reserve(config.num_head_slots());
  for (std::size_t l = 0; l < config.num_layers; ++l)
    for (std::size_t h = 0; h < config.num_heads; ++h)
      out.push_back(HookPoint::head_hook(HookKind::head_z, l, h));
  return out;
}

HookPoint parse_receiver(std::string_view text) {
  auto fail = [&] {
    return ValidationError("bad receiver '" + std::string(text) +
                           "'; expected logits or head:L.H:{query|key|value}");
  };
  if (text == "logits") return HookPoint::logit();
  if (!text.starts_with("head:")) throw fail();
  std::string_view rest = text.substr(5);
  const auto colon = rest.find(':');
  if (colon == std::string_view::npos) throw fail();
  const std::string_view loc = rest.substr(0, colon);
  const std::string_view part = rest.substr(colon + 1);
  const auto dot = loc.find('.');
  if (dot == std::string_view::npos) throw fail();
  std::size_t layer = 0, head = 0;
  auto num = [](std::string_view s, std::size_t& v) {
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && ec == std::errc{} && p == s.data() + s.size();
  };
  if (!num(loc.substr(0, dot), layer) || !num(loc.substr(dot + 1), head)) throw fail();
  HookKind kind;
  if (part == "value") kind = HookKind::head_value;
  else if (part == "query") kind = HookKind::head_query;
  else if (part == "key") kind = HookKind::head_key;
  else throw fail();
  return HookPoint::head_hook(kind, layer, head);
}

std::string receiver_name(const HookPoint& receiver) {
  if (receiver.kind == HookKind::logits) return "logits";
  std::string part = receiver.kind == HookKind::head_value ? "value"
                     : receiver.kind == HookKind::head_query ? "query"
                                                             : "key";
  return "head:" + std::to_string(receiver.layer) + "." + std::to_string(receiver.head.value_or(0)) +
         ":" + part;
}

CsvTable sweep_table(const SweepResult& result) {
  CsvTable t({"sender_layer", "sender_head", "receiver", "mean_raw", "mean_norm", "n", "sender",
              "n_degenerate", "top30"});
  const std::string recv = receiver_name(result.receiver);
  const auto top = result.in_top_fraction(0.3);
  for (std::size_t s = 0; s < result.senders.size(); ++s) {
    const HookPoint& hp = result.senders[s];
    const bool layered = hp.kind != HookKind::embedding_out;
    t.add_row({layered ? std::to_string(hp.layer) : "",
               hp.head ? std::to_string(*hp.head) : "", recv, fmt(result.mean_raw[s]),
               fmt(result.mean_normalized[s]), std::to_string(result.n_used), to_string(hp),
               std::to_string(result.n_degenerate), top[s] ? "1" : "0"});
  }
  return t;
}

std::string sweep_heatmap(const SweepResult& result, const ModelConfig& config) {
  HeatmapSpec spec;
  spec.title = "mean normalized effect -> " + receiver_name(result.receiver);
  for (std::size_t l = 0; l < config.num_layers; ++l) spec.row_labels.push_back("L" + std::to_string(l));
  for (std::size_t h = 0; h < config.num_heads; ++h) spec.col_labels.push_back("H" + std::to_string(h));
  spec.values.assign(config.num_layers, std::vector<double>(config.num_heads,
                                                           std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t s = 0; s < result.senders.size(); ++s) {
    const HookPoint& hp = result.senders[s];
    if (hp.kind != HookKind::head_z || hp.position || hp.layer >= config.num_layers) continue;
    spec.values[hp.layer][*hp.head] = result.mean_normalized[s];
  }
  return heatmap_svg(spec);
}

}  // namespace circuitprobe
