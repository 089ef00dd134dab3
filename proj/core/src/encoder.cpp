#include "circuitprobe/encoder.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "circuitprobe/error.hpp"
#include "circuitprobe/parallel.hpp"

namespace circuitprobe {

namespace {

constexpr std::array<std::pair<HookKind, std::string_view>, 11> kKindNames{{
    {HookKind::embedding_out, "embedding_out"},
    {HookKind::resid_pre, "resid_pre"},
    {HookKind::head_query, "head_query"},
    {HookKind::head_key, "head_key"},
    {HookKind::head_value, "head_value"},
    {HookKind::attn_pattern, "attn_pattern"},
    {HookKind::head_z, "head_z"},
    {HookKind::attn_out, "attn_out"},
    {HookKind::mlp_out, "mlp_out"},
    {HookKind::resid_post, "resid_post"},
    {HookKind::logits, "logits"},
}};

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

bool is_per_head(HookKind kind) noexcept {
  switch (kind) {
    case HookKind::head_query:
    case HookKind::head_key:
    case HookKind::head_value:
    case HookKind::attn_pattern:
    case HookKind::head_z:
      return true;
    default:
      return false;
  }
}

std::string_view to_string(HookKind kind) noexcept {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

std::optional<HookKind> parse_hook_kind(std::string_view name) noexcept {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  return std::nullopt;
}

std::string to_string(const HookPoint& hp) {
  std::string s(to_string(hp.kind));
  if (hp.kind != HookKind::embedding_out && hp.kind != HookKind::logits) {
    s += ':' + std::to_string(hp.layer);
    if (hp.head) s += '.' + std::to_string(*hp.head);
  }
  if (hp.position) s += '@' + std::to_string(*hp.position);
  return s;
}

HookPoint parse_hook_point(std::string_view text) {
  auto fail = [&] { return ValidationError("bad hook point '" + std::string(text) + "'"); };
  HookPoint hp;
  std::string_view rest = text;
  if (const auto at = rest.find('@'); at != std::string_view::npos) {
    hp.position = parse_index(rest.substr(at + 1));
    if (!hp.position) throw fail();
    rest = rest.substr(0, at);
  }
  const auto colon = rest.find(':');
  const auto kind = parse_hook_kind(rest.substr(0, colon));
  if (!kind) throw fail();
  hp.kind = *kind;
  if (hp.kind == HookKind::embedding_out || hp.kind == HookKind::logits) {
    if (colon != std::string_view::npos) throw fail();
    return hp;
  }
  if (colon == std::string_view::npos) throw fail();
  const auto loc = rest.substr(colon + 1);
  const auto dot = loc.find('.');
  const auto layer = parse_index(loc.substr(0, dot));
  if (!layer) throw fail();
  hp.layer = *layer;
  if (dot != std::string_view::npos) {
    hp.head = parse_index(loc.substr(dot + 1));
    if (!hp.head) throw fail();
  }
  if (is_per_head(hp.kind) != hp.head.has_value()) throw fail();
  return hp;
}

void validate(const HookPoint& hp, const ModelConfig& config) {
  if (is_per_head(hp.kind) != hp.head.has_value()) {
    throw ValidationError("hook " + to_string(hp) +
                          (hp.head ? ": head given for a layer-level hook"
                                   : ": per-head hook needs a head"));
  }
  const bool layered = hp.kind != HookKind::embedding_out && hp.kind != HookKind::logits;
  if (layered && hp.layer >= config.num_layers)
    throw ValidationError("hook " + to_string(hp) + ": layer out of range");
  if (hp.head && *hp.head >= config.num_heads)
    throw ValidationError("hook " + to_string(hp) + ": head out of range");
}

std::size_t topo_order(const HookPoint& hp) noexcept {
  constexpr std::size_t kStride = 16;
  std::size_t stage = 0;
  switch (hp.kind) {
    case HookKind::embedding_out: return 0;
    case HookKind::logits: return static_cast<std::size_t>(-1);
    case HookKind::resid_pre: stage = 0; break;
    case HookKind::head_query:
    case HookKind::head_key:
    case HookKind::head_value: stage = 1; break;
    case HookKind::attn_pattern: stage = 2; break;
    case HookKind::head_z: stage = 3; break;
    case HookKind::attn_out: stage = 4; break;
    case HookKind::mlp_out: stage = 5; break;
    case HookKind::resid_post: stage = 6; break;
  }
  return 1 + hp.layer * kStride + stage;
}

HookSet HookSet::all() {
  HookSet s;
  s.all_ = true;
  return s;
}

HookSet& HookSet::add(HookKind kind, std::optional<std::size_t> layer,
                      std::optional<std::size_t> head) {
  rules_.push_back({kind, layer, head});
  return *this;
}

bool HookSet::contains(HookKind kind, std::size_t layer, std::size_t head) const noexcept {
  if (all_) return true;
  for (const auto& r : rules_) {
    if (r.kind != kind) continue;
    if (r.layer && *r.layer != layer) continue;
    if (r.head && *r.head != head) continue;
    return true;
  }
  return false;
}

bool ActivationCache::has(const HookPoint& hp) const {
  return store_.count({hp.kind, hp.layer, hp.head.value_or(0)}) != 0;
}

const Matrix& ActivationCache::get(HookKind kind, std::size_t layer, std::size_t head) const {
  auto it = store_.find({kind, layer, head});
  if (it == store_.end()) {
    HookPoint hp{kind, layer, {}, {}};
    if (is_per_head(kind)) hp.head = head;
    throw ValidationError("activation cache: hook " + to_string(hp) + " not recorded");
  }
  return it->second;
}

const Matrix& ActivationCache::get(const HookPoint& hp) const {
  return get(hp.kind, hp.layer, hp.head.value_or(0));
}

void ActivationCache::put(HookKind kind, std::size_t layer, std::size_t head, Matrix value) {
  store_.insert_or_assign(Key{kind, layer, head}, std::move(value));
}

Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim) {
  Matrix out(m.rows(), head_dim);
  const std::size_t off = head * head_dim;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(off), head_dim, out.row(r).begin());
  }
  return out;
}

double attention_checksum(const Matrix& pattern) {
  double s = 0.0;
  for (std::size_t i = 0; i < pattern.rows(); ++i)
    for (std::size_t j = 0; j < pattern.cols(); ++j) s += double(pattern(i, j)) * double(j);
  return s;
}

namespace {

using Key = ActivationCache::Key;

class InterventionTable {
 public:
  InterventionTable(std::span<const Intervention> list, const ModelConfig& config) {
    for (const auto& iv : list) {
      validate(iv.target, config);
      if (iv.target.kind == HookKind::logits)
        throw ValidationError("interventions cannot target logits");
      by_key_[key(iv.target)].push_back(&iv);
    }
  }

  static Key key(const HookPoint& hp) { return {hp.kind, hp.layer, hp.head.value_or(0)}; }

  bool any(HookKind kind, std::size_t layer, std::size_t head = 0) const {
    return by_key_.count({kind, layer, head}) != 0;
  }

  bool full(HookKind kind, std::size_t layer, std::size_t head = 0) const {
    auto it = by_key_.find({kind, layer, head});
    if (it == by_key_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(),
                       [](const Intervention* iv) { return !iv->target.position; });
  }

  void apply(HookKind kind, std::size_t layer, std::size_t head, Matrix& m) const {
    auto it = by_key_.find({kind, layer, head});
    if (it == by_key_.end()) return;
    for (const Intervention* iv : it->second) {
      const Matrix& p = iv->payload;
      if (iv->target.position) {
        const std::size_t pos = *iv->target.position;
        if (pos >= m.rows() || p.rows() != 1 || p.cols() != m.cols()) {
          throw ShapeError("intervention " + to_string(iv->target) + ": payload " +
                           p.shape_string() + " does not fit activation " + m.shape_string());
        }
        std::copy(p.row(0).begin(), p.row(0).end(), m.row(pos).begin());
      } else {
        if (p.rows() != m.rows() || p.cols() != m.cols()) {
          throw ShapeError("intervention " + to_string(iv->target) + ": payload " +
                           p.shape_string() + " does not match activation " + m.shape_string());
        }
        m = p;
      }
    }
  }

  /// Latest layer whose input is fully supplied; 0 when none is.
  std::size_t start_layer(std::size_t num_layers) const {
    for (std::size_t l = num_layers; l-- > 1;)
      if (full(HookKind::resid_pre, l)) return l;
    return 0;
  }

 private:
  std::map<Key, std::vector<const Intervention*>> by_key_;
};

bool hooks_before(const HookSet& hooks, std::size_t layer, std::size_t num_layers,
                  std::size_t num_heads) {
  if (hooks.is_all()) return true;
  if (hooks.contains(HookKind::embedding_out, 0)) return true;
  for (std::size_t l = 0; l < layer && l < num_layers; ++l) {
    for (HookKind k : {HookKind::resid_pre, HookKind::attn_out, HookKind::mlp_out,
                       HookKind::resid_post})
      if (hooks.contains(k, l)) return true;
    for (std::size_t h = 0; h < num_heads; ++h)
      for (HookKind k : {HookKind::head_query, HookKind::head_key, HookKind::head_value,
                         HookKind::attn_pattern, HookKind::head_z})
        if (hooks.contains(k, l, h)) return true;
  }
  return false;
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

void check_input(const EncodedInput& in, const ModelConfig& c) {
  const std::size_t t = in.token_ids.size();
  if (t == 0) throw ValidationError("forward: empty input");
  if (in.token_type_ids.size() != t || in.attention_mask.size() != t)
    throw ShapeError("forward: token_ids, token_type_ids and attention_mask differ in length");
  if (t > c.max_positions)
    throw ValidationError("forward: sequence of " + std::to_string(t) + " exceeds " +
                          std::to_string(c.max_positions) + " positions");
  for (std::size_t i = 0; i < t; ++i) {
    if (in.token_ids[i] < 0 || static_cast<std::size_t>(in.token_ids[i]) >= c.vocab_size)
      throw ValidationError("forward: token id " + std::to_string(in.token_ids[i]) +
                            " out of range at position " + std::to_string(i));
    if (in.token_type_ids[i] >= c.type_vocab_size)
      throw ValidationError("forward: token type out of range at position " + std::to_string(i));
  }
  if (std::none_of(in.attention_mask.begin(), in.attention_mask.end(),
                   [](std::uint8_t m) { return m != 0; }))
    throw ValidationError("forward: attention mask excludes every token");
}

Matrix embed(const ModelWeights& w, const EncodedInput& in) {
  const auto& c = w.config();
  const auto& b = w.body();
  const std::size_t t = in.token_ids.size();
  Matrix x(t, c.hidden_size);
  for (std::size_t i = 0; i < t; ++i) {
    const auto word = w.word_embeddings().row(static_cast<std::size_t>(in.token_ids[i]));
    const auto pos = b.position_embeddings.row(i);
    const auto type = b.token_type_embeddings.row(in.token_type_ids[i]);
    auto dst = x.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = word[j] + pos[j] + type[j];
  }
  return layer_norm(x, b.embedding_norm.gamma, b.embedding_norm.beta, c.layer_norm_eps);
}

std::size_t targets_max_layer(const std::vector<std::pair<std::size_t, std::size_t>>& targets) {
  std::size_t m = 0;
  for (const auto& t : targets) m = std::max(m, t.first);
  return m;
}

}  // namespace

ActivationCache forward(const ModelWeights& weights, const EncodedInput& input,
                        const HookSet& hooks, std::span<const Intervention> interventions,
                        const ForwardOptions& options) {
  const ModelConfig& c = weights.config();
  check_input(input, c);
  const InterventionTable iv(interventions, c);
  const std::size_t t = input.token_ids.size();
  const std::size_t nh = c.num_heads;
  const std::size_t hd = c.head_dim();
  const float eps = c.layer_norm_eps;
  const std::size_t last_layer =
      std::min(options.stop_after_layer.value_or(c.num_layers - 1), c.num_layers - 1);

  ActivationCache cache;
  cache.set_input(input);
  auto record = [&](HookKind kind, std::size_t layer, std::size_t head, const Matrix& m) {
    if (hooks.contains(kind, layer, head)) cache.put(kind, layer, head, m);
  };

  std::size_t start = iv.start_layer(c.num_layers);
  if (start > 0 && hooks_before(hooks, start, c.num_layers, nh)) start = 0;

  Matrix x;
  if (start == 0) {
    if (iv.full(HookKind::embedding_out, 0) || iv.full(HookKind::resid_pre, 0))
      x = Matrix(t, c.hidden_size);
    else
      x = embed(weights, input);
    iv.apply(HookKind::embedding_out, 0, 0, x);
    record(HookKind::embedding_out, 0, 0, x);
  } else {
    x = Matrix(t, c.hidden_size);
  }

  std::vector<std::uint8_t> mask(t * t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) mask[i * t + j] = input.attention_mask[j] ? 1 : 0;
  const float scale = 1.0F / std::sqrt(static_cast<float>(hd));

  for (std::size_t l = start; l <= last_layer; ++l) {
    const LayerWeights& lw = weights.layer(l);
    try {
      iv.apply(HookKind::resid_pre, l, 0, x);
      record(HookKind::resid_pre, l, 0, x);

      bool need_heads = !iv.full(HookKind::attn_out, l);
      bool all_z_given = true;
      for (std::size_t h = 0; h < nh; ++h) all_z_given = all_z_given && iv.full(HookKind::head_z, l, h);
      bool wants_inner = false;
      for (std::size_t h = 0; h < nh; ++h)
        for (HookKind k : {HookKind::head_query, HookKind::head_key, HookKind::head_value,
                           HookKind::attn_pattern, HookKind::head_z})
          wants_inner = wants_inner || hooks.contains(k, l, h);
      const bool need_qkv = wants_inner || (need_heads && !all_z_given);

      Matrix attn;
      if (need_heads || wants_inner) {
        Matrix z_all(t, c.hidden_size);
        Matrix q_all, k_all, v_all;
        if (need_qkv) {
          q_all = linear(x, lw.query);
          k_all = linear(x, lw.key);
          v_all = linear(x, lw.value);
        }
        for (std::size_t h = 0; h < nh; ++h) {
          Matrix z;
          if (need_qkv) {
            Matrix q = head_slice(q_all, h, hd);
            Matrix k = head_slice(k_all, h, hd);
            Matrix v = head_slice(v_all, h, hd);
            iv.apply(HookKind::head_query, l, h, q);
            iv.apply(HookKind::head_key, l, h, k);
            iv.apply(HookKind::head_value, l, h, v);
            record(HookKind::head_query, l, h, q);
            record(HookKind::head_key, l, h, k);
            record(HookKind::head_value, l, h, v);
            Matrix scores = matmul_transposed(q, k);
            for (float& s : scores.data()) s *= scale;
            Matrix pattern = softmax_rows(scores, mask);
            iv.apply(HookKind::attn_pattern, l, h, pattern);
            record(HookKind::attn_pattern, l, h, pattern);
            z = matmul(pattern, v);
          } else {
            z = Matrix(t, hd);
          }
          iv.apply(HookKind::head_z, l, h, z);
          record(HookKind::head_z, l, h, z);
          for (std::size_t r = 0; r < t; ++r)
            std::copy(z.row(r).begin(), z.row(r).end(), z_all.row(r).begin() + h * hd);
        }
        if (need_heads) attn = linear(z_all, lw.attn_output);
      }
      if (!need_heads) attn = Matrix(t, c.hidden_size);
      iv.apply(HookKind::attn_out, l, 0, attn);
      record(HookKind::attn_out, l, 0, attn);

      add_inplace(attn, x);
      Matrix h1 = layer_norm(attn, lw.attn_norm.gamma, lw.attn_norm.beta, eps);

      Matrix ff;
      if (iv.full(HookKind::mlp_out, l)) {
        ff = Matrix(t, c.hidden_size);
      } else {
        Matrix inner = linear(h1, lw.ffn_in);
        gelu_inplace(inner);
        ff = linear(inner, lw.ffn_out);
      }
      iv.apply(HookKind::mlp_out, l, 0, ff);
      record(HookKind::mlp_out, l, 0, ff);

      add_inplace(ff, h1);
      x = layer_norm(ff, lw.ffn_norm.gamma, lw.ffn_norm.beta, eps);
      iv.apply(HookKind::resid_post, l, 0, x);
      record(HookKind::resid_post, l, 0, x);
      if (!all_finite(x)) throw NumericError("non-finite residual stream");
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(l) + ": " + e.what());
    }
  }
  if (last_layer + 1 < c.num_layers) return cache;

  const auto& b = weights.body();
  Matrix cls(1, c.hidden_size, std::vector<float>(x.row(0).begin(), x.row(0).end()));
  Matrix pooled = linear(cls, b.pooler);
  tanh_inplace(pooled);
  const Matrix out = linear(pooled, b.classifier);
  if (!all_finite(out)) throw NumericError("classifier: non-finite logit");
  cache.set_logit(out(0, 0));
  return cache;
}

double forward_logit(const ModelWeights& weights, const EncodedInput& input,
                     std::span<const Intervention> interventions) {
  return forward(weights, input, HookSet::none(), interventions).logit();
}

std::vector<double> mean_ablate(const ModelWeights& weights,
                                const std::vector<EncodedInput>& dataset,
                                const std::vector<std::pair<std::size_t, std::size_t>>& targets,
                                std::size_t workers) {
  if (dataset.empty()) throw ValidationError("mean_ablate: empty dataset");
  const ModelConfig& c = weights.config();
  for (const auto& [l, h] : targets) validate(HookPoint::head_hook(HookKind::head_z, l, h), c);
  std::vector<double> logits(dataset.size());
  if (targets.empty()) {
    parallel_for(dataset.size(), workers,
                 [&](std::size_t i) { logits[i] = forward_logit(weights, dataset[i]); });
    return logits;
  }

  HookSet hooks;
  for (const auto& [l, h] : targets) hooks.add(HookKind::head_z, l, h);
  std::vector<std::vector<Matrix>> zs(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    const auto cache = forward(weights, dataset[i], hooks, {}, {targets_max_layer(targets)});
    for (const auto& [l, h] : targets) zs[i].push_back(cache.get(HookKind::head_z, l, h));
  });

  const std::size_t len = dataset.front().size();
  const bool same_length = std::all_of(dataset.begin(), dataset.end(),
                                       [&](const EncodedInput& e) { return e.size() == len; });
  const std::size_t hd = c.head_dim();
  std::vector<Matrix> means;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (same_length) {
      std::vector<double> acc(len * hd, 0.0);
      for (const auto& z : zs)
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += z[k].data()[i];
      Matrix m(len, hd);
      for (std::size_t i = 0; i < acc.size(); ++i)
        m.data()[i] = static_cast<float>(acc[i] / static_cast<double>(dataset.size()));
      means.push_back(std::move(m));
    } else {
      std::vector<double> acc(hd, 0.0);
      std::size_t rows = 0;
      for (const auto& z : zs) {
        for (std::size_t r = 0; r < z[k].rows(); ++r)
          for (std::size_t j = 0; j < hd; ++j) acc[j] += z[k](r, j);
        rows += z[k].rows();
      }
      Matrix m(1, hd);
      for (std::size_t j = 0; j < hd; ++j)
        m(0, j) = static_cast<float>(acc[j] / static_cast<double>(rows));
      means.push_back(std::move(m));
    }
  }

  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    std::vector<Intervention> ivs;
    for (std::size_t k = 0; k < targets.size(); ++k) {
      Matrix payload = means[k];
      if (!same_length) {
        Matrix full(dataset[i].size(), hd);
        for (std::size_t r = 0; r < full.rows(); ++r)
          std::copy(means[k].row(0).begin(), means[k].row(0).end(), full.row(r).begin());
        payload = std::move(full);
      }
      ivs.push_back({HookPoint::head_hook(HookKind::head_z, targets[k].first, targets[k].second),
                     InterventionMode::replace, std::move(payload)});
    }
    logits[i] = forward_logit(weights, dataset[i], ivs);
  });
  return logits;
}

}  // namespace circuitprobe
