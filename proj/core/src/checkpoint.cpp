#include "circuitprobe/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "circuitprobe/error.hpp"
#include "circuitprobe/text_io.hpp"

namespace circuitprobe {

using json = nlohmann::json;

namespace {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string layer_prefix(std::size_t i) { return "encoder.layer." + std::to_string(i) + "."; }

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000U) << 16;
  std::uint32_t exp = (h >> 10) & 0x1FU;
  std::uint32_t mant = h & 0x3FFU;
  std::uint32_t bits = 0;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while (!(mant & 0x400U)) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FFU;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7F800000U | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

struct TensorEntry {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64") return 8;
  return 0;
}

class Container {
 public:
  explicit Container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (file_size < 8) throw FormatError("checkpoint: header parse error: file shorter than 8 bytes");
    unsigned char len_bytes[8];
    in.read(reinterpret_cast<char*>(len_bytes), 8);
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | len_bytes[i];
    if (header_len > file_size - 8) {
      throw FormatError("checkpoint: header parse error: header length " +
                        std::to_string(header_len) + " exceeds file size " +
                        std::to_string(file_size));
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    json doc;
    try {
      doc = json::parse(header);
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint: header parse error: ") + e.what());
    }
    if (!doc.is_object()) throw FormatError("checkpoint: header parse error: not an object");

    const std::size_t data_size = file_size - 8 - header_len;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() == "__metadata__") continue;
      const auto& v = it.value();
      TensorEntry e;
      try {
        e.dtype = v.at("dtype").get<std::string>();
        e.shape = v.at("shape").get<std::vector<std::size_t>>();
        const auto offs = v.at("data_offsets").get<std::vector<std::size_t>>();
        if (offs.size() != 2) throw FormatError("");
        e.begin = offs[0];
        e.end = offs[1];
      } catch (const std::exception&) {
        throw FormatError("checkpoint: header parse error: bad entry for " + it.key());
      }
      if (e.begin > e.end || e.end > data_size) {
        throw FormatError("checkpoint: " + it.key() + ": data offsets out of bounds (file truncated?)");
      }
      entries_.emplace(it.key(), std::move(e));
    }

    data_.resize(data_size);
    in.read(data_.data(), static_cast<std::streamsize>(data_size));
    if (static_cast<std::size_t>(in.gcount()) != data_size)
      throw FormatError("checkpoint: short read on tensor data");
  }

  const TensorEntry* find(const std::string& canonical, std::string* found_name) const {
    for (const std::string& name : {canonical, "bert." + canonical}) {
      auto it = entries_.find(name);
      if (it != entries_.end()) {
        *found_name = name;
        return &it->second;
      }
    }
    return nullptr;
  }

  std::vector<float> read(const std::string& canonical,
                          const std::vector<std::size_t>& expected) const {
    std::string name;
    const TensorEntry* e = find(canonical, &name);
    if (!e) throw FormatError(canonical + " absent");
    if (e->shape != expected) {
      throw FormatError(canonical + ": expected shape " + shape_str(expected) + ", got " +
                        shape_str(e->shape));
    }
    const std::size_t width = dtype_size(e->dtype);
    if (width == 0) throw FormatError(canonical + ": unsupported dtype " + e->dtype);
    std::size_t count = 1;
    for (auto d : e->shape) count *= d;
    if (e->end - e->begin != count * width) {
      throw FormatError(canonical + ": byte length " + std::to_string(e->end - e->begin) +
                        " does not match shape " + shape_str(e->shape) + " of " + e->dtype);
    }
    const char* src = data_.data() + e->begin;
    std::vector<float> out(count);
    if (e->dtype == "F32") {
      std::memcpy(out.data(), src, count * 4);
    } else if (e->dtype == "F64") {
      for (std::size_t i = 0; i < count; ++i) {
        double d;
        std::memcpy(&d, src + 8 * i, 8);
        out[i] = static_cast<float>(d);
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        out[i] = e->dtype == "F16" ? half_to_float(h)
                                   : std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
      }
    }
    for (float f : out)
      if (!std::isfinite(f)) throw FormatError(canonical + ": non-finite values");
    return out;
  }

 private:
  std::map<std::string, TensorEntry> entries_;
  std::vector<char> data_;
};

Matrix read_matrix(const TensorSource& src, const std::string& name, std::size_t rows,
                   std::size_t cols) {
  return Matrix(rows, cols, src(name, {rows, cols}));
}

std::vector<float> read_vector(const TensorSource& src, const std::string& name, std::size_t n) {
  return src(name, {n});
}

// Stored as [out, in]; kept as [in, out].
Linear read_linear(const TensorSource& src, const std::string& base, std::size_t in,
                   std::size_t out) {
  Matrix w(out, in, src(base + ".weight", {out, in}));
  return Linear{w.transposed(), read_vector(src, base + ".bias", out)};
}

LayerNormParams read_norm(const TensorSource& src, const std::string& base, std::size_t n) {
  return LayerNormParams{read_vector(src, base + ".weight", n),
                         read_vector(src, base + ".bias", n)};
}

void check_vec(const std::vector<float>& v, std::size_t n, const std::string& what) {
  if (v.size() != n) {
    throw ShapeError(what + ": expected length " + std::to_string(n) + ", got " +
                     std::to_string(v.size()));
  }
}

void check_mat(const Matrix& m, std::size_t r, std::size_t c, const std::string& what) {
  if (m.rows() != r || m.cols() != c) {
    throw ShapeError(what + ": expected " + std::to_string(r) + "x" + std::to_string(c) +
                     ", got " + m.shape_string());
  }
}

void check_linear(const Linear& l, std::size_t in, std::size_t out, const std::string& what) {
  check_mat(l.weight, in, out, what + ".weight");
  check_vec(l.bias, out, what + ".bias");
}

void check_norm(const LayerNormParams& p, std::size_t n, const std::string& what) {
  check_vec(p.gamma, n, what + ".weight");
  check_vec(p.beta, n, what + ".bias");
}

std::uint64_t hash_vec(const std::vector<float>& v, std::uint64_t h) {
  return hash_floats(std::span<const float>(v), h);
}

std::uint64_t hash_body(const EncoderBody& b) {
  std::uint64_t h = kFnvOffset;
  h = hash_floats(b.position_embeddings.values(), h);
  h = hash_floats(b.token_type_embeddings.values(), h);
  h = hash_vec(b.embedding_norm.gamma, h);
  h = hash_vec(b.embedding_norm.beta, h);
  auto lin = [&](const Linear& l) {
    h = hash_floats(l.weight.values(), h);
    h = hash_vec(l.bias, h);
  };
  for (const auto& layer : b.layers) {
    lin(layer.query);
    lin(layer.key);
    lin(layer.value);
    lin(layer.attn_output);
    h = hash_vec(layer.attn_norm.gamma, h);
    h = hash_vec(layer.attn_norm.beta, h);
    lin(layer.ffn_in);
    lin(layer.ffn_out);
    h = hash_vec(layer.ffn_norm.gamma, h);
    h = hash_vec(layer.ffn_norm.beta, h);
  }
  lin(b.pooler);
  lin(b.classifier);
  return h;
}

std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
  return (a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2))) * kFnvPrime;
}

}  // namespace

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config: " + path.string() + ": " + e.what());
  }
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::size_t>();
  };
  try {
    get("vocab_size", c.vocab_size);
    get("hidden_size", c.hidden_size);
    get("num_hidden_layers", c.num_layers);
    get("num_attention_heads", c.num_heads);
    get("intermediate_size", c.intermediate_size);
    get("max_position_embeddings", c.max_positions);
    get("type_vocab_size", c.type_vocab_size);
    if (j.contains("layer_norm_eps")) c.layer_norm_eps = j.at("layer_norm_eps").get<float>();
    if (j.contains("hidden_act") && j.at("hidden_act").get<std::string>() != "gelu")
      throw FormatError("config: unsupported hidden_act " + j.at("hidden_act").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError("config: " + std::string(e.what()));
  }
  if (c.num_heads == 0 || c.hidden_size % c.num_heads != 0)
    throw FormatError("config: hidden_size not divisible by num_attention_heads");
  return c;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> canonical_tensors(
    const ModelConfig& c) {
  const std::size_t h = c.hidden_size, ff = c.intermediate_size;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> t;
  t.push_back({"embeddings.word_embeddings.weight", {c.vocab_size, h}});
  t.push_back({"embeddings.position_embeddings.weight", {c.max_positions, h}});
  t.push_back({"embeddings.token_type_embeddings.weight", {c.type_vocab_size, h}});
  t.push_back({"embeddings.LayerNorm.weight", {h}});
  t.push_back({"embeddings.LayerNorm.bias", {h}});
  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const std::string p = layer_prefix(i);
    for (const char* n : {"query", "key", "value"}) {
      t.push_back({p + "attention.self." + n + ".weight", {h, h}});
      t.push_back({p + "attention.self." + n + ".bias", {h}});
    }
    t.push_back({p + "attention.output.dense.weight", {h, h}});
    t.push_back({p + "attention.output.dense.bias", {h}});
    t.push_back({p + "attention.output.LayerNorm.weight", {h}});
    t.push_back({p + "attention.output.LayerNorm.bias", {h}});
    t.push_back({p + "intermediate.dense.weight", {ff, h}});
    t.push_back({p + "intermediate.dense.bias", {ff}});
    t.push_back({p + "output.dense.weight", {h, ff}});
    t.push_back({p + "output.dense.bias", {h}});
    t.push_back({p + "output.LayerNorm.weight", {h}});
    t.push_back({p + "output.LayerNorm.bias", {h}});
  }
  t.push_back({"pooler.dense.weight", {h, h}});
  t.push_back({"pooler.dense.bias", {h}});
  t.push_back({"classifier.weight", {1, h}});
  t.push_back({"classifier.bias", {1}});
  return t;
}

ModelWeights::ModelWeights(ModelConfig config, Matrix word_embeddings, EncoderBody body)
    : config_(config) {
  const std::size_t h = config.hidden_size, ff = config.intermediate_size;
  check_mat(word_embeddings, config.vocab_size, h, "embeddings.word_embeddings");
  check_mat(body.position_embeddings, config.max_positions, h, "embeddings.position_embeddings");
  check_mat(body.token_type_embeddings, config.type_vocab_size, h,
            "embeddings.token_type_embeddings");
  check_norm(body.embedding_norm, h, "embeddings.LayerNorm");
  if (body.layers.size() != config.num_layers) {
    throw ShapeError("expected " + std::to_string(config.num_layers) + " layers, got " +
                     std::to_string(body.layers.size()));
  }
  for (std::size_t i = 0; i < body.layers.size(); ++i) {
    const auto& l = body.layers[i];
    const std::string p = layer_prefix(i);
    check_linear(l.query, h, h, p + "attention.self.query");
    check_linear(l.key, h, h, p + "attention.self.key");
    check_linear(l.value, h, h, p + "attention.self.value");
    check_linear(l.attn_output, h, h, p + "attention.output.dense");
    check_norm(l.attn_norm, h, p + "attention.output.LayerNorm");
    check_linear(l.ffn_in, h, ff, p + "intermediate.dense");
    check_linear(l.ffn_out, ff, h, p + "output.dense");
    check_norm(l.ffn_norm, h, p + "output.LayerNorm");
  }
  check_linear(body.pooler, h, h, "pooler.dense");
  check_linear(body.classifier, h, 1, "classifier");

  word_hash_ = hash_floats(word_embeddings.values());
  body_hash_ = hash_body(body);
  checksum_ = combine(word_hash_, body_hash_);
  word_ = std::make_shared<const Matrix>(std::move(word_embeddings));
  body_ = std::make_shared<const EncoderBody>(std::move(body));
}

std::string ModelWeights::checksum_hex() const { return hex64(checksum_); }

ModelWeights ModelWeights::with_word_embeddings(Matrix word_embeddings) const {
  check_mat(word_embeddings, config_.vocab_size, config_.hidden_size,
            "embeddings.word_embeddings");
  ModelWeights copy = *this;
  copy.word_hash_ = hash_floats(word_embeddings.values());
  copy.checksum_ = combine(copy.word_hash_, body_hash_);
  copy.word_ = std::make_shared<const Matrix>(std::move(word_embeddings));
  return copy;
}

ModelWeights assemble_weights(const ModelConfig& config, const TensorSource& src) {
  const std::size_t h = config.hidden_size, ff = config.intermediate_size;
  Matrix word = read_matrix(src, "embeddings.word_embeddings.weight", config.vocab_size, h);
  EncoderBody body;
  body.position_embeddings =
      read_matrix(src, "embeddings.position_embeddings.weight", config.max_positions, h);
  body.token_type_embeddings =
      read_matrix(src, "embeddings.token_type_embeddings.weight", config.type_vocab_size, h);
  body.embedding_norm = read_norm(src, "embeddings.LayerNorm", h);
  body.layers.reserve(config.num_layers);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    const std::string p = layer_prefix(i);
    LayerWeights l;
    l.query = read_linear(src, p + "attention.self.query", h, h);
    l.key = read_linear(src, p + "attention.self.key", h, h);
    l.value = read_linear(src, p + "attention.self.value", h, h);
    l.attn_output = read_linear(src, p + "attention.output.dense", h, h);
    l.attn_norm = read_norm(src, p + "attention.output.LayerNorm", h);
    l.ffn_in = read_linear(src, p + "intermediate.dense", h, ff);
    l.ffn_out = read_linear(src, p + "output.dense", ff, h);
    l.ffn_norm = read_norm(src, p + "output.LayerNorm", h);
    body.layers.push_back(std::move(l));
  }
  body.pooler = read_linear(src, "pooler.dense", h, h);
  body.classifier = read_linear(src, "classifier", h, 1);
  return ModelWeights(config, std::move(word), std::move(body));
}

ModelWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  const Container c(path);
  return assemble_weights(config, [&](const std::string& name,
                                      const std::vector<std::size_t>& shape) {
    return c.read(name, shape);
  });
}

ModelWeights load_model_dir(const std::filesystem::path& dir) {
  const ModelConfig config = load_config(dir / "config.json");
  return load_checkpoint(dir / "model.safetensors", config);
}

void save_checkpoint(const ModelWeights& weights, const std::filesystem::path& path) {
  const auto& b = weights.body();
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
  auto add_linear = [&](const std::string& base, const Linear& l) {
    tensors.emplace_back(base + ".weight", l.weight.transposed().values());
    tensors.emplace_back(base + ".bias", l.bias);
  };
  auto add_norm = [&](const std::string& base, const LayerNormParams& p) {
    tensors.emplace_back(base + ".weight", p.gamma);
    tensors.emplace_back(base + ".bias", p.beta);
  };
  tensors.emplace_back("embeddings.word_embeddings.weight", weights.word_embeddings().values());
  tensors.emplace_back("embeddings.position_embeddings.weight", b.position_embeddings.values());
  tensors.emplace_back("embeddings.token_type_embeddings.weight",
                       b.token_type_embeddings.values());
  add_norm("embeddings.LayerNorm", b.embedding_norm);
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& l = b.layers[i];
    const std::string p = layer_prefix(i);
    add_linear(p + "attention.self.query", l.query);
    add_linear(p + "attention.self.key", l.key);
    add_linear(p + "attention.self.value", l.value);
    add_linear(p + "attention.output.dense", l.attn_output);
    add_norm(p + "attention.output.LayerNorm", l.attn_norm);
    add_linear(p + "intermediate.dense", l.ffn_in);
    add_linear(p + "output.dense", l.ffn_out);
    add_norm(p + "output.LayerNorm", l.ffn_norm);
  }
  add_linear("pooler.dense", b.pooler);
  add_linear("classifier", b.classifier);

  const auto shapes = canonical_tensors(weights.config());
  json header = json::object();
  header["__metadata__"] = {{"format", "pt"}};
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::size_t bytes = tensors[i].second.size() * sizeof(float);
    header[tensors[i].first] = {{"dtype", "F32"},
                                {"shape", shapes[i].second},
                                {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  std::uint64_t len = text.size();
  unsigned char len_bytes[8];
  for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<unsigned char>(len >> (8 * i));
  out.write(reinterpret_cast<const char*>(len_bytes), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, values] : tensors) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
  }
  if (!out) throw FormatError("checkpoint: short write to " + path.string());
}

double IdfTable::max_observed() const {
  double best = 0.0;
  for (std::size_t i = 0; i < idf.size(); ++i)
    if (observed[i]) best = std::max(best, idf[i]);
  return best;
}

namespace {

void fill_missing(IdfTable& t) {
  const double fill = t.max_observed();
  for (std::size_t i = 0; i < t.idf.size(); ++i)
    if (!t.observed[i]) t.idf[i] = fill;
}

}  // namespace

IdfTable load_idf_table(const std::filesystem::path& path, std::size_t vocab_size) {
  IdfTable t;
  t.idf.assign(vocab_size, 0.0);
  t.observed.assign(vocab_size, 0);
  const auto lines = read_lines(path);
  std::size_t rows = 0;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto line = trim(lines[n]);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(n + 1);
    if (line.front() == '#') {
      const auto body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(body.substr(0, eq));
      const std::string value(trim(body.substr(eq + 1)));
      if (key == "corpus") t.corpus = value;
      else if (key == "formula") t.formula = value;
      else if (key == "docs") t.doc_count = std::stoull(value);
      continue;
    }
    const auto cols = split(line, '\t');
    if (cols.size() < 2) throw FormatError(where + ": expected token_id<TAB>idf");
    long long id = 0;
    double value = 0.0;
    try {
      std::size_t used = 0;
      const std::string id_text(trim(cols[0]));
      id = std::stoll(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument("id");
      const std::string v_text(trim(cols[1]));
      value = std::stod(v_text, &used);
      if (used != v_text.size()) throw std::invalid_argument("idf");
    } catch (const std::exception&) {
      throw FormatError(where + ": malformed row '" + std::string(line) + "'");
    }
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
      throw FormatError(where + ": token id " + std::to_string(id) + " out of range");
    if (!std::isfinite(value) || value < 0.0)
      throw FormatError(where + ": idf must be finite and non-negative");
    const auto i = static_cast<std::size_t>(id);
    if (t.observed[i]) throw FormatError(where + ": duplicate token id " + std::to_string(id));
    t.idf[i] = value;
    t.observed[i] = 1;
    ++rows;
  }
  if (rows == 0) throw FormatError("idf: " + path.string() + " has no rows");
  fill_missing(t);
  return t;
}

void save_idf_table(const IdfTable& table, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "# corpus=" << table.corpus << "\n# docs=" << table.doc_count
      << "\n# formula=" << table.formula << "\n";
  for (std::size_t i = 0; i < table.idf.size(); ++i)
    if (table.observed[i]) out << i << '\t' << table.idf[i] << '\n';
  write_text_file(path, out.str());
}

IdfTable compute_idf(const std::vector<std::vector<TokenId>>& docs, std::size_t vocab_size,
                     std::string corpus_name) {
  if (docs.empty()) throw ValidationError("compute_idf: empty corpus");
  std::vector<std::size_t> df(vocab_size, 0);
  std::vector<std::size_t> last_seen(vocab_size, SIZE_MAX);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (TokenId id : docs[d]) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
        throw ValidationError("compute_idf: token id out of range");
      const auto i = static_cast<std::size_t>(id);
      if (last_seen[i] != d) {
        last_seen[i] = d;
        ++df[i];
      }
    }
  }
  IdfTable t;
  t.corpus = std::move(corpus_name);
  t.doc_count = docs.size();
  t.idf.assign(vocab_size, 0.0);
  t.observed.assign(vocab_size, 0);
  const double n = static_cast<double>(docs.size());
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (df[i] == 0) continue;
    t.observed[i] = 1;
    t.idf[i] = std::max(0.0, std::log(n / static_cast<double>(df[i] + 1)));
  }
  fill_missing(t);
  return t;
}

std::vector<ForwardFixture> load_forward_fixtures(const std::filesystem::path& path) {
  std::vector<ForwardFixture> out;
  const auto lines = read_data_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    try {
      const json j = json::parse(lines[n]);
      ForwardFixture f;
      f.query = j.value("query", "");
      f.doc = j.value("doc", "");
      f.token_ids = j.at("input_ids").get<std::vector<TokenId>>();
      f.token_type_ids = j.at("token_type_ids").get<std::vector<std::uint8_t>>();
      f.logit = j.at("logit").get<double>();
      if (j.contains("attn_checksums"))
        f.attention_checksums = j.at("attn_checksums").get<std::vector<double>>();
      if (f.token_ids.size() != f.token_type_ids.size())
        throw FormatError("input_ids and token_type_ids differ in length");
      out.push_back(std::move(f));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": record " + std::to_string(n + 1) + ": " + e.what());
    }
  }
  return out;
}

std::vector<TokenizerFixture> load_tokenizer_fixtures(const std::filesystem::path& path) {
  std::vector<TokenizerFixture> out;
  const auto lines = read_data_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    try {
      const json j = json::parse(lines[n]);
      TokenizerFixture f;
      f.text = j.at("text").get<std::string>();
      if (j.contains("pair") && !j.at("pair").is_null()) f.pair = j.at("pair").get<std::string>();
      f.ids = j.at("ids").get<std::vector<TokenId>>();
      out.push_back(std::move(f));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": record " + std::to_string(n + 1) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace circuitprobe
