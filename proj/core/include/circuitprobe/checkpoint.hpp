#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "circuitprobe/tensor_ops.hpp"
#include "circuitprobe/tokenizer.hpp"

namespace circuitprobe {

/// Encoder geometry. Defaults are the MiniLM-L12 cross-encoder's.
struct ModelConfig {
  std::size_t vocab_size = 30522;
  std::size_t hidden_size = 384;
  std::size_t num_layers = 12;
  std::size_t num_heads = 12;
  std::size_t intermediate_size = 1536;
  std::size_t max_positions = 512;
  std::size_t type_vocab_size = 2;
  float layer_norm_eps = kLayerNormEps;

  std::size_t head_dim() const noexcept { return hidden_size / num_heads; }
  std::size_t num_head_slots() const noexcept { return num_layers * num_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Reads a HuggingFace-style config.json (hidden_size, num_hidden_layers, ...).
ModelConfig load_config(const std::filesystem::path& path);

/// Dense layer y = x·W + b with W stored input-major ([in, out]).
struct Linear {
  Matrix weight;  // [in, out]
  std::vector<float> bias;
};

struct LayerNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
};

struct LayerWeights {
  Linear query, key, value;
  Linear attn_output;
  LayerNormParams attn_norm;
  Linear ffn_in;   // hidden -> intermediate
  Linear ffn_out;  // intermediate -> hidden
  LayerNormParams ffn_norm;
};

/// Everything except the word-embedding table.
struct EncoderBody {
  Matrix position_embeddings;    // [max_positions, hidden]
  Matrix token_type_embeddings;  // [type_vocab, hidden]
  LayerNormParams embedding_norm;
  std::vector<LayerWeights> layers;
  Linear pooler;      // hidden -> hidden
  Linear classifier;  // hidden -> 1
};

/// Immutable model parameters. Copies share storage; edits produce a new
/// object through with_word_embeddings() and never touch the original.
class ModelWeights {
 public:
  ModelWeights(ModelConfig config, Matrix word_embeddings, EncoderBody body);

  const ModelConfig& config() const noexcept { return config_; }
  const Matrix& word_embeddings() const noexcept { return *word_; }
  const EncoderBody& body() const noexcept { return *body_; }
  const LayerWeights& layer(std::size_t i) const { return body_->layers.at(i); }

  /// FNV-1a style checksum over every tensor, in canonical order.
  std::uint64_t checksum() const noexcept { return checksum_; }
  std::string checksum_hex() const;

  ModelWeights with_word_embeddings(Matrix word_embeddings) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const Matrix> word_;
  std::shared_ptr<const EncoderBody> body_;
  std::uint64_t word_hash_ = 0;
  std::uint64_t body_hash_ = 0;
  std::uint64_t checksum_ = 0;
};

/// Loads a single-file tensor container: 8-byte little-endian header length,
/// JSON header {name: {dtype, shape, data_offsets}}, raw little-endian bytes.
/// Tensor names follow the canonical scheme (optionally prefixed "bert.").
/// Throws FormatError naming the offending tensor; never returns partial data.
ModelWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

/// Supplies one tensor by canonical name in the container layout (dense
/// weights [out, in]); must return exactly the product of `shape` values.
using TensorSource = std::function<std::vector<float>(const std::string& name,
                                                      const std::vector<std::size_t>& shape)>;

/// Builds weights from a tensor source, transposing dense layers to [in, out].
ModelWeights assemble_weights(const ModelConfig& config, const TensorSource& source);

/// Loads `dir/config.json` and `dir/model.safetensors`.
ModelWeights load_model_dir(const std::filesystem::path& dir);

/// Writes weights in the same container format (F32, canonical names).
void save_checkpoint(const ModelWeights& weights, const std::filesystem::path& path);

/// Canonical tensor names with their expected shapes, in checksum order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> canonical_tensors(
    const ModelConfig& config);

/// Per-token inverse document frequencies.
struct IdfTable {
  std::vector<double> idf;             // indexed by token id
  std::vector<std::uint8_t> observed;  // 1 if the id occurred in the corpus
  std::string corpus;
  std::size_t doc_count = 0;
  std::string formula = "ln(N/(df+1)) clamped at 0";

  double operator[](TokenId id) const { return idf.at(static_cast<std::size_t>(id)); }
  double max_observed() const;
};

/// TSV of `token_id<TAB>idf`; `#` lines carry `key=value` metadata
/// (corpus, docs, formula). Ids missing from the file get the maximum
/// observed IDF. Throws FormatError on malformed rows or an empty table.
IdfTable load_idf_table(const std::filesystem::path& path, std::size_t vocab_size);
void save_idf_table(const IdfTable& table, const std::filesystem::path& path);

/// IDF over tokenized documents: ln(N / (df + 1)), clamped at 0.
IdfTable compute_idf(const std::vector<std::vector<TokenId>>& docs, std::size_t vocab_size,
                     std::string corpus_name);

/// One golden forward-pass record produced by the reference implementation.
struct ForwardFixture {
  std::string query;
  std::string doc;
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> token_type_ids;
  double logit = 0.0;
  /// Per (layer, head): Σ_i Σ_j attn[i][j]·j, layer-major. May be empty.
  std::vector<double> attention_checksums;
};

std::vector<ForwardFixture> load_forward_fixtures(const std::filesystem::path& path);

struct TokenizerFixture {
  std::string text;
  std::optional<std::string> pair;  // second segment for pair fixtures
  std::vector<TokenId> ids;         // wordpiece ids, or full pair encoding
};

std::vector<TokenizerFixture> load_tokenizer_fixtures(const std::filesystem::path& path);

}  // namespace circuitprobe
