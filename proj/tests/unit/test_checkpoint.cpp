#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/encoder.hpp"
#include "circuitprobe/error.hpp"
#include "paths.hpp"
#include "synthetic.hpp"

using namespace circuitprobe;
namespace fs = std::filesystem;

namespace {

const ModelWeights& tiny() {
  static const ModelWeights w =
      circuitprobe::testing::make_synthetic_model(circuitprobe::testing::tiny_config());
  return w;
}

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("cp_ckpt_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("container round-trip preserves every tensor") {
  const auto path = temp("tiny.safetensors");
  save_checkpoint(tiny(), path);
  const auto back = load_checkpoint(path, tiny().config());
  CHECK(back.checksum() == tiny().checksum());
  CHECK(back.word_embeddings() == tiny().word_embeddings());
  CHECK(back.layer(2).ffn_out.weight == tiny().layer(2).ffn_out.weight);
  const Vocab v = load_vocab(circuitprobe::testing::fixture("vocab.txt"));
  const auto in = encode_pair("capital of quebec", "quebec city", v);
  CHECK(forward_logit(back, in) == forward_logit(tiny(), in));

  save_checkpoint(back, temp("tiny2.safetensors"));
  CHECK(slurp(path) == slurp(temp("tiny2.safetensors")));
}

TEST_CASE("container errors") {
  const auto path = temp("tiny.safetensors");
  save_checkpoint(tiny(), path);
  const std::string bytes = slurp(path);

  dump(temp("trunc.safetensors"), bytes.substr(0, bytes.size() - 100));
  CHECK_THROWS_AS(load_checkpoint(temp("trunc.safetensors"), tiny().config()), FormatError);
  dump(temp("short.safetensors"), bytes.substr(0, 4));
  CHECK_THROWS_AS(load_checkpoint(temp("short.safetensors"), tiny().config()), FormatError);
  CHECK_THROWS_AS(load_checkpoint(temp("missing.safetensors"), tiny().config()), FormatError);

  ModelConfig wider = tiny().config();
  wider.hidden_size = 64;
  CHECK_THROWS_AS(load_checkpoint(path, wider), FormatError);
  ModelConfig deeper = tiny().config();
  deeper.num_layers = 4;
  CHECK_THROWS_AS(load_checkpoint(path, deeper), FormatError);
}

TEST_CASE("config and model directory") {
  const auto dir = temp("model");
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"vocab_size": 30522, "hidden_size": 32,
    "num_hidden_layers": 3, "num_attention_heads": 4, "intermediate_size": 64,
    "max_position_embeddings": 128, "type_vocab_size": 2, "layer_norm_eps": 1e-12})";
  const auto cfg = load_config(dir / "config.json");
  CHECK(cfg == tiny().config());
  save_checkpoint(tiny(), dir / "model.safetensors");
  CHECK(load_model_dir(dir).checksum() == tiny().checksum());
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), FormatError);
}

TEST_CASE("canonical tensor list and edits") {
  const auto names = canonical_tensors(tiny().config());
  CHECK(names.front().first == "embeddings.word_embeddings.weight");
  CHECK(names.size() == 5 + 16 * 3 + 4);
  Matrix e = tiny().word_embeddings();
  e(7, 3) += 1.0f;
  const auto edited = tiny().with_word_embeddings(e);
  CHECK(edited.checksum() != tiny().checksum());
  CHECK(&edited.body() == &tiny().body());
  CHECK_THROWS_AS(tiny().with_word_embeddings(Matrix(3, 3)), ShapeError);
}

TEST_CASE("IDF tables") {
  const std::vector<std::vector<TokenId>> docs{{1, 2, 3}, {1, 2}, {1, 4}, {1}};
  const auto t = compute_idf(docs, 8, "toy");
  CHECK(t.doc_count == 4);
  CHECK(t[1] == 0.0);  // ln(4/5) clamped
  CHECK(t[3] == doctest::Approx(std::log(4.0 / 2.0)));
  CHECK(t.observed[3] == 1);
  CHECK(t.observed[5] == 0);
  CHECK(t[5] == t.max_observed());
  CHECK(t[2] < t[3]);

  const auto path = temp("idf.tsv");
  save_idf_table(t, path);
  const auto back = load_idf_table(path, 8);
  CHECK(back.corpus == "toy");
  CHECK(back.doc_count == 4);
  for (TokenId i = 0; i < 8; ++i) CHECK(back[i] == doctest::Approx(t[i]).epsilon(1e-12));

  std::ofstream(temp("idf_bad.tsv")) << "1\tx\n";
  CHECK_THROWS_AS(load_idf_table(temp("idf_bad.tsv"), 8), FormatError);
  std::ofstream(temp("idf_empty.tsv")) << "# corpus=x\n";
  CHECK_THROWS_AS(load_idf_table(temp("idf_empty.tsv"), 8), FormatError);
  std::ofstream(temp("idf_sparse.tsv")) << "2\t1.5\n3\t4.0\n";
  const auto sparse = load_idf_table(temp("idf_sparse.tsv"), 8);
  CHECK(sparse[0] == 4.0);
  CHECK(sparse[2] == 1.5);
}

TEST_CASE("committed fixtures load") {
  const auto fx = load_forward_fixtures(circuitprobe::testing::fixture("forward.jsonl"));
  CHECK(fx.size() == 1000);
  CHECK(fx[0].token_ids.size() == fx[0].token_type_ids.size());
  CHECK(std::isfinite(fx[0].logit));
  const auto tk = load_tokenizer_fixtures(circuitprobe::testing::fixture("tokenizer.jsonl"));
  CHECK(!tk.empty());
}
