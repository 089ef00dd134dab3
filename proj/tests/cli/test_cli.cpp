#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/diagnostics.hpp"
#include "circuitprobe/text_io.hpp"
#include "paths.hpp"
#include "synthetic.hpp"

using namespace circuitprobe;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "circuitprobe_cli_test";
    fs::remove_all(d);
    fs::create_directories(d / "model");
    const auto config = testing::tiny_config();
    save_checkpoint(testing::make_synthetic_model(config), d / "model" / "model.safetensors");
    std::ofstream(d / "model" / "config.json")
        << "{\"vocab_size\": " << config.vocab_size << ", \"hidden_size\": " << config.hidden_size
        << ", \"num_hidden_layers\": " << config.num_layers << ", \"num_attention_heads\": " << config.num_heads
        << ", \"intermediate_size\": " << config.intermediate_size
        << ", \"max_position_embeddings\": " << config.max_positions << ", \"type_vocab_size\": 2}\n";
    fs::copy_file(testing::fixture("vocab.txt"), d / "model" / "vocab.txt");
    // First 40 toy pairs keep the forward passes cheap.
    const auto lines = read_lines(testing::data_file("toy_corpus.tsv"));
    std::ofstream base(d / "base.tsv");
    for (std::size_t i = 0; i < std::min<std::size_t>(41, lines.size()); ++i) base << lines[i] << '\n';
    return d;
  }();
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const auto log = work_dir() / "last_output.txt";
  const std::string cmd = std::string("\"") + CIRCUITPROBE_CLI + "\" --model \"" +
                          (work_dir() / "model").string() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string p(const char* name) { return "\"" + (work_dir() / name).string() + "\""; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen-data tfc1 writes one pair per usable base pair with a header") {
  const auto r = run("gen-data --axiom tfc1 --base " + p("base.tsv") + " --out " + p("tfc1.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto pairs = load_diagnostics(work_dir() / "tfc1.jsonl");
  CHECK(pairs.size() == 40);
  const auto lines = read_lines(work_dir() / "tfc1.jsonl");
  CHECK(lines[0].starts_with("# command=--model"));
  CHECK(slurp(work_dir() / "tfc1.jsonl").find("# weights_checksum=") != std::string::npos);
}

TEST_CASE("gen-data validation failures exit 2") {
  CHECK(run("gen-data --axiom stmc1 --no-fallback --base " + p("base.tsv") + " --out " + p("stmc1.jsonl")).code == 2);
  CHECK(run("gen-data --axiom nope --base " + p("base.tsv") + " --out " + p("x.jsonl")).code == 2);
  CHECK(run("gen-data --axiom tfc1 --base " + p("missing.tsv") + " --out " + p("x.jsonl")).code == 2);
}

TEST_CASE("gen-data lnc1 is deterministic under a seed") {
  REQUIRE(run("--seed 11 gen-data --axiom lnc1 --base " + p("base.tsv") + " --out " + p("lnc1_a.jsonl")).code == 0);
  REQUIRE(run("--seed 11 gen-data --axiom lnc1 --base " + p("base.tsv") + " --out " + p("lnc1_b.jsonl")).code == 0);
  REQUIRE(run("--seed 12 gen-data --axiom lnc1 --base " + p("base.tsv") + " --out " + p("lnc1_c.jsonl")).code == 0);
  const auto a = load_diagnostics(work_dir() / "lnc1_a.jsonl");
  const auto b = load_diagnostics(work_dir() / "lnc1_b.jsonl");
  const auto c = load_diagnostics(work_dir() / "lnc1_c.jsonl");
  REQUIRE(a.size() == b.size());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && to_json_line(a[i]) == to_json_line(b[i]);
    differs = differs || i >= c.size() || to_json_line(a[i]) != to_json_line(c[i]);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("patch sweep over one pair gives one row per head") {
  REQUIRE(run("gen-data --axiom tfc1 --base " + p("base.tsv") + " --out " + p("tfc1.jsonl")).code == 0);
  const auto r = run("--limit 1 patch --mode path --dataset " + p("tfc1.jsonl") + " --receiver logits --out " +
                     p("patch.csv") + " --heatmap " + p("patch.svg"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto rows = read_data_lines(work_dir() / "patch.csv");
  const auto config = testing::tiny_config();
  CHECK(rows.size() == 1 + config.num_layers * config.num_heads);
  CHECK(slurp(work_dir() / "patch.svg").starts_with("<svg"));

  const auto act = run("--limit 2 patch --mode activation --dataset " + p("tfc1.jsonl") + " --out " + p("act.csv"));
  CHECK_MESSAGE(act.code == 0, act.out);
}

TEST_CASE("malformed receivers and unknown subcommands exit 2") {
  REQUIRE(run("gen-data --axiom tfc1 --base " + p("base.tsv") + " --out " + p("tfc1.jsonl")).code == 0);
  CHECK(run("patch --dataset " + p("tfc1.jsonl") + " --receiver head:banana --out " + p("bad.csv")).code == 2);
  CHECK(run("patch --dataset " + p("tfc1.jsonl") + " --receiver head:9.0:value --out " + p("bad.csv")).code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("analyze").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("analyses write their tables") {
  REQUIRE(run("gen-data --axiom tfc1 --base " + p("base.tsv") + " --out " + p("tfc1.jsonl")).code == 0);
  REQUIRE(run("gen-data --axiom lnc1 --base " + p("base.tsv") + " --out " + p("lnc1.jsonl")).code == 0);
  REQUIRE(run("gen-data --axiom tfc2 --base " + p("base.tsv") + " --out " + p("tfc2.jsonl")).code == 0);
  const auto config = testing::tiny_config();

  auto r = run("--limit 8 analyze matching --group 0.1,1.2 --ablate --dataset " + p("tfc1.jsonl") + " --out " +
               p("matching.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(read_data_lines(work_dir() / "matching.csv").size() == 1 + config.num_layers * config.num_heads);
  CHECK(slurp(work_dir() / "matching.csv").find("# ablation_drop=") != std::string::npos);

  r = run("--limit 5 analyze saturation --heads 0.0,2.3 --dataset " + p("tfc2.jsonl") + " --out " + p("sat.csv") +
          " --svg " + p("sat.svg"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(read_data_lines(work_dir() / "sat.csv").size() == 1 + 2 * 6);

  r = run("--limit 5 analyze length --heads 1.1 --dataset " + p("lnc1.jsonl") + " --out " + p("len.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(slurp(work_dir() / "len.csv").find("# non_increasing_fraction=") != std::string::npos);

  r = run("--limit 5 analyze idf-attn --dataset " + p("tfc1.jsonl") + " --out " + p("idf.csv"));
  CHECK(r.code == 2);  // no idf.tsv in the model directory
}

TEST_CASE("embed extract-u0 reports sigma0 and the IDF correlation") {
  const auto r = run("embed extract-u0");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("sigma0\t") != std::string::npos);
  CHECK(r.out.find("pearson_vs_idf\tnan") != std::string::npos);

  const auto e = run("embed edit --token data --scale 0 --out " + p("edited.safetensors"));
  REQUIRE_MESSAGE(e.code == 0, e.out);
  CHECK(fs::file_size(work_dir() / "edited.safetensors") == fs::file_size(work_dir() / "model" / "model.safetensors"));
  CHECK(run("embed edit --token qwzxv --scale 0 --out " + p("edited.safetensors")).code == 2);
}

TEST_CASE("embed causal and adversarial") {
  auto r = run("--limit 3 embed causal --queries " + p("base.tsv") + " --scales -10,0,1,2 --head 2.1 --out " +
               p("causal.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(read_data_lines(work_dir() / "causal.csv").size() == 1 + 3 * 4);

  REQUIRE(run("gen-data --axiom tfc1 --base " + p("base.tsv") + " --out " + p("tfc1.jsonl")).code == 0);
  r = run("--limit 10 --seed 3 embed adversarial --dataset " + p("tfc1.jsonl") + " --unsafe \"" +
          testing::data_file("sample_words.txt").string() + "\" --min-gain -1000 --scales 1,-10 --out " +
          p("adv.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(read_data_lines(work_dir() / "adv.csv").size() == 3);
}

TEST_CASE("surrogate features, fit and eval") {
  auto r = run("surrogate features --mode aggregated --heads 0.1,1.2,2.3 --base " + p("base.tsv") + " --out " + p("features.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(run("surrogate fit --features " + p("features.jsonl") + " --out " + p("models")).code == 2);
  r = run("surrogate fit --min-rows 4 --ridge 1e-3 --train-fraction 0.5 --features " + p("features.jsonl") +
          " --out " + p("models"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("row floor lowered") != std::string::npos);
  r = run("surrogate eval --mode aggregated --heads 0.1,1.2,2.3 --ridge 1e-3 --train-fraction 0.5 --features " +
          p("features.jsonl") + " --models " + p("models") + " --base " + p("base.tsv") + " --out " + p("table.csv"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto table = read_data_lines(work_dir() / "table.csv");
  CHECK(table[0] == "system,pearson_median,pearson_mean,pearson_sd,spearman_median,spearman_mean,spearman_sd,"
                    "ndcg10_median,ndcg10_mean,ndcg10_sd,groups,skipped");
  CHECK(table.size() == 1 + 3 + 16);
  CHECK(table[3] == "cross_encoder,1,1,0,1,1,0,nan,nan,nan,33,0");
}

TEST_CASE("config file values apply and flags override them") {
  {
    std::ofstream cfg(work_dir() / "run.ini");
    cfg << "seed=11\n[gen-data]\naxiom=lnc1\nbase=" << (work_dir() / "base.tsv").string() << "\n";
  }
  REQUIRE(run("--seed 11 gen-data --axiom lnc1 --base " + p("base.tsv") + " --out " + p("lnc1_a.jsonl")).code == 0);
  auto r = run("--config " + p("run.ini") + " gen-data --out " + p("lnc1_cfg.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const auto a = load_diagnostics(work_dir() / "lnc1_a.jsonl");
  const auto c = load_diagnostics(work_dir() / "lnc1_cfg.jsonl");
  REQUIRE(a.size() == c.size());
  CHECK(to_json_line(a.front()) == to_json_line(c.front()));

  r = run("--config " + p("run.ini") + " gen-data --axiom tfc1 --out " + p("tfc1_cfg.jsonl"));
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(load_diagnostics(work_dir() / "tfc1_cfg.jsonl").front().axiom == Axiom::tfc1);
}
