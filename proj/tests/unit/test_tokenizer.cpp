#include <doctest.h>

#include <random>
#include <sstream>

#include "circuitprobe/checkpoint.hpp"
#include "circuitprobe/error.hpp"
#include "circuitprobe/tokenizer.hpp"
#include "paths.hpp"

using namespace circuitprobe;
using circuitprobe::testing::fixture;

namespace {

const Vocab& vocab() {
  static const Vocab v = load_vocab(fixture("vocab.txt"));
  return v;
}

std::string ids_str(const std::vector<TokenId>& ids) {
  std::ostringstream s;
  for (auto id : ids) s << id << ' ';
  return s.str();
}

}  // namespace

TEST_CASE("toy vocab: line number is the id") {
  const auto v = Vocab::from_tokens({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "hello"});
  CHECK(v.cls_id() == 0);
  CHECK(v.find("hello") == 4);
  CHECK(v.size() == 5);
}

TEST_CASE("vocab errors") {
  CHECK_THROWS_AS(Vocab::from_tokens({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "a", "a"}), FormatError);
  CHECK_THROWS_AS(Vocab::from_tokens({"[CLS]", "[SEP]", "[UNK]"}), FormatError);
}

TEST_CASE("published vocab size") { CHECK(vocab().size() == 30522); }

TEST_CASE("wordpiece basics") {
  CHECK(wordpiece("", vocab()).empty());
  const auto ids = wordpiece("quebec is a small city", vocab());
  CHECK(detokenize(ids, vocab()) == "quebec is a small city");
  const auto unk = wordpiece("\xE2\x98\x83 \xE2\x98\x83\xE2\x98\x83", vocab());
  for (auto id : unk) CHECK(id == vocab().unk_id());
  CHECK(wordpiece(std::string(101, 'a'), vocab()) == std::vector<TokenId>{vocab().unk_id()});
}

TEST_CASE("encode_pair format") {
  const auto e = encode_pair("a", "b", vocab());
  REQUIRE(e.size() == 5);
  CHECK(e.token_ids[0] == vocab().cls_id());
  CHECK(e.token_ids[2] == vocab().sep_id());
  CHECK(e.token_ids[4] == vocab().sep_id());
  CHECK(e.token_type_ids == std::vector<std::uint8_t>{0, 0, 0, 1, 1});
  CHECK(e.query_span == Span{1, 2});
  CHECK(e.doc_span == Span{3, 4});
}

TEST_CASE("document truncation keeps the query") {
  std::string doc;
  for (int i = 0; i < 600; ++i) doc += "word ";
  const auto e = encode_pair("short query", doc, vocab());
  CHECK(e.size() == kMaxSequenceLength);
  CHECK(e.token_ids.back() == vocab().sep_id());
  CHECK(e.query_span.size() == 2);
  std::string q;
  for (int i = 0; i < 510; ++i) q += "x ";
  CHECK_THROWS_AS(encode_pair(q, "doc", vocab()), ValidationError);
}

TEST_CASE("reference tokenizer parity: 1000 fixtures") {
  const auto fixtures = load_tokenizer_fixtures(fixture("tokenizer.jsonl"));
  REQUIRE(fixtures.size() == 1000);
  std::size_t matched = 0;
  for (const auto& f : fixtures) {
    const auto got = f.pair ? encode_pair(f.text, *f.pair, vocab()).token_ids
                            : wordpiece(f.text, vocab());
    if (got == f.ids) {
      ++matched;
    } else {
      MESSAGE("mismatch on '" << f.text << "'\n  want " << ids_str(f.ids) << "\n  got  "
                              << ids_str(got));
    }
  }
  CHECK(matched == fixtures.size());
}

TEST_CASE("property: in-vocab words round-trip and pairs carry two [SEP]") {
  std::mt19937_64 rng(7);
  std::vector<std::string> words;
  for (TokenId id = 0; id < static_cast<TokenId>(vocab().size()); ++id) {
    const auto& t = vocab().token(id);
    bool ascii_word = !t.empty() && t.size() < 12;
    for (char c : t) ascii_word = ascii_word && c >= 'a' && c <= 'z';
    if (ascii_word) words.push_back(t);
  }
  REQUIRE(words.size() > 1000);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TokenId> ids;
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) {
      const auto& w = words[rng() % words.size()];
      text += (i ? " " : "") + w;
      ids.push_back(*vocab().find(w));
    }
    CHECK(wordpiece(detokenize(ids, vocab()), vocab()) == ids);
    const auto e = encode_pair(text, text, vocab());
    CHECK(e.token_ids.front() == vocab().cls_id());
    CHECK(std::count(e.token_ids.begin(), e.token_ids.end(), vocab().sep_id()) == 2);
  }
}
