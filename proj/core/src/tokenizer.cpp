#include "circuitprobe/tokenizer.hpp"

#include <algorithm>
#include <fstream>

#include "circuitprobe/error.hpp"
#include "circuitprobe/unicode.hpp"

namespace circuitprobe {

namespace {

constexpr std::string_view kCls = "[CLS]";
constexpr std::string_view kSep = "[SEP]";
constexpr std::string_view kPad = "[PAD]";
constexpr std::string_view kUnk = "[UNK]";
constexpr std::string_view kMask = "[MASK]";

}  // namespace

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto [it, inserted] = v.index_.emplace(tokens[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw FormatError("vocab: duplicate token '" + tokens[i] + "' at lines " +
                        std::to_string(it->second) + " and " + std::to_string(i));
    }
  }
  v.tokens_ = std::move(tokens);
  auto require = [&](std::string_view name) {
    auto id = v.find(name);
    if (!id) throw FormatError("vocab: missing special token " + std::string(name));
    return *id;
  };
  v.cls_ = require(kCls);
  v.sep_ = require(kSep);
  v.pad_ = require(kPad);
  v.unk_ = require(kUnk);
  for (std::string_view s : {kCls, kSep, kPad, kUnk, kMask})
    if (v.find(s)) v.specials_.emplace_back(s);
  return v;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ValidationError("vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::is_special(TokenId id) const noexcept {
  return id >= 0 && static_cast<std::size_t>(id) < tokens_.size() &&
         is_special_token(tokens_[static_cast<std::size_t>(id)]);
}

bool Vocab::is_special_token(std::string_view token) const noexcept {
  return std::find(specials_.begin(), specials_.end(), token) != specials_.end();
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("vocab: cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab::from_tokens(std::move(tokens));
}

namespace {

// Normalizes one raw segment (no special tokens inside) and splits it into
// words: whitespace separates, punctuation stands alone.
void pretokenize_segment(std::string_view segment, std::vector<std::string>& words) {
  std::u32string norm;
  norm.reserve(segment.size());
  for (char32_t cp : unicode::decode_utf8(segment)) {
    if (cp == 0 || cp == 0xFFFD || unicode::is_control(cp)) continue;
    if (unicode::is_whitespace(cp)) {
      norm.push_back(U' ');
    } else if (unicode::is_chinese_char(cp)) {
      norm.push_back(U' ');
      norm.push_back(cp);
      norm.push_back(U' ');
    } else {
      unicode::append_normalized(norm, cp);
    }
  }
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) {
      words.push_back(unicode::encode_utf8(current));
      current.clear();
    }
  };
  for (char32_t cp : norm) {
    if (cp == U' ' || unicode::is_whitespace(cp) || unicode::is_split_space(cp)) {
      flush();
    } else if (unicode::is_punctuation(cp)) {
      flush();
      current.push_back(cp);
      flush();
    } else {
      current.push_back(cp);
    }
  }
  flush();
}

}  // namespace

std::vector<std::string> basic_tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> words;
  const auto& specials = vocab.special_tokens();
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = std::string_view::npos;
    std::size_t best_len = 0;
    for (const auto& s : specials) {
      const std::size_t at = text.find(s, pos);
      if (at < best || (at == best && s.size() > best_len)) {
        best = at;
        best_len = s.size();
      }
    }
    if (best == std::string_view::npos) {
      pretokenize_segment(text.substr(pos), words);
      break;
    }
    pretokenize_segment(text.substr(pos, best - pos), words);
    words.emplace_back(text.substr(best, best_len));
    pos = best + best_len;
  }
  return words;
}

std::vector<TokenId> wordpiece_word(std::string_view word, const Vocab& vocab) {
  if (vocab.is_special_token(word)) return {*vocab.find(word)};
  const std::u32string chars = unicode::decode_utf8(word);
  if (chars.size() > vocab.max_wordpiece_chars()) return {vocab.unk_id()};
  std::vector<TokenId> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < chars.size()) {
    std::size_t end = chars.size();
    std::optional<TokenId> match;
    while (start < end) {
      candidate.clear();
      if (start > 0) candidate = "##";
      for (std::size_t i = start; i < end; ++i) unicode::append_utf8(candidate, chars[i]);
      if ((match = vocab.find(candidate))) break;
      --end;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

std::vector<TokenId> wordpiece(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& word : basic_tokenize(text, vocab)) {
    const auto pieces = wordpiece_word(word, vocab);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return ids;
}

EncodedInput encode_ids(std::vector<TokenId> query_ids, std::vector<TokenId> doc_ids,
                        const Vocab& vocab, std::size_t max_length) {
  if (query_ids.size() + 3 > max_length) {
    throw ValidationError("encode_pair: query has " + std::to_string(query_ids.size()) +
                          " tokens; at most " + std::to_string(max_length - 3) + " fit");
  }
  const std::size_t doc_room = max_length - 3 - query_ids.size();
  if (doc_ids.size() > doc_room) doc_ids.resize(doc_room);

  EncodedInput out;
  const std::size_t total = query_ids.size() + doc_ids.size() + 3;
  out.token_ids.reserve(total);
  out.token_ids.push_back(vocab.cls_id());
  out.token_ids.insert(out.token_ids.end(), query_ids.begin(), query_ids.end());
  out.token_ids.push_back(vocab.sep_id());
  out.token_ids.insert(out.token_ids.end(), doc_ids.begin(), doc_ids.end());
  out.token_ids.push_back(vocab.sep_id());

  out.token_type_ids.assign(total, 1);
  std::fill_n(out.token_type_ids.begin(), query_ids.size() + 2, std::uint8_t{0});
  out.attention_mask.assign(total, 1);
  out.query_span = {1, 1 + query_ids.size()};
  out.doc_span = {2 + query_ids.size(), 2 + query_ids.size() + doc_ids.size()};
  return out;
}

EncodedInput encode_pair(std::string_view query, std::string_view doc, const Vocab& vocab,
                         std::size_t max_length) {
  return encode_ids(wordpiece(query, vocab), wordpiece(doc, vocab), vocab, max_length);
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (tok.size() > 2 && tok.compare(0, 2, "##") == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += tok;
    }
  }
  return out;
}

}  // namespace circuitprobe
