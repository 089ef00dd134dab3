#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace circuitprobe {

using TokenId = std::int32_t;

/// Half-open index range [begin, end) into a token sequence.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return end == begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// WordPiece vocabulary: line index in vocab.txt is the token id.
class Vocab {
 public:
  static constexpr std::size_t kMaxWordpieceChars = 100;

  /// Throws FormatError on duplicate tokens or missing special tokens.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  bool is_special(TokenId id) const noexcept;
  bool is_special_token(std::string_view token) const noexcept;

  TokenId cls_id() const noexcept { return cls_; }
  TokenId sep_id() const noexcept { return sep_; }
  TokenId pad_id() const noexcept { return pad_; }
  TokenId unk_id() const noexcept { return unk_; }
  std::size_t max_wordpiece_chars() const noexcept { return kMaxWordpieceChars; }

  /// Special tokens that are split out of raw text verbatim.
  const std::vector<std::string>& special_tokens() const noexcept { return specials_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> specials_;
  TokenId cls_ = 0, sep_ = 0, pad_ = 0, unk_ = 0;
};

Vocab load_vocab(const std::filesystem::path& path);

/// Cross-encoder input `[CLS] query [SEP] document [SEP]`.
struct EncodedInput {
  std::vector<TokenId> token_ids;
  std::vector<std::uint8_t> token_type_ids;
  std::vector<std::uint8_t> attention_mask;
  Span query_span;  // query tokens, excluding specials
  Span doc_span;    // document tokens, excluding specials

  std::size_t size() const noexcept { return token_ids.size(); }
  friend bool operator==(const EncodedInput&, const EncodedInput&) = default;
};

inline constexpr std::size_t kMaxSequenceLength = 512;

/// Normalized, punctuation-split words (uncased BERT pre-tokenization).
std::vector<std::string> basic_tokenize(std::string_view text, const Vocab& vocab);

/// Greedy longest-match-first WordPiece over basic_tokenize's words.
/// Total: unmappable words become [UNK].
std::vector<TokenId> wordpiece(std::string_view text, const Vocab& vocab);

/// WordPiece for one pre-tokenized word (no normalization).
std::vector<TokenId> wordpiece_word(std::string_view word, const Vocab& vocab);

/// Builds the cross-encoder input. The document is truncated so the whole
/// sequence fits in `max_length`; the query never is. Throws ValidationError
/// if the query alone does not fit.
EncodedInput encode_pair(std::string_view query, std::string_view doc, const Vocab& vocab,
                         std::size_t max_length = kMaxSequenceLength);

EncodedInput encode_ids(std::vector<TokenId> query_ids, std::vector<TokenId> doc_ids,
                        const Vocab& vocab, std::size_t max_length = kMaxSequenceLength);

/// Joins wordpieces back into text, merging "##" continuations.
std::string detokenize(const std::vector<TokenId>& ids, const Vocab& vocab);

}  // namespace circuitprobe
