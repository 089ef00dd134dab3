#pragma once

#include <string>
#include <string_view>

namespace circuitprobe::unicode {

/// Decodes UTF-8; malformed sequences become U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);
void append_utf8(std::string& out, char32_t cp);

// Character classes of the BERT normalizer / pre-tokenizer.
bool is_whitespace(char32_t cp) noexcept;
bool is_control(char32_t cp) noexcept;
bool is_punctuation(char32_t cp) noexcept;
bool is_chinese_char(char32_t cp) noexcept;
/// Separators that survive cleaning and still split words (U+2028, U+2029).
bool is_split_space(char32_t cp) noexcept;

/// Appends the NFD-decomposed, mark-stripped, lowercased form of `cp`.
void append_normalized(std::u32string& out, char32_t cp);

/// Lowercases and strips accents from a whole string.
std::string fold(std::string_view text);

}  // namespace circuitprobe::unicode
