#include "circuitprobe/unicode.hpp"

#include <algorithm>
#include <cstdint>
#include <iterator>

namespace circuitprobe::unicode {
namespace {

struct CodepointRange {
  char32_t first;
  char32_t last;
};

struct NormEntry {
  char32_t cp;
  std::uint32_t offset;
  std::uint32_t length;
};

#include "unicode_tables.inc"

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) noexcept {
  const auto* end = std::end(table);
  const auto* it = std::upper_bound(std::begin(table), end, cp,
                                    [](char32_t v, const CodepointRange& r) { return v < r.first; });
  if (it == std::begin(table)) return false;
  --it;
  return cp >= it->first && cp <= it->last;
}

constexpr char32_t kReplacement = 0xFFFD;

// Hangul syllable decomposition constants.
constexpr char32_t kSBase = 0xAC00;
constexpr char32_t kLBase = 0x1100;
constexpr char32_t kVBase = 0x1161;
constexpr char32_t kTBase = 0x11A7;
constexpr char32_t kTCount = 28;
constexpr char32_t kNCount = 21 * kTCount;
constexpr char32_t kSCount = 19 * kNCount;

}  // namespace

std::u32string decode_utf8(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  const auto* s = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = s[i];
    std::size_t len = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if (c < 0x80) {
      out.push_back(c);
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, cp = c & 0x1F, min = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, cp = c & 0x0F, min = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, cp = c & 0x07, min = 0x10000;
    } else {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    if (i + len > n) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      if ((s[i + k] & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (s[i + k] & 0x3F);
    }
    if (!ok || cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      out.push_back(kReplacement);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) append_utf8(out, cp);
  return out;
}

bool is_whitespace(char32_t cp) noexcept { return in_ranges(kWhitespaceRanges, cp); }
bool is_control(char32_t cp) noexcept { return in_ranges(kControlRanges, cp); }
bool is_punctuation(char32_t cp) noexcept { return in_ranges(kPunctuationRanges, cp); }
bool is_split_space(char32_t cp) noexcept { return in_ranges(kSplitSpaceRanges, cp); }

bool is_chinese_char(char32_t cp) noexcept {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0x2A700 && cp <= 0x2B73F) ||
         (cp >= 0x2B740 && cp <= 0x2B81F) || (cp >= 0x2B820 && cp <= 0x2CEAF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

void append_normalized(std::u32string& out, char32_t cp) {
  if (cp >= kSBase && cp < kSBase + kSCount) {
    const char32_t s = cp - kSBase;
    out.push_back(kLBase + s / kNCount);
    out.push_back(kVBase + (s % kNCount) / kTCount);
    if (const char32_t t = s % kTCount; t != 0) out.push_back(kTBase + t);
    return;
  }
  const auto* end = std::end(kNormEntries);
  const auto* it = std::lower_bound(std::begin(kNormEntries), end, cp,
                                    [](const NormEntry& e, char32_t v) { return e.cp < v; });
  if (it != end && it->cp == cp) {
    out.append(kNormPool + it->offset, it->length);
    return;
  }
  out.push_back(cp);
}

std::string fold(std::string_view text) {
  std::u32string folded;
  for (char32_t cp : decode_utf8(text)) append_normalized(folded, cp);
  return encode_utf8(folded);
}

}  // namespace circuitprobe::unicode
