#include "circuitprobe/text_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "circuitprobe/error.hpp"

namespace circuitprobe {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

std::vector<std::string> read_data_lines(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (auto& line : read_lines(path)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.push_back(std::move(line));
  }
  return out;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = text.find(sep, start);
    if (at == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, at - start));
    start = at + 1;
  }
}

std::string_view trim(std::string_view text) {
  constexpr std::string_view kSpace = " \t\r\n";
  const auto b = text.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(kSpace);
  return text.substr(b, e - b + 1);
}

std::string to_lower_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t hash_floats(std::span<const float> values, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  std::size_t i = 0;
  for (; i + 2 <= values.size(); i += 2) {
    std::uint64_t word = 0;
    std::memcpy(&word, values.data() + i, sizeof(word));
    h ^= word;
    h *= kFnvPrime;
    h ^= h >> 29;
  }
  if (i < values.size()) {
    std::uint32_t last = 0;
    std::memcpy(&last, values.data() + i, sizeof(last));
    h ^= last;
    h *= kFnvPrime;
  }
  h ^= static_cast<std::uint64_t>(values.size());
  return h * kFnvPrime;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace circuitprobe
