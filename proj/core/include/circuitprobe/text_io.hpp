#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace circuitprobe {

/// All lines of a text file with trailing CR stripped. Throws FormatError
/// when the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Lines that carry data: blank lines and `#` comments dropped.
std::vector<std::string> read_data_lines(const std::filesystem::path& path);

std::vector<std::string_view> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);
std::string to_lower_ascii(std::string_view text);

void write_text_file(const std::filesystem::path& path, std::string_view content);

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = kFnvOffset) noexcept;

/// Word-at-a-time FNV-style hash for large float buffers.
std::uint64_t hash_floats(std::span<const float> values, std::uint64_t seed = kFnvOffset) noexcept;

std::string hex64(std::uint64_t value);

}  // namespace circuitprobe
