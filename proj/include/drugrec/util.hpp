#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace drugrec {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents. Throws MissingFile.
std::string sha256_file(const std::filesystem::path& path);

/// 64-bit FNV-1a; stable across platforms, used for feature hashing.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string_view trim(std::string_view s);

/// Trims and collapses internal whitespace runs to a single space.
std::string normalize_space(std::string_view s);

std::string to_lower_ascii(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

/// Shortest representation that reads back to the same double.
std::string format_double(double v);

inline bool is_word_byte(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

} // namespace drugrec
