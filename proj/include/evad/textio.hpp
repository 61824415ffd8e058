#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace evad::textio {

// Field escaping for tab-separated files: backslash, tab, CR and LF are
// written as \\, \t, \r and \n. Everything else is copied verbatim.
std::string escape(std::string_view raw);
std::string unescape(std::string_view field);

/// Splits on tabs and unescapes each field.
std::vector<std::string> split_tsv(std::string_view line);
std::string join_tsv(const std::vector<std::string>& fields);

/// Splits on a single delimiter without any unescaping.
std::vector<std::string_view> split(std::string_view line, char delim);

/// Shortest decimal form that round-trips the double.
std::string format_double(double value);
double parse_double(std::string_view text);
std::int64_t parse_int(std::string_view text);

/// 64-bit FNV-1a, used to content-address snapshot files.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hash_file_hex(const std::filesystem::path& path);
std::string to_hex(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace evad::textio
