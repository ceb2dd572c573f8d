#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace seqsrl {

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over the target, so
/// readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> split_tokens(std::string_view line);
std::string join_tokens(const std::vector<std::string>& tokens, std::string_view sep = " ");

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace seqsrl
