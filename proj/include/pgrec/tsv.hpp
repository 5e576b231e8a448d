#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pgrec::tsv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<Row> rows;
};

// Reads a tab-separated file with a header row. Blank lines are skipped.
Table read(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view line, char sep = '\t');

// Field parsers; throw DataError naming file and line on failure.
std::int64_t parse_int(const Table& t, const Row& r, std::size_t col);
double parse_double(const Table& t, const Row& r, std::size_t col);

// Shortest round-trippable decimal representation (locale independent).
std::string format_double(double v);
// Fixed-point with `digits` decimals.
std::string format_fixed(double v, int digits);

// Writes `content` atomically enough for our purposes; creates parent directories.
void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

// FNV-1a 64-bit.
std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace pgrec::tsv
