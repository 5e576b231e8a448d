#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace pgrec::cli {

// Runs one subcommand. `args` excludes the program name. Returns the exit code:
// 0 success, 1 usage error, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

// `key = value` lines; '#' starts a comment. Throws UsageError on malformed lines.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Files under `dir` (relative path -> bytes), skipping manifest timestamp lines.
std::map<std::string, std::string> snapshot_outputs(const std::filesystem::path& dir);

}  // namespace pgrec::cli
