#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "pgrec/dataset.hpp"

namespace pgrec::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pgrec_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct ToyGroup {
  std::int64_t id;
  std::vector<std::int64_t> members;
};

// Raw records with 1-based ids; item k has price prices[k-1]. No timestamps.
inline RawData toy_raw(const std::vector<double>& prices, const std::vector<ToyGroup>& groups,
                       const std::vector<std::pair<std::int64_t, std::int64_t>>& user_items,
                       const std::vector<std::pair<std::int64_t, std::int64_t>>& group_items) {
  RawData raw;
  std::size_t line = 2;
  for (std::size_t i = 0; i < prices.size(); ++i) raw.items.push_back({static_cast<std::int64_t>(i + 1), prices[i], line++});
  line = 2;
  for (const auto& g : groups) {
    for (auto u : g.members) raw.memberships.push_back({g.id, u, line++});
  }
  line = 2;
  for (auto [u, i] : user_items) raw.user_items.push_back({u, i, 1.0, std::nullopt, line++});
  line = 2;
  raw.group_items.emplace();
  for (auto [g, i] : group_items) raw.group_items->push_back({g, i, 1.0, std::nullopt, line++});
  return raw;
}

inline LoadConfig no_split() {
  LoadConfig cfg;
  cfg.test_fraction = 0.0;
  cfg.validation_fraction = 0.0;
  return cfg;
}

}  // namespace pgrec::testing
