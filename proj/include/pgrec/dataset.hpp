#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgrec/rng.hpp"

namespace pgrec {

enum class FeedbackKind { Implicit, Explicit };

std::string_view to_string(FeedbackKind kind);
FeedbackKind parse_feedback_kind(std::string_view s);

struct Interaction {
  int row = 0;
  int col = 0;
  double value = 1.0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

// Sparse interaction matrix stored as (row, col)-sorted entries.
class InteractionSet {
 public:
  InteractionSet() = default;
  // Sorts entries; throws DataError on a duplicate (row, col) pair.
  explicit InteractionSet(std::vector<Interaction> entries);

  std::span<const Interaction> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Interaction* find(int row, int col) const;
  bool contains(int row, int col) const { return find(row, col) != nullptr; }
  std::span<const Interaction> row(int r) const;

  friend bool operator==(const InteractionSet&, const InteractionSet&) = default;

 private:
  std::vector<Interaction> entries_;
};

struct CatalogItem {
  int id = 0;  // dense index
  double raw_price = 0.0;
  double alpha = 1.0;  // normalized inverse price in [0.01, 1]

  friend bool operator==(const CatalogItem&, const CatalogItem&) = default;
};

struct UserProfile {
  int id = 0;  // dense index
  int purchase_count = 0;  // training interactions only
  double freq = 0.0;       // normalized frequency in [0, 5]

  friend bool operator==(const UserProfile&, const UserProfile&) = default;
};

struct GroupDef {
  int id = 0;  // dense index
  std::vector<int> members;  // dense user indices, unique

  friend bool operator==(const GroupDef&, const GroupDef&) = default;
};

// Sorted original ids; dense index = position.
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<std::int64_t> originals);

  std::size_t size() const { return originals_.size(); }
  std::optional<int> find(std::int64_t original) const;
  int dense(std::int64_t original) const;  // throws DataError
  std::int64_t original(int dense) const { return originals_.at(static_cast<std::size_t>(dense)); }
  std::span<const std::int64_t> originals() const { return originals_; }

  // `original_id<TAB>dense_index` rows with header.
  std::string to_tsv() const;
  static IdMap from_tsv(const std::filesystem::path& path);

  friend bool operator==(const IdMap&, const IdMap&) = default;

 private:
  std::vector<std::int64_t> originals_;
};

struct Dataset {
  FeedbackKind feedback_kind = FeedbackKind::Implicit;
  std::vector<UserProfile> users;
  std::vector<CatalogItem> items;
  std::vector<GroupDef> groups;

  InteractionSet user_item;         // X, training window
  InteractionSet group_item;        // Y, training window (validation removed)
  InteractionSet group_item_valid;  // held out from Y for checkpoint selection
  InteractionSet group_item_test;
  InteractionSet user_item_test;

  IdMap user_ids;
  IdMap item_ids;
  IdMap group_ids;

  int n_users() const { return static_cast<int>(users.size()); }
  int n_items() const { return static_cast<int>(items.size()); }
  int n_groups() const { return static_cast<int>(groups.size()); }

  // Content hash over ids, prices, memberships and every interaction split.
  std::string hash() const;
  std::string id_map_hash() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// --- raw (pre-remap) records, produced by file readers and the generator ---

struct RawInteraction {
  std::int64_t row_id = 0;
  std::int64_t item_id = 0;
  double value = 1.0;
  std::optional<std::int64_t> timestamp;
  std::size_t line = 0;
};

struct RawItem {
  std::int64_t item_id = 0;
  double price = 0.0;
  std::size_t line = 0;
};

struct RawMembership {
  std::int64_t group_id = 0;
  std::int64_t user_id = 0;
  std::size_t line = 0;
};

struct RawData {
  std::string items_source = "items";
  std::string groups_source = "groups";
  std::string user_items_source = "user_items";
  std::string group_items_source = "group_items";
  std::vector<RawItem> items;
  std::vector<RawMembership> memberships;
  std::vector<RawInteraction> user_items;
  std::optional<std::vector<RawInteraction>> group_items;
};

struct DataPaths {
  std::filesystem::path user_items;
  std::optional<std::filesystem::path> group_items;
  std::filesystem::path items;
  std::filesystem::path groups;

  // items.tsv, groups.tsv, user_items.tsv and (if present) group_items.tsv.
  static DataPaths in_directory(const std::filesystem::path& dir);
};

struct LoadConfig {
  std::optional<FeedbackKind> feedback_kind;  // inferred from values when unset
  int min_buyers = 2;                         // used only when group interactions are derived
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  std::optional<std::int64_t> split_cutoff;  // timestamp split; quantile of timestamps when unset
  std::uint64_t seed = 1;
};

RawData read_raw(const DataPaths& paths);
Dataset build_dataset(const RawData& raw, const LoadConfig& config);
Dataset load_dataset(const DataPaths& paths, const LoadConfig& config);

void write_id_maps(const Dataset& dataset, const std::filesystem::path& dir);

// alpha_i = 0.01 + 0.99 (p_max - p_i) / (p_max - p_min); all-equal prices map to 1.
std::vector<double> normalize_price(std::span<const double> raw_prices);
// freq_i = 5 (c_i - c_min) / (c_max - c_min); all-equal counts map to 2.5.
std::vector<double> normalize_frequency(std::span<const int> counts);

// (group, item) pairs where at least `min_buyers` distinct members bought the item.
InteractionSet derive_group_interactions(std::span<const GroupDef> groups,
                                         const InteractionSet& user_item, int min_buyers,
                                         FeedbackKind kind = FeedbackKind::Implicit);
InteractionSet derive_group_interactions(const Dataset& dataset, int min_buyers);

// Per-row negative sampling over the item universe, excluding known interactions.
class NegativeSampler {
 public:
  NegativeSampler(int num_items, std::span<const InteractionSet* const> known);

  int eligible_count(int row) const;
  // k distinct items the row never interacted with; throws DataError if fewer exist.
  std::vector<int> sample(int row, int k, Rng& rng) const;

 private:
  std::span<const int> known_for(int row) const;

  int num_items_ = 0;
  std::vector<std::vector<int>> known_;
};

struct NegativeSample {
  int row = 0;
  int pos_item = 0;
  std::vector<int> neg_items;

  friend bool operator==(const NegativeSample&, const NegativeSample&) = default;
};

// One negative list per positive; positive i draws from its own seed stream.
std::vector<NegativeSample> sample_negatives(const InteractionSet& positives,
                                             const NegativeSampler& sampler, int k_per_positive,
                                             std::uint64_t seed, std::uint64_t stream);

}  // namespace pgrec
