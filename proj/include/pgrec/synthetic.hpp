#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgrec/dataset.hpp"

namespace pgrec {

enum class PriceDistribution { Uniform, LogNormal };
enum class GroupRatingRule { RatersOnly, AllMembers };
enum class BackgroundSource { Balanced, Uniform };

// Generator for desk-scale data with a planted price-dependent influence rule.
//
// Every group has a "heavy" taste shared by its heavy buyers and a "light" taste
// shared by everyone else. Each group-item positive has a source member: for
// items in the cheapest price decile the source is a frequent buyer with
// probability rho, falling linearly to zero at the priciest decile. Otherwise the
// source is drawn with equal chance from the frequent and non-frequent members
// (Balanced) or uniformly from all members (Uniform).
// The positive's item comes from the source's taste at the drawn price decile.
struct GenConfig {
  int n_users = 500;
  int n_items = 300;
  int n_groups = 8;
  int group_size = 0;  // 0: partition users into disjoint groups of near-equal size
  int n_topics = 3;
  double heavy_fraction = 0.4;
  int heavy_min_purchases = 32;
  int heavy_max_purchases = 34;
  int light_min_purchases = 1;
  int light_max_purchases = 3;
  double off_topic_rate = 0.1;
  PriceDistribution price_distribution = PriceDistribution::Uniform;
  double price_min = 5.0;
  double price_max = 500.0;
  double rho = 0.9;
  int group_events = 150;  // attempted group positives per group
  int horizon = 100;       // timestamps are integer days in [0, horizon)
  double test_fraction = 0.2;
  FeedbackKind feedback = FeedbackKind::Implicit;
  GroupRatingRule rating_rule = GroupRatingRule::RatersOnly;
  BackgroundSource background = BackgroundSource::Balanced;

  // Throws UsageError on an infeasible configuration.
  void validate() const;
};

// Ground-truth source of one generated group-item positive (original ids).
struct InfluenceTruth {
  std::int64_t group_id = 0;
  std::int64_t item_id = 0;
  std::int64_t source_user_id = 0;
  bool frequent_mode = false;  // drawn under the planted frequent-buyer rule

  friend bool operator==(const InfluenceTruth&, const InfluenceTruth&) = default;
};

struct SyntheticCorpus {
  RawData raw;
  std::vector<InfluenceTruth> truth;
};

SyntheticCorpus generate_synthetic(const GenConfig& config, std::uint64_t seed);

// Writes items.tsv, groups.tsv, user_items.tsv, group_items.tsv and influence_truth.tsv.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);
std::vector<InfluenceTruth> read_truth(const std::filesystem::path& path);

}  // namespace pgrec
