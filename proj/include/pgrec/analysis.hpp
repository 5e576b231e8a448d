#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pgrec/dataset.hpp"

namespace pgrec {

class Scorer;

// count > 2 * mean(counts), strictly.
std::vector<bool> frequent_buyer_flags(std::span<const int> counts);

// flags[g][t] for member t of group g, from training purchase counts.
std::vector<std::vector<bool>> label_frequent_buyers(const Dataset& dataset);

struct ChiSquareResult {
  int c1 = 0;
  int c2 = 0;
  double e1 = 0.0;
  double e2 = 0.0;
  double statistic = 0.0;
  double critical_value = 3.84;
  bool rejected = false;
};

// Two-cell goodness of fit against the equal-chance null.
ChiSquareResult chi_square_test(int c1, int c2, double critical_value = 3.84);

enum class InfluenceSet { A, B };  // A: most influential member is a frequent buyer

struct InfluenceRecord {
  int group = 0;
  int item = 0;
  double price = 0.0;
  int user = 0;  // dense index of the most influential member
  bool is_frequent_buyer = false;
  InfluenceSet set = InfluenceSet::B;
};

InfluenceRecord make_influence_record(const Dataset& dataset, const std::vector<std::vector<bool>>& flags,
                                      int group, int item, int user);

// Position of the largest weight; ties go to the member with the lowest user index.
std::size_t most_influential(std::span<const int> members, std::span<const double> weights);

// Runs the sampled ranking protocol on `test` and records the most influential
// member for every positive ranked first.
std::vector<InfluenceRecord> extract_influence(const Scorer& model, const Dataset& dataset,
                                               const InteractionSet& test, std::uint64_t seed,
                                               int threads = 1);

// Linear interpolation between closest ranks (p in [0, 100]).
double percentile(std::span<const double> values, double p);

struct PriceBucketTests {
  double low_threshold = 0.0;   // records priced strictly below are the cheap tail
  double high_threshold = 0.0;  // records priced strictly above are the expensive tail
  ChiSquareResult low;
  ChiSquareResult high;
};

PriceBucketTests price_bucket_tests(std::span<const InfluenceRecord> records, double low_pct = 10.0,
                                    double high_pct = 90.0, double critical_value = 3.84);

struct PriceBucketRow {
  int bucket = 0;
  double price_lo = 0.0;
  double price_hi = 0.0;
  int set_a = 0;
  int set_b = 0;
};

// Records split into `buckets` price quantile buckets.
std::vector<PriceBucketRow> price_bucket_report(std::span<const InfluenceRecord> records, int buckets = 10);

// Cumulative GMV at ranks 1..max_rank along `ranking` (dense item indices).
std::vector<double> gmv_curve(std::span<const int> ranking, const Dataset& dataset, int group, int max_rank);
std::vector<double> gmv_curve(const Scorer& model, const Dataset& dataset, int group, int max_rank);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

// Welch two-sample t-test, two-sided.
TTestResult t_test_two_sample(std::span<const double> a, std::span<const double> b, double alpha = 0.1);

std::string format_influence(std::span<const InfluenceRecord> records, const Dataset& dataset);
std::string format_chi_square(const PriceBucketTests& tests);
std::string chi_square_summary(const PriceBucketTests& tests);
std::string format_price_buckets(std::span<const PriceBucketRow> rows);
// `rank<TAB>cumulative_gmv`
std::string format_gmv(std::span<const double> curve);

}  // namespace pgrec
