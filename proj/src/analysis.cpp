#include "pgrec/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "pgrec/error.hpp"
#include "pgrec/evaluation.hpp"
#include "pgrec/predictors.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

std::vector<bool> frequent_buyer_flags(std::span<const int> counts) {
  if (counts.empty()) throw DataError("cannot label frequent buyers of an empty group");
  double total = 0.0;
  for (int c : counts) total += c;
  const double threshold = 2.0 * total / static_cast<double>(counts.size());
  std::vector<bool> flags(counts.size());
  for (std::size_t t = 0; t < counts.size(); ++t) flags[t] = static_cast<double>(counts[t]) > threshold;
  return flags;
}

std::vector<std::vector<bool>> label_frequent_buyers(const Dataset& dataset) {
  std::vector<std::vector<bool>> out;
  out.reserve(dataset.groups.size());
  for (const auto& g : dataset.groups) {
    if (g.members.empty()) {
      throw DataError("group " + std::to_string(dataset.group_ids.original(g.id)) + " has no members");
    }
    std::vector<int> counts;
    counts.reserve(g.members.size());
    for (int u : g.members) counts.push_back(dataset.users[static_cast<std::size_t>(u)].purchase_count);
    out.push_back(frequent_buyer_flags(counts));
  }
  return out;
}

ChiSquareResult chi_square_test(int c1, int c2, double critical_value) {
  if (c1 < 0 || c2 < 0) throw UsageError("chi-square counts must be non-negative");
  if (c1 + c2 == 0) throw DataError("chi-square test needs at least one observation");
  ChiSquareResult r;
  r.c1 = c1;
  r.c2 = c2;
  r.e1 = r.e2 = (static_cast<double>(c1) + c2) / 2.0;
  r.statistic = (c1 - r.e1) * (c1 - r.e1) / r.e1 + (c2 - r.e2) * (c2 - r.e2) / r.e2;
  r.critical_value = critical_value;
  r.rejected = r.statistic > critical_value;
  return r;
}

InfluenceRecord make_influence_record(const Dataset& dataset, const std::vector<std::vector<bool>>& flags,
                                      int group, int item, int user) {
  const auto& members = dataset.groups.at(static_cast<std::size_t>(group)).members;
  const auto it = std::find(members.begin(), members.end(), user);
  if (it == members.end()) throw DataError("user is not a member of the group");
  InfluenceRecord r;
  r.group = group;
  r.item = item;
  r.price = dataset.items.at(static_cast<std::size_t>(item)).raw_price;
  r.user = user;
  r.is_frequent_buyer = flags.at(static_cast<std::size_t>(group))[static_cast<std::size_t>(it - members.begin())];
  r.set = r.is_frequent_buyer ? InfluenceSet::A : InfluenceSet::B;
  return r;
}

std::size_t most_influential(std::span<const int> members, std::span<const double> weights) {
  if (members.empty() || members.size() != weights.size()) throw UsageError("one weight per member required");
  std::size_t best = 0;
  for (std::size_t t = 1; t < members.size(); ++t) {
    if (weights[t] > weights[best] || (weights[t] == weights[best] && members[t] < members[best])) best = t;
  }
  return best;
}

std::vector<InfluenceRecord> extract_influence(const Scorer& model, const Dataset& dataset,
                                               const InteractionSet& test, std::uint64_t seed, int threads) {
  if (!model.has_member_weights()) throw UsageError("influence extraction needs a model with member weights");
  EvalConfig cfg;
  cfg.ks = {1};
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.keep_weights = true;
  const auto outcome = evaluate_ranking(model, dataset, test, cfg);
  const auto flags = label_frequent_buyers(dataset);
  std::vector<InfluenceRecord> out;
  for (const auto& r : outcome.results) {
    if (r.rank_of_positive != 1) continue;
    const auto& members = dataset.groups[static_cast<std::size_t>(r.group)].members;
    const auto t = most_influential(members, r.member_weights);
    out.push_back(make_influence_record(dataset, flags, r.group, r.pos_item, members[t]));
  }
  return out;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw UsageError("percentile must lie in [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

PriceBucketTests price_bucket_tests(std::span<const InfluenceRecord> records, double low_pct, double high_pct,
                                    double critical_value) {
  if (records.empty()) throw DataError("no influence records to test");
  std::vector<double> prices;
  prices.reserve(records.size());
  for (const auto& r : records) prices.push_back(r.price);
  PriceBucketTests out;
  out.low_threshold = percentile(prices, low_pct);
  out.high_threshold = percentile(prices, high_pct);
  int low_a = 0, low_b = 0, high_a = 0, high_b = 0;
  for (const auto& r : records) {
    if (r.price < out.low_threshold) ++(r.is_frequent_buyer ? low_a : low_b);
    if (r.price > out.high_threshold) ++(r.is_frequent_buyer ? high_a : high_b);
  }
  if (low_a + low_b == 0) throw DataError("no records priced below the low percentile");
  if (high_a + high_b == 0) throw DataError("no records priced above the high percentile");
  out.low = chi_square_test(low_a, low_b, critical_value);
  out.high = chi_square_test(high_a, high_b, critical_value);
  return out;
}

std::vector<PriceBucketRow> price_bucket_report(std::span<const InfluenceRecord> records, int buckets) {
  if (buckets < 1) throw UsageError("bucket count must be positive");
  if (records.empty()) return {};
  std::vector<double> prices;
  for (const auto& r : records) prices.push_back(r.price);
  std::vector<PriceBucketRow> rows(static_cast<std::size_t>(buckets));
  for (int b = 0; b < buckets; ++b) {
    auto& row = rows[static_cast<std::size_t>(b)];
    row.bucket = b + 1;
    row.price_lo = percentile(prices, 100.0 * b / buckets);
    row.price_hi = percentile(prices, 100.0 * (b + 1) / buckets);
  }
  for (const auto& r : records) {
    std::size_t b = 0;
    while (b + 1 < rows.size() && r.price > rows[b].price_hi) ++b;
    ++(r.is_frequent_buyer ? rows[b].set_a : rows[b].set_b);
  }
  return rows;
}

std::vector<double> gmv_curve(std::span<const int> ranking, const Dataset& dataset, int group, int max_rank) {
  if (max_rank < 1) throw UsageError("max rank must be positive");
  if (group < 0 || group >= dataset.n_groups()) throw DataError("unknown group index " + std::to_string(group));
  const auto& members = dataset.groups[static_cast<std::size_t>(group)].members;
  const auto n = std::min(static_cast<std::size_t>(max_rank), ranking.size());
  std::vector<double> curve(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int item = ranking[r];
    if (dataset.group_item_test.contains(group, item)) {
      int buyers = 0;
      for (int u : members) buyers += dataset.user_item_test.contains(u, item) ? 1 : 0;
      total += dataset.items[static_cast<std::size_t>(item)].raw_price * buyers;
    }
    curve[r] = total;
  }
  return curve;
}

std::vector<double> gmv_curve(const Scorer& model, const Dataset& dataset, int group, int max_rank) {
  return gmv_curve(rank_all_items(model, dataset, group), dataset, group, max_rank);
}

TTestResult t_test_two_sample(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() < 2 || b.size() < 2) throw UsageError("t-test needs at least two samples per side");
  auto moments = [](std::span<const double> x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = va / na;
  const double sb = vb / nb;
  TTestResult r;
  if (sa + sb == 0.0) {
    if (ma == mb) return r;
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.df = na + nb - 2.0;
    r.p_value = 0.0;
    r.significant = true;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  r.significant = r.p_value < alpha;
  return r;
}

// ---------------------------------------------------------------- output

std::string format_influence(std::span<const InfluenceRecord> records, const Dataset& dataset) {
  std::string out = "group_id\titem_id\tprice\tuser_id\tis_frequent_buyer\tset\n";
  for (const auto& r : records) {
    out += std::to_string(dataset.group_ids.original(r.group)) + "\t" +
           std::to_string(dataset.item_ids.original(r.item)) + "\t" + tsv::format_double(r.price) + "\t" +
           std::to_string(dataset.user_ids.original(r.user)) + "\t" + (r.is_frequent_buyer ? "1" : "0") + "\t" +
           (r.set == InfluenceSet::A ? "A" : "B") + "\n";
  }
  return out;
}

namespace {

std::string chi_row(const char* tail, double threshold, const ChiSquareResult& c) {
  return std::string(tail) + "\t" + tsv::format_double(threshold) + "\t" + std::to_string(c.c1) + "\t" +
         std::to_string(c.c2) + "\t" + tsv::format_double(c.e1) + "\t" + tsv::format_double(c.statistic) + "\t" +
         tsv::format_double(c.critical_value) + "\t" + (c.rejected ? "1" : "0") + "\n";
}

std::string chi_line(const std::string& name, const ChiSquareResult& c) {
  return name + ": frequent " + std::to_string(c.c1) + ", non-frequent " + std::to_string(c.c2) +
         ", expected " + tsv::format_fixed(c.e1, 1) + ", chi2 " + tsv::format_fixed(c.statistic, 2) + " vs " +
         tsv::format_fixed(c.critical_value, 2) + " -> " + (c.rejected ? "reject null" : "not enough evidence") +
         "\n";
}

}  // namespace

std::string format_chi_square(const PriceBucketTests& tests) {
  return "tail\tthreshold\tfrequent\tnon_frequent\texpected\tstatistic\tcritical_value\trejected\n" +
         chi_row("low", tests.low_threshold, tests.low) + chi_row("high", tests.high_threshold, tests.high);
}

std::string chi_square_summary(const PriceBucketTests& tests) {
  return chi_line("cheap tail (price < " + tsv::format_fixed(tests.low_threshold, 2) + ")", tests.low) +
         chi_line("expensive tail (price > " + tsv::format_fixed(tests.high_threshold, 2) + ")", tests.high);
}

std::string format_price_buckets(std::span<const PriceBucketRow> rows) {
  std::string out = "bucket\tprice_lo\tprice_hi\tset_a\tset_b\tfraction_a\n";
  for (const auto& r : rows) {
    const int n = r.set_a + r.set_b;
    out += std::to_string(r.bucket) + "\t" + tsv::format_double(r.price_lo) + "\t" + tsv::format_double(r.price_hi) +
           "\t" + std::to_string(r.set_a) + "\t" + std::to_string(r.set_b) + "\t" +
           (n == 0 ? std::string("0") : tsv::format_double(static_cast<double>(r.set_a) / n)) + "\n";
  }
  return out;
}

std::string format_gmv(std::span<const double> curve) {
  std::string out = "rank\tcumulative_gmv\n";
  for (std::size_t r = 0; r < curve.size(); ++r) {
    out += std::to_string(r + 1) + "\t" + tsv::format_double(curve[r]) + "\n";
  }
  return out;
}

}  // namespace pgrec
