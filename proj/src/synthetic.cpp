#include "pgrec/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include "pgrec/analysis.hpp"
#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

void GenConfig::validate() const {
  auto fail = [](const std::string& what) { throw UsageError("infeasible generator config: " + what); };
  if (n_users < 1 || n_items < 2 || n_groups < 1) fail("need n_users >= 1, n_items >= 2, n_groups >= 1");
  if (group_size < 0) fail("group_size must be >= 0");
  if (group_size > n_users) fail("group size " + std::to_string(group_size) + " exceeds n_users");
  if (group_size == 0 && n_groups > n_users) fail("more groups than users");
  if (n_topics < 2) fail("n_topics must be >= 2");
  if (!(heavy_fraction >= 0.0 && heavy_fraction <= 1.0)) fail("heavy_fraction outside [0, 1]");
  if (!(rho >= 0.0 && rho <= 1.0)) fail("rho outside [0, 1]");
  if (!(off_topic_rate >= 0.0 && off_topic_rate <= 1.0)) fail("off_topic_rate outside [0, 1]");
  if (heavy_min_purchases < 0 || heavy_max_purchases < heavy_min_purchases ||
      light_min_purchases < 0 || light_max_purchases < light_min_purchases) {
    fail("purchase ranges must be nonnegative and ordered");
  }
  if (heavy_max_purchases > n_items || light_max_purchases > n_items) fail("purchase count exceeds n_items");
  if (!(price_min > 0.0) || !(price_max >= price_min)) fail("need 0 < price_min <= price_max");
  if (group_events < 0) fail("group_events must be >= 0");
  if (horizon < 1) fail("horizon must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) fail("test_fraction outside [0, 1)");
}

namespace {

constexpr int kDeciles = 10;

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

struct Purchase {
  int item;
  int day;
  double rating;
};

}  // namespace

SyntheticCorpus generate_synthetic(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, streams::kGenerator);
  const auto n = static_cast<std::size_t>(cfg.n_users);
  const auto m = static_cast<std::size_t>(cfg.n_items);

  // groups
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(cfg.n_groups));
  {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (cfg.group_size == 0) {
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      for (std::size_t i = 0; i < n; ++i) groups[i % groups.size()].push_back(order[i]);
    } else {
      for (auto& g : groups) {
        for (int i = 0; i < cfg.group_size; ++i) {
          const auto j = static_cast<std::size_t>(i) + uniform_index(rng, n - static_cast<std::size_t>(i));
          std::swap(order[static_cast<std::size_t>(i)], order[j]);
        }
        g.assign(order.begin(), order.begin() + cfg.group_size);
      }
    }
    for (auto& g : groups) std::sort(g.begin(), g.end());
  }

  // heavy flags and tastes; a user in several groups keeps its first assignment
  std::vector<int> heavy(n, -1);
  std::vector<int> topic(n, -1);
  for (auto& g : groups) {
    const int heavy_topic = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_topics)));
    int light_topic = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_topics - 1)));
    if (light_topic >= heavy_topic) ++light_topic;
    std::vector<int> fresh;
    for (int u : g) {
      if (heavy[static_cast<std::size_t>(u)] < 0) fresh.push_back(u);
    }
    for (std::size_t i = fresh.size(); i > 1; --i) std::swap(fresh[i - 1], fresh[uniform_index(rng, i)]);
    const auto n_heavy = static_cast<std::size_t>(std::llround(cfg.heavy_fraction * static_cast<double>(fresh.size())));
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      const auto u = static_cast<std::size_t>(fresh[i]);
      heavy[u] = i < n_heavy ? 1 : 0;
      topic[u] = i < n_heavy ? heavy_topic : light_topic;
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    if (heavy[u] >= 0) continue;
    heavy[u] = uniform01(rng) < cfg.heavy_fraction ? 1 : 0;
    topic[u] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_topics)));
  }

  // items: price, taste, price decile
  std::vector<double> price(m);
  std::vector<int> item_topic(m);
  for (std::size_t i = 0; i < m; ++i) {
    double p;
    if (cfg.price_distribution == PriceDistribution::Uniform) {
      p = cfg.price_min + (cfg.price_max - cfg.price_min) * uniform01(rng);
    } else {
      const double mu = 0.5 * (std::log(cfg.price_min) + std::log(cfg.price_max));
      const double sigma = (std::log(cfg.price_max) - std::log(cfg.price_min)) / 6.0;
      p = std::clamp(std::exp(mu + sigma * standard_normal(rng)), cfg.price_min, cfg.price_max);
    }
    // round through the on-disk text form so in-memory and reloaded prices agree bitwise
    const auto text = tsv::format_fixed(std::max(0.01, p), 2);
    std::from_chars(text.data(), text.data() + text.size(), price[i]);
    item_topic[i] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_topics)));
  }
  std::vector<int> decile(m);
  {
    std::vector<int> by_price(m);
    std::iota(by_price.begin(), by_price.end(), 0);
    std::stable_sort(by_price.begin(), by_price.end(),
                     [&](int a, int b) { return price[static_cast<std::size_t>(a)] < price[static_cast<std::size_t>(b)]; });
    for (std::size_t r = 0; r < m; ++r) {
      decile[static_cast<std::size_t>(by_price[r])] = static_cast<int>(r * kDeciles / m);
    }
  }
  std::vector<std::vector<int>> by_topic(static_cast<std::size_t>(cfg.n_topics));
  std::vector<std::vector<std::vector<int>>> by_cell(
      static_cast<std::size_t>(cfg.n_topics), std::vector<std::vector<int>>(kDeciles));
  for (std::size_t i = 0; i < m; ++i) {
    by_topic[static_cast<std::size_t>(item_topic[i])].push_back(static_cast<int>(i));
    by_cell[static_cast<std::size_t>(item_topic[i])][static_cast<std::size_t>(decile[i])].push_back(static_cast<int>(i));
  }

  auto latent_rating = [&](std::size_t u, int item) {
    return item_topic[static_cast<std::size_t>(item)] == topic[u] ? 4.5 : 2.0;
  };
  auto draw_rating = [&](std::size_t u, int item) {
    return std::clamp(std::round(latent_rating(u, item) + uniform01(rng) - 0.5), 1.0, 5.0);
  };
  auto draw_taste = [&](std::size_t u) {
    if (uniform01(rng) < cfg.off_topic_rate) {
      return static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_topics)));
    }
    return topic[u];
  };

  // individual purchases
  std::vector<std::vector<Purchase>> purchases(n);
  auto has_item = [&](std::size_t u, int item) {
    const auto& list = purchases[u];
    return std::any_of(list.begin(), list.end(), [item](const Purchase& p) { return p.item == item; });
  };
  for (std::size_t u = 0; u < n; ++u) {
    const int count = heavy[u] ? uniform_int(rng, cfg.heavy_min_purchases, cfg.heavy_max_purchases)
                               : uniform_int(rng, cfg.light_min_purchases, cfg.light_max_purchases);
    for (int k = 0; k < count; ++k) {
      for (int attempt = 0; attempt < 32; ++attempt) {
        const auto& pool = by_topic[static_cast<std::size_t>(draw_taste(u))];
        if (pool.empty()) continue;
        const int item = pool[uniform_index(rng, pool.size())];
        if (has_item(u, item)) continue;
        const int day = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.horizon)));
        purchases[u].push_back({item, day, draw_rating(u, item)});
        break;
      }
    }
  }

  // frequent buyers per group from the generator's own training window
  const int cutoff_day = static_cast<int>(std::floor(cfg.horizon * (1.0 - cfg.test_fraction)));
  std::vector<std::vector<int>> frequent(groups.size()), other(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<int> counts;
    for (int u : groups[g]) {
      const auto& list = purchases[static_cast<std::size_t>(u)];
      counts.push_back(static_cast<int>(std::count_if(
          list.begin(), list.end(), [&](const Purchase& p) { return p.day < cutoff_day; })));
    }
    const auto flags = frequent_buyer_flags(counts);
    for (std::size_t i = 0; i < groups[g].size(); ++i) {
      (flags[i] ? frequent[g] : other[g]).push_back(groups[g][i]);
    }
  }

  // group positives around a source member
  SyntheticCorpus corpus;
  struct GroupPositive {
    int item;
    int day;
    int source;
    bool frequent_mode;
  };
  std::vector<std::vector<GroupPositive>> positives(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::set<int> taken;
    for (int e = 0; e < cfg.group_events; ++e) {
      const int q = static_cast<int>(uniform_index(rng, kDeciles));
      const double planted = cfg.rho * static_cast<double>(kDeciles - 1 - q) / (kDeciles - 1);
      const bool frequent_mode = !frequent[g].empty() && uniform01(rng) < planted;
      const std::vector<int>* pool;
      if (frequent_mode) {
        pool = &frequent[g];
      } else if (cfg.background == BackgroundSource::Uniform) {
        pool = &groups[g];
      } else if (frequent[g].empty() || other[g].empty()) {
        pool = frequent[g].empty() ? &other[g] : &frequent[g];
      } else {
        pool = uniform01(rng) < 0.5 ? &frequent[g] : &other[g];
      }
      const int source = (*pool)[uniform_index(rng, pool->size())];
      const auto& cell = by_cell[static_cast<std::size_t>(draw_taste(static_cast<std::size_t>(source)))]
                                [static_cast<std::size_t>(q)];
      std::vector<int> open;
      for (int item : cell) {
        if (!taken.count(item)) open.push_back(item);
      }
      if (open.empty()) continue;
      const int item = open[uniform_index(rng, open.size())];
      const int day = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.horizon)));
      taken.insert(item);
      const auto su = static_cast<std::size_t>(source);
      if (!has_item(su, item)) purchases[su].push_back({item, day, draw_rating(su, item)});
      positives[g].push_back({item, day, source, frequent_mode});
    }
  }

  // emit raw records with 1-based original ids
  RawData& raw = corpus.raw;
  raw.items_source = "items.tsv";
  raw.groups_source = "groups.tsv";
  raw.user_items_source = "user_items.tsv";
  raw.group_items_source = "group_items.tsv";
  const bool is_explicit = cfg.feedback == FeedbackKind::Explicit;
  for (std::size_t i = 0; i < m; ++i) raw.items.push_back({static_cast<std::int64_t>(i + 1), price[i], 0});
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int u : groups[g]) {
      raw.memberships.push_back({static_cast<std::int64_t>(g + 1), static_cast<std::int64_t>(u + 1), 0});
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    auto list = purchases[u];
    std::sort(list.begin(), list.end(), [](const Purchase& a, const Purchase& b) { return a.item < b.item; });
    for (const auto& p : list) {
      raw.user_items.push_back({static_cast<std::int64_t>(u + 1), static_cast<std::int64_t>(p.item + 1),
                                is_explicit ? p.rating : 1.0, p.day, 0});
    }
  }
  raw.group_items.emplace();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto list = positives[g];
    std::sort(list.begin(), list.end(), [](const GroupPositive& a, const GroupPositive& b) { return a.item < b.item; });
    for (const auto& p : list) {
      double value = 1.0;
      if (is_explicit) {
        double sum = 0.0;
        int raters = 0;
        for (int u : groups[g]) {
          const auto su = static_cast<std::size_t>(u);
          if (cfg.rating_rule == GroupRatingRule::AllMembers) {
            sum += latent_rating(su, p.item);
            ++raters;
            continue;
          }
          for (const auto& pu : purchases[su]) {
            if (pu.item == p.item) {
              sum += pu.rating;
              ++raters;
            }
          }
        }
        value = sum / raters;
      }
      raw.group_items->push_back({static_cast<std::int64_t>(g + 1), static_cast<std::int64_t>(p.item + 1),
                                  value, p.day, 0});
      corpus.truth.push_back({static_cast<std::int64_t>(g + 1), static_cast<std::int64_t>(p.item + 1),
                              static_cast<std::int64_t>(p.source + 1), p.frequent_mode});
    }
  }
  return corpus;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  const auto& raw = corpus.raw;
  std::string items = "item_id\tprice\n";
  for (const auto& it : raw.items) {
    items += std::to_string(it.item_id) + "\t" + tsv::format_fixed(it.price, 2) + "\n";
  }
  std::string groups = "group_id\tuser_id\n";
  for (const auto& mrow : raw.memberships) {
    groups += std::to_string(mrow.group_id) + "\t" + std::to_string(mrow.user_id) + "\n";
  }
  auto interactions = [](const char* head, const std::vector<RawInteraction>& rows) {
    std::string out = std::string(head) + "\titem_id\tvalue\ttimestamp\n";
    for (const auto& r : rows) {
      out += std::to_string(r.row_id) + "\t" + std::to_string(r.item_id) + "\t" +
             tsv::format_double(r.value) + "\t" + std::to_string(*r.timestamp) + "\n";
    }
    return out;
  };
  std::string truth = "group_id\titem_id\tsource_user_id\tfrequent_mode\n";
  for (const auto& t : corpus.truth) {
    truth += std::to_string(t.group_id) + "\t" + std::to_string(t.item_id) + "\t" +
             std::to_string(t.source_user_id) + "\t" + (t.frequent_mode ? "1" : "0") + "\n";
  }
  tsv::write_file(dir / "items.tsv", items);
  tsv::write_file(dir / "groups.tsv", groups);
  tsv::write_file(dir / "user_items.tsv", interactions("user_id", raw.user_items));
  tsv::write_file(dir / "group_items.tsv", interactions("group_id", *raw.group_items));
  tsv::write_file(dir / "influence_truth.tsv", truth);
}

std::vector<InfluenceTruth> read_truth(const std::filesystem::path& path) {
  const auto table = tsv::read(path);
  std::vector<InfluenceTruth> out;
  for (const auto& row : table.rows) {
    out.push_back({tsv::parse_int(table, row, 0), tsv::parse_int(table, row, 1),
                   tsv::parse_int(table, row, 2), tsv::parse_int(table, row, 3) != 0});
  }
  return out;
}

}  // namespace pgrec
