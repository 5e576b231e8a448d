#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "pgrec/analysis.hpp"
#include "pgrec/dataset.hpp"
#include "pgrec/error.hpp"
#include "pgrec/synthetic.hpp"
#include "pgrec/tsv.hpp"
#include "test_util.hpp"

using namespace pgrec;
using pgrec::testing::TempDir;
using pgrec::testing::toy_raw;

namespace {

Dataset toy_dataset() {
  // 3 users, 2 items, 1 group
  auto raw = toy_raw({10.0, 100.0}, {{1, {1, 2, 3}}}, {{1, 1}, {2, 1}, {3, 2}}, {{1, 1}});
  return build_dataset(raw, pgrec::testing::no_split());
}

}  // namespace

TEST(NormalizePrice, Endpoints) {
  const std::vector<double> p{10.0, 100.0};
  const auto a = normalize_price(p);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 0.01);
}

TEST(NormalizePrice, AllEqualMapsToOne) {
  const std::vector<double> p{7.0, 7.0, 7.0};
  for (double a : normalize_price(p)) EXPECT_EQ(a, 1.0);
}

TEST(NormalizePrice, MidpointMapsToMidpoint) {
  const std::vector<double> p{10.0, 55.0, 100.0};
  const auto a = normalize_price(p);
  EXPECT_NEAR(a[0], 1.0, 1e-12);
  EXPECT_NEAR(a[1], 0.505, 1e-12);
  EXPECT_NEAR(a[2], 0.01, 1e-12);
}

TEST(NormalizePrice, RejectsBadInput) {
  EXPECT_THROW(normalize_price(std::vector<double>{}), DataError);
  EXPECT_THROW(normalize_price(std::vector<double>{3.0, 0.0}), DataError);
  EXPECT_THROW(normalize_price(std::vector<double>{-1.0}), DataError);
}

TEST(NormalizePrice, OrderReversingAndScaleInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(12);
    for (auto& v : p) v = 1.0 + 500.0 * uniform01(rng);
    const auto a = normalize_price(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(a[i], 0.01 - 1e-15);
      EXPECT_LE(a[i], 1.0 + 1e-15);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[i] > p[j]) EXPECT_LE(a[i], a[j]);
      }
    }
    std::vector<double> scaled(p);
    for (auto& v : scaled) v *= 3.7;
    const auto b = normalize_price(scaled);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(NormalizeFrequency, Examples) {
  EXPECT_EQ(normalize_frequency(std::vector<int>{0, 10}), (std::vector<double>{0.0, 5.0}));
  EXPECT_EQ(normalize_frequency(std::vector<int>{4, 4}), (std::vector<double>{2.5, 2.5}));
  EXPECT_EQ(normalize_frequency(std::vector<int>{0, 5, 10}), (std::vector<double>{0.0, 2.5, 5.0}));
  EXPECT_THROW(normalize_frequency(std::vector<int>{}), DataError);
}

TEST(NormalizeFrequency, OrderPreserving) {
  Rng rng(3);
  std::vector<int> c(40);
  for (auto& v : c) v = static_cast<int>(uniform_index(rng, 30));
  const auto f = normalize_frequency(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_GE(f[i], 0.0);
    EXPECT_LE(f[i], 5.0);
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (c[i] > c[j]) EXPECT_GE(f[i], f[j]);
    }
  }
}

TEST(LoadDataset, ToyShapesAndFeatures) {
  const auto ds = toy_dataset();
  EXPECT_EQ(ds.n_users(), 3);
  EXPECT_EQ(ds.n_items(), 2);
  EXPECT_EQ(ds.n_groups(), 1);
  EXPECT_DOUBLE_EQ(ds.items[0].alpha, 1.0);
  EXPECT_DOUBLE_EQ(ds.items[1].alpha, 0.01);
  EXPECT_EQ(ds.feedback_kind, FeedbackKind::Implicit);
  for (const auto& u : ds.users) EXPECT_EQ(u.purchase_count, 1);
  for (const auto& u : ds.users) EXPECT_EQ(u.freq, 2.5);
  EXPECT_EQ(ds.group_item.size(), 1u);
}

TEST(LoadDataset, ReadsFilesAndRemapsIds) {
  TempDir dir;
  tsv::write_file(dir / "items.tsv", "item_id\tprice\n30\t10\n20\t100\n");
  tsv::write_file(dir / "groups.tsv", "group_id\tuser_id\n9\t7\n9\t5\n9\t6\n");
  tsv::write_file(dir / "user_items.tsv", "user_id\titem_id\tvalue\n5\t30\t1\n6\t30\t1\n7\t20\t1\n");
  tsv::write_file(dir / "group_items.tsv", "group_id\titem_id\tvalue\n9\t30\t1\n");
  const auto ds = load_dataset(DataPaths::in_directory(dir.path()), pgrec::testing::no_split());
  EXPECT_EQ(ds.n_users(), 3);
  EXPECT_EQ(ds.n_items(), 2);
  // dense index = rank of original id
  EXPECT_EQ(ds.item_ids.dense(20), 0);
  EXPECT_EQ(ds.item_ids.dense(30), 1);
  EXPECT_DOUBLE_EQ(ds.items[1].alpha, 1.0);
  EXPECT_EQ(ds.groups[0].members, (std::vector<int>{0, 1, 2}));
  EXPECT_TRUE(ds.group_item.contains(0, 1));

  write_id_maps(ds, dir / "maps");
  EXPECT_EQ(IdMap::from_tsv(dir / "maps" / "items.idmap.tsv"), ds.item_ids);
}

TEST(LoadDataset, DuplicateUserItemNamesLine) {
  TempDir dir;
  tsv::write_file(dir / "items.tsv", "item_id\tprice\n1\t10\n2\t100\n");
  tsv::write_file(dir / "groups.tsv", "group_id\tuser_id\n1\t1\n1\t2\n");
  tsv::write_file(dir / "user_items.tsv", "user_id\titem_id\tvalue\n1\t1\t1\n2\t1\t1\n1\t1\t1\n");
  try {
    load_dataset(DataPaths::in_directory(dir.path()), pgrec::testing::no_split());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("user_items.tsv:4"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, ErrorsNameTheProblem) {
  auto dangling = toy_raw({10.0, 100.0}, {{1, {1, 2}}}, {{1, 1}, {2, 9}}, {});
  try {
    build_dataset(dangling, pgrec::testing::no_split());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown item id 9"), std::string::npos) << e.what();
  }
  auto bad_price = toy_raw({10.0, 0.0}, {{1, {1}}}, {{1, 1}}, {});
  EXPECT_THROW(build_dataset(bad_price, pgrec::testing::no_split()), DataError);

  TempDir dir;
  tsv::write_file(dir / "items.tsv", "item_id\tprice\n1\tten\n");
  tsv::write_file(dir / "groups.tsv", "group_id\tuser_id\n1\t1\n");
  tsv::write_file(dir / "user_items.tsv", "user_id\titem_id\tvalue\n1\t1\t1\n");
  try {
    load_dataset(DataPaths::in_directory(dir.path()), pgrec::testing::no_split());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("items.tsv:2"), std::string::npos) << e.what();
  }
}

TEST(LoadDataset, ImplicitValuesMustBeOne) {
  auto raw = toy_raw({10.0, 100.0}, {{1, {1, 2}}}, {{1, 1}, {2, 2}}, {});
  raw.user_items[0].value = 0.0;
  LoadConfig cfg = pgrec::testing::no_split();
  cfg.feedback_kind = FeedbackKind::Implicit;
  EXPECT_THROW(build_dataset(raw, cfg), DataError);
  cfg.feedback_kind = FeedbackKind::Explicit;
  EXPECT_THROW(build_dataset(raw, cfg), DataError);  // explicit values must be > 0
}

TEST(DeriveGroupInteractions, MinBuyersThreshold) {
  std::vector<GroupDef> groups{{0, {0, 1, 2}}};
  InteractionSet x({{0, 0}, {1, 0}, {2, 1}});
  EXPECT_TRUE(derive_group_interactions(groups, x, 2).contains(0, 0));
  EXPECT_FALSE(derive_group_interactions(groups, x, 2).contains(0, 1));
  EXPECT_FALSE(derive_group_interactions(groups, x, 3).contains(0, 0));
  EXPECT_TRUE(derive_group_interactions(groups, x, 1).contains(0, 1));
}

TEST(DeriveGroupInteractions, MonotoneInMinBuyers) {
  Rng rng(5);
  std::vector<GroupDef> groups;
  for (int g = 0; g < 4; ++g) {
    GroupDef def{g, {}};
    for (int u = 0; u < 6; ++u) def.members.push_back(g * 6 + u);
    groups.push_back(def);
  }
  std::vector<Interaction> entries;
  for (int u = 0; u < 24; ++u) {
    for (int i = 0; i < 15; ++i) {
      if (uniform01(rng) < 0.4) entries.push_back({u, i});
    }
  }
  InteractionSet x(entries);
  for (int k = 1; k < 7; ++k) {
    const auto looser = derive_group_interactions(groups, x, k);
    const auto stricter = derive_group_interactions(groups, x, k + 1);
    for (const auto& e : stricter.entries()) EXPECT_TRUE(looser.contains(e.row, e.col));
    EXPECT_LE(stricter.size(), looser.size());
  }
}

TEST(InteractionSet, SortedAndRejectsDuplicates) {
  InteractionSet s({{2, 1}, {0, 3}, {0, 1}});
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.entries()[0].row, 0);
  EXPECT_EQ(s.entries()[0].col, 1);
  EXPECT_EQ(s.entries()[2].row, 2);
  EXPECT_EQ(s.row(0).size(), 2u);
  EXPECT_THROW(InteractionSet({{1, 1}, {1, 1}}), DataError);
}

TEST(NegativeSampler, ExcludesKnownAndIsDeterministic) {
  InteractionSet pos({{0, 0}, {0, 1}, {1, 4}});
  InteractionSet other({{0, 2}});
  const InteractionSet* known[] = {&pos, &other};
  NegativeSampler sampler(30, known);
  EXPECT_EQ(sampler.eligible_count(0), 27);
  const auto a = sample_negatives(pos, sampler, 19, 42, streams::kEvalNegatives);
  const auto b = sample_negatives(pos, sampler, 19, 42, streams::kEvalNegatives);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 3u);
  for (const auto& s : a) {
    EXPECT_EQ(s.neg_items.size(), 19u);  // 20 candidates with the positive
    std::set<int> distinct(s.neg_items.begin(), s.neg_items.end());
    EXPECT_EQ(distinct.size(), 19u);
    for (int i : s.neg_items) {
      EXPECT_FALSE(pos.contains(s.row, i));
      EXPECT_FALSE(other.contains(s.row, i));
    }
  }
  const auto one = sample_negatives(pos, sampler, 1, 42, streams::kTrainNegatives);
  for (const auto& s : one) EXPECT_EQ(s.neg_items.size(), 1u);
}

TEST(NegativeSampler, TooFewEligibleNamesRow) {
  InteractionSet pos({{3, 0}, {3, 1}});
  const InteractionSet* known[] = {&pos};
  NegativeSampler sampler(4, known);
  try {
    sample_negatives(pos, sampler, 3, 1, streams::kEvalNegatives);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
}

TEST(Split, RandomSplitIsSeededAndDisjoint) {
  std::vector<std::pair<std::int64_t, std::int64_t>> gi;
  for (int i = 1; i <= 40; ++i) gi.push_back({1, i});
  std::vector<double> prices(40, 5.0);
  auto raw = toy_raw(prices, {{1, {1, 2}}}, {{1, 1}, {2, 2}}, gi);
  LoadConfig cfg;
  cfg.test_fraction = 0.25;
  cfg.validation_fraction = 0.1;
  const auto a = build_dataset(raw, cfg);
  const auto b = build_dataset(raw, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.group_item_test.size(), 10u);
  EXPECT_EQ(a.group_item_valid.size(), 3u);
  EXPECT_EQ(a.group_item.size(), 27u);
  for (const auto& e : a.group_item_test.entries()) {
    EXPECT_FALSE(a.group_item.contains(e.row, e.col));
    EXPECT_FALSE(a.group_item_valid.contains(e.row, e.col));
  }
  cfg.seed = 2;
  EXPECT_NE(build_dataset(raw, cfg).hash(), a.hash());
}

TEST(Split, TimestampCutoffAndTrainingOnlyFrequency) {
  auto raw = toy_raw({10.0, 20.0, 30.0}, {{1, {1, 2}}}, {{1, 1}, {1, 2}, {2, 3}}, {{1, 1}, {1, 3}});
  raw.user_items[0].timestamp = 1;
  raw.user_items[1].timestamp = 9;  // after cutoff
  raw.user_items[2].timestamp = 2;
  (*raw.group_items)[0].timestamp = 1;
  (*raw.group_items)[1].timestamp = 9;
  LoadConfig cfg = pgrec::testing::no_split();
  cfg.split_cutoff = 5;
  const auto ds = build_dataset(raw, cfg);
  EXPECT_EQ(ds.user_item.size(), 2u);
  EXPECT_EQ(ds.user_item_test.size(), 1u);
  EXPECT_EQ(ds.group_item_test.size(), 1u);
  EXPECT_EQ(ds.users[0].purchase_count, 1);  // the day-9 purchase is test data
}

TEST(Synthetic, DeterministicAndValid) {
  GenConfig cfg;
  cfg.n_users = 120;
  cfg.n_items = 80;
  cfg.n_groups = 4;
  cfg.group_events = 40;
  const auto a = generate_synthetic(cfg, 9);
  const auto b = generate_synthetic(cfg, 9);
  TempDir d1, d2;
  write_corpus(a, d1.path());
  write_corpus(b, d2.path());
  for (const char* f : {"items.tsv", "groups.tsv", "user_items.tsv", "group_items.tsv", "influence_truth.tsv"}) {
    EXPECT_EQ(tsv::read_file(d1 / f), tsv::read_file(d2 / f)) << f;
  }
  const auto ds = load_dataset(DataPaths::in_directory(d1.path()), LoadConfig{});
  EXPECT_EQ(ds.n_users(), 120);
  EXPECT_EQ(ds.n_items(), 80);
  EXPECT_EQ(ds.n_groups(), 4);
  EXPECT_EQ(ds, build_dataset(a.raw, LoadConfig{}));
  EXPECT_EQ(read_truth(d1 / "influence_truth.tsv"), a.truth);
  EXPECT_NE(generate_synthetic(cfg, 10).raw.user_items.size(), 0u);
}

TEST(Synthetic, InfeasibleConfigRejected) {
  GenConfig cfg;
  cfg.n_users = 10;
  cfg.group_size = 11;
  EXPECT_THROW(generate_synthetic(cfg, 1), UsageError);
  cfg.group_size = 0;
  cfg.rho = 1.5;
  EXPECT_THROW(generate_synthetic(cfg, 1), UsageError);
}

namespace {

// Cheapest-decile item indices (0-based) by generator price rank.
std::set<std::int64_t> cheapest_decile(const RawData& raw) {
  std::vector<std::size_t> order(raw.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw.items[a].price < raw.items[b].price; });
  std::set<std::int64_t> out;
  for (std::size_t r = 0; r < order.size() / 10; ++r) out.insert(raw.items[order[r]].item_id);
  return out;
}

}  // namespace

TEST(Synthetic, FullStrengthPlantsFrequentSourcesOnCheapItems) {
  GenConfig cfg;
  cfg.rho = 1.0;
  const auto corpus = generate_synthetic(cfg, 3);
  const auto cheap = cheapest_decile(corpus.raw);
  int seen = 0;
  for (const auto& t : corpus.truth) {
    if (!cheap.count(t.item_id)) continue;
    ++seen;
    EXPECT_TRUE(t.frequent_mode) << t.group_id << " " << t.item_id;
  }
  EXPECT_GT(seen, 20);
}

TEST(Synthetic, ZeroStrengthLeavesCheapTailAtChance) {
  GenConfig cfg;
  cfg.rho = 0.0;
  const auto corpus = generate_synthetic(cfg, 3);
  LoadConfig load;
  load.split_cutoff = static_cast<std::int64_t>(cfg.horizon * (1.0 - cfg.test_fraction));
  const auto ds = build_dataset(corpus.raw, load);
  const auto flags = label_frequent_buyers(ds);
  const auto cheap = cheapest_decile(corpus.raw);
  int freq = 0, other = 0;
  for (const auto& t : corpus.truth) {
    EXPECT_FALSE(t.frequent_mode);
    if (!cheap.count(t.item_id)) continue;
    const int g = ds.group_ids.dense(t.group_id);
    const int u = ds.user_ids.dense(t.source_user_id);
    const auto& members = ds.groups[static_cast<std::size_t>(g)].members;
    const auto pos = std::find(members.begin(), members.end(), u) - members.begin();
    (flags[static_cast<std::size_t>(g)][static_cast<std::size_t>(pos)] ? freq : other)++;
  }
  EXPECT_GT(freq + other, 20);
  EXPECT_FALSE(chi_square_test(freq, other).rejected) << freq << " vs " << other;
}

TEST(Synthetic, SourceIsAGroupMember) {
  GenConfig cfg;
  cfg.group_size = 6;
  cfg.group_events = 30;
  const auto corpus = generate_synthetic(cfg, 12);
  std::map<std::int64_t, std::set<std::int64_t>> members;
  for (const auto& m : corpus.raw.memberships) members[m.group_id].insert(m.user_id);
  for (const auto& g : members) EXPECT_EQ(g.second.size(), 6u);
  for (const auto& t : corpus.truth) EXPECT_TRUE(members[t.group_id].count(t.source_user_id));
}

TEST(Synthetic, ExplicitRatingsArePositive) {
  GenConfig cfg;
  cfg.n_users = 60;
  cfg.n_items = 50;
  cfg.n_groups = 3;
  cfg.group_events = 20;
  cfg.feedback = FeedbackKind::Explicit;
  const auto corpus = generate_synthetic(cfg, 4);
  const auto ds = build_dataset(corpus.raw, LoadConfig{});
  EXPECT_EQ(ds.feedback_kind, FeedbackKind::Explicit);
  for (const auto& e : ds.group_item.entries()) {
    EXPECT_GE(e.value, 1.0);
    EXPECT_LE(e.value, 5.0);
  }
}
