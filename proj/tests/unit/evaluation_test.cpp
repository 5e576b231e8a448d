#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "pgrec/error.hpp"
#include "pgrec/evaluation.hpp"
#include "pgrec/rng.hpp"
#include "pgrec/synthetic.hpp"
#include "pgrec/tsv.hpp"
#include "test_util.hpp"

namespace pgrec {
namespace {

class FnScorer : public Scorer {
 public:
  explicit FnScorer(std::function<double(int, int)> fn) : fn_(std::move(fn)) {}
  double score_group(int group, int item) const override { return fn_(group, item); }

 private:
  std::function<double(int, int)> fn_;
};

// Deterministic pseudo-random score in [0, 1).
double hashed(int group, int item) {
  return static_cast<double>(mix_seed((static_cast<std::uint64_t>(group) << 32) ^ static_cast<std::uint64_t>(item)) >>
                             11) *
         0x1.0p-53;
}

const Dataset& corpus() {
  static const Dataset ds = [] {
    GenConfig gen;
    gen.group_events = 400;
    return build_dataset(generate_synthetic(gen, 4).raw, LoadConfig{});
  }();
  return ds;
}

TEST(Rank, MatchesSortOracle) {
  auto rng = make_rng(42, 99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 2 + uniform_index(rng, 20);
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<double> scores(n);
    for (auto& s : scores) s = static_cast<double>(uniform_index(rng, 4));  // plenty of ties
    const auto pos = uniform_index(rng, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : ids[a] < ids[b];
    });
    const auto expected = std::find(order.begin(), order.end(), pos) - order.begin() + 1;
    ASSERT_EQ(rank_of(ids, scores, pos), expected) << "trial " << trial;
  }
}

TEST(Rank, TiesFavourSmallerIds) {
  const std::vector<int> ids = {7, 3, 9};
  const std::vector<double> scores = {1.0, 1.0, 1.0};
  EXPECT_EQ(rank_of(ids, scores, 0), 2);
  EXPECT_EQ(rank_of(ids, scores, 1), 1);
  EXPECT_EQ(rank_of(ids, scores, 2), 3);
  EXPECT_THROW(rank_of(ids, scores, 3), UsageError);
  EXPECT_THROW(rank_of(ids, std::vector<double>{1.0}, 0), UsageError);
}

TEST(Metrics, HitAndNdcg) {
  EXPECT_EQ(hit_at(1, 1), 1.0);
  EXPECT_EQ(hit_at(2, 1), 0.0);
  EXPECT_EQ(hit_at(10, 10), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at(1, 5), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at(3, 5), 0.5);
  EXPECT_DOUBLE_EQ(ndcg_at(6, 5), 0.0);
  for (int r = 1; r < 20; ++r) {
    EXPECT_GT(ndcg_at(r, 20), ndcg_at(r + 1, 20));
    EXPECT_LE(ndcg_at(r, 20), hit_at(r, 20));
  }
}

TEST(Ranking, PerfectModelScoresOne) {
  const auto& ds = corpus();
  FnScorer perfect([&](int g, int i) { return ds.group_item_test.contains(g, i) ? 1.0 : 0.0; });
  EvalConfig cfg;
  const auto out = evaluate_ranking(perfect, ds, ds.group_item_test, cfg);
  EXPECT_EQ(out.report.n_test_cases, ds.group_item_test.size());
  for (int k : cfg.ks) {
    EXPECT_DOUBLE_EQ(out.report.hr_at.at(k), 1.0);
    EXPECT_DOUBLE_EQ(out.report.ndcg_at.at(k), 1.0);
  }
}

TEST(Ranking, RandomScorerNearChance) {
  const auto& ds = corpus();
  ASSERT_GT(ds.group_item_test.size(), 250u);
  FnScorer random(hashed);
  EvalConfig cfg;
  cfg.ks = {1, 10};
  const auto rep = evaluate_ranking(random, ds, ds.group_item_test, cfg).report;
  EXPECT_NEAR(rep.hr_at.at(1), 0.05, 0.03);
  EXPECT_NEAR(rep.hr_at.at(10), 0.5, 0.08);
}

TEST(Ranking, CandidatesExcludeKnownGroupItems) {
  const auto& ds = corpus();
  FnScorer random(hashed);
  const auto out = evaluate_ranking(random, ds, ds.group_item_test, EvalConfig{});
  for (const auto& r : out.results) {
    ASSERT_EQ(r.candidates.size(), 20u);
    EXPECT_EQ(r.candidates.front(), r.pos_item);
    std::vector<int> sorted = r.candidates;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    for (std::size_t j = 1; j < r.candidates.size(); ++j) {
      const int i = r.candidates[j];
      EXPECT_FALSE(ds.group_item.contains(r.group, i) || ds.group_item_valid.contains(r.group, i) ||
                   ds.group_item_test.contains(r.group, i));
    }
  }
}

TEST(Ranking, InvariantUnderMonotoneTransform) {
  const auto& ds = corpus();
  FnScorer base(hashed);
  FnScorer shifted([](int g, int i) { return 3.0 * std::exp(hashed(g, i)) + 1.0; });
  const auto a = evaluate_ranking(base, ds, ds.group_item_test, EvalConfig{});
  const auto b = evaluate_ranking(shifted, ds, ds.group_item_test, EvalConfig{});
  EXPECT_EQ(a.report.to_tsv(), b.report.to_tsv());
  for (std::size_t t = 0; t < a.results.size(); ++t) {
    EXPECT_EQ(a.results[t].rank_of_positive, b.results[t].rank_of_positive);
  }
}

TEST(Ranking, ThreadCountDoesNotChangeResults) {
  const auto& ds = corpus();
  FnScorer random(hashed);
  EvalConfig one;
  EvalConfig four;
  four.threads = 4;
  const auto a = evaluate_ranking(random, ds, ds.group_item_test, one);
  const auto b = evaluate_ranking(random, ds, ds.group_item_test, four);
  EXPECT_EQ(a.report.to_tsv(), b.report.to_tsv());
  EXPECT_EQ(format_rankings(a.results, ds), format_rankings(b.results, ds));
  EvalConfig other = one;
  other.seed = 2;
  EXPECT_NE(format_rankings(evaluate_ranking(random, ds, ds.group_item_test, other).results, ds),
            format_rankings(a.results, ds));
}

TEST(Ranking, RejectsBadCutoffs) {
  const auto& ds = corpus();
  FnScorer random(hashed);
  EvalConfig cfg;
  cfg.ks = {};
  EXPECT_THROW(evaluate_ranking(random, ds, ds.group_item_test, cfg), UsageError);
  cfg.ks = {0};
  EXPECT_THROW(evaluate_ranking(random, ds, ds.group_item_test, cfg), UsageError);
}

TEST(Ranking, RankingsTableUsesOriginalIds) {
  const auto ds = build_dataset(
      testing::toy_raw({1, 2, 3}, {{50, {7, 8}}}, {{7, 1}, {8, 2}, {7, 3}}, {{50, 3}}), testing::no_split());
  Dataset with_test = ds;
  with_test.group_item_test = with_test.group_item;
  with_test.group_item = InteractionSet{};
  FnScorer flat([](int, int) { return 0.0; });
  EvalConfig cfg;
  cfg.negatives = 2;
  const auto out = evaluate_ranking(flat, with_test, with_test.group_item_test, cfg);
  ASSERT_EQ(out.results.size(), 1u);
  // item 3 has the largest dense index, so it loses every tie
  EXPECT_EQ(out.results[0].rank_of_positive, 3);
  const auto text = format_rankings(out.results, with_test);
  EXPECT_EQ(text.substr(0, text.find('\n')), "group_id\tpos_item_id\trank_of_positive\tcandidate_item_id\tscore");
  EXPECT_NE(text.find("\n50\t3\t3\t3\t0\n"), std::string::npos);
}

TEST(Regression, WorkedExample) {
  const InteractionSet test({{0, 0, 2.0, 0}, {0, 1, 4.0, 0}});
  FnScorer pred([](int, int i) { return i == 0 ? 1.0 : 5.0; });
  const auto rep = evaluate_regression(pred, test);
  EXPECT_DOUBLE_EQ(*rep.mse, 1.0);
  EXPECT_DOUBLE_EQ(*rep.mape, 0.375);
  EXPECT_EQ(rep.n_test_cases, 2u);
  EXPECT_TRUE(rep.hr_at.empty());
  EXPECT_EQ(evaluate_regression(pred, test, 3).to_tsv(), rep.to_tsv());
}

TEST(Regression, ZeroTargetIsAnError) {
  const InteractionSet test({{0, 0, 2.0, 0}, {1, 4, 0.0, 0}});
  FnScorer pred([](int, int) { return 1.0; });
  try {
    evaluate_regression(pred, test);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(1,4)"), std::string::npos);
  }
}

TEST(FullRanking, OrdersByScoreThenId) {
  const std::vector<double> scores = {0.2, 0.9, 0.2, 0.5};
  EXPECT_EQ(order_by_score(scores), (std::vector<int>{1, 3, 0, 2}));
  const auto& ds = corpus();
  PopularityModel pop(ds);
  std::vector<int> all(static_cast<std::size_t>(ds.n_items()));
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(rank_all_items(pop, ds, 0), popularity_rank(pop.counts(), all));
}

TEST(Report, TsvRoundTrip) {
  testing::TempDir dir;
  EvalReport rep;
  rep.hr_at = {{1, 0.25}, {10, 0.75}};
  rep.ndcg_at = {{1, 0.25}, {10, 0.4}};
  rep.mse = 1.5;
  rep.n_test_cases = 12;
  EXPECT_EQ(rep.to_tsv(), "hr@1\thr@10\tndcg@1\tndcg@10\tmse\tn_test_cases\n0.25\t0.75\t0.25\t0.4\t1.5\t12\n");
  tsv::write_file(dir / "r.tsv", rep.to_tsv());
  const auto back = EvalReport::from_tsv(dir / "r.tsv");
  EXPECT_EQ(back.to_tsv(), rep.to_tsv());
  tsv::write_file(dir / "bad.tsv", "hr@x\n1\n");
  EXPECT_THROW(EvalReport::from_tsv(dir / "bad.tsv"), DataError);
}

TEST(ParallelFor, VisitsEveryIndexOnceAndRethrows) {
  for (int threads : {1, 3, 8}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  EXPECT_THROW(parallel_for(10, 4,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

}  // namespace
}  // namespace pgrec
