#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgrec/dataset.hpp"
#include "pgrec/predictors.hpp"

namespace pgrec {

struct RankedResult {
  int group = 0;
  int pos_item = 0;
  std::vector<int> candidates;  // positive first, then sampled negatives
  std::vector<double> scores;
  int rank_of_positive = 0;     // 1-based
  std::vector<double> member_weights;  // filled only when requested and supported
};

struct EvalReport {
  std::map<int, double> hr_at;
  std::map<int, double> ndcg_at;
  std::optional<double> mse;
  std::optional<double> mape;
  std::size_t n_test_cases = 0;

  // One header row and one value row; columns hr@K..., ndcg@K..., mse, mape, n_test_cases.
  std::string to_tsv() const;
  std::string summary() const;
  static EvalReport from_tsv(const std::filesystem::path& path);
  // Column name -> value, in TSV column order.
  std::vector<std::pair<std::string, double>> columns() const;
};

struct EvalConfig {
  std::vector<int> ks{1, 5, 10};
  int negatives = 19;
  std::uint64_t seed = 1;
  int threads = 1;
  bool keep_weights = false;
};

// 1 + number of candidates scored above the positive, where equal scores with a
// smaller item id also count as above.
int rank_of(std::span<const int> candidates, std::span<const double> scores, std::size_t pos_index);
double hit_at(int rank, int k);
double ndcg_at(int rank, int k);  // 1 / log2(rank + 1) when rank <= k

struct RankingOutcome {
  EvalReport report;
  std::vector<RankedResult> results;  // test-set order
};

// Sampled-negatives protocol over (group, item) positives in `test`. Negatives
// exclude every known group interaction (train, validation and test).
RankingOutcome evaluate_ranking(const Scorer& model, const Dataset& dataset, const InteractionSet& test,
                                const EvalConfig& config);

// Explicit feedback: MSE and MAPE over `test` values. MAPE requires y > 0.
EvalReport evaluate_regression(const Scorer& model, const InteractionSet& test, int threads = 1);

// Every item by descending score, ties by ascending id.
std::vector<int> rank_all_items(const Scorer& model, const Dataset& dataset, int group);
std::vector<int> order_by_score(std::span<const double> scores);

// `group_id item_id rank score...` per candidate, original ids.
std::string format_rankings(std::span<const RankedResult> results, const Dataset& dataset);

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace pgrec
