#include "pgrec/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

int rank_of(std::span<const int> candidates, std::span<const double> scores, std::size_t pos_index) {
  if (candidates.size() != scores.size() || pos_index >= candidates.size()) {
    throw UsageError("rank_of: candidate and score lists disagree");
  }
  const double s = scores[pos_index];
  const int id = candidates[pos_index];
  int rank = 1;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (j == pos_index) continue;
    if (scores[j] > s || (scores[j] == s && candidates[j] < id)) ++rank;
  }
  return rank;
}

double hit_at(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at(int rank, int k) { return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0; }

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t count = std::min(workers, n);
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += count) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

RankingOutcome evaluate_ranking(const Scorer& model, const Dataset& dataset, const InteractionSet& test,
                                const EvalConfig& config) {
  if (config.ks.empty()) throw UsageError("at least one cutoff K is required");
  for (int k : config.ks) {
    if (k < 1) throw UsageError("cutoffs must be positive");
  }
  const InteractionSet* known[] = {&dataset.group_item, &dataset.group_item_valid, &dataset.group_item_test};
  const NegativeSampler sampler(dataset.n_items(), known);
  const auto samples = sample_negatives(test, sampler, config.negatives, config.seed, streams::kEvalNegatives);

  RankingOutcome out;
  out.results.resize(samples.size());
  parallel_for(samples.size(), config.threads, [&](std::size_t idx) {
    const auto& s = samples[idx];
    RankedResult r;
    r.group = s.row;
    r.pos_item = s.pos_item;
    r.candidates.reserve(s.neg_items.size() + 1);
    r.candidates.push_back(s.pos_item);
    r.candidates.insert(r.candidates.end(), s.neg_items.begin(), s.neg_items.end());
    r.scores.reserve(r.candidates.size());
    for (int item : r.candidates) r.scores.push_back(model.score_group(s.row, item));
    r.rank_of_positive = rank_of(r.candidates, r.scores, 0);
    if (config.keep_weights && model.has_member_weights()) r.member_weights = model.member_weights(s.row, s.pos_item);
    out.results[idx] = std::move(r);
  });

  auto& rep = out.report;
  rep.n_test_cases = out.results.size();
  for (int k : config.ks) {
    double hr = 0.0;
    double ndcg = 0.0;
    for (const auto& r : out.results) {
      hr += hit_at(r.rank_of_positive, k);
      ndcg += ndcg_at(r.rank_of_positive, k);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, out.results.size()));
    rep.hr_at[k] = out.results.empty() ? 0.0 : hr / n;
    rep.ndcg_at[k] = out.results.empty() ? 0.0 : ndcg / n;
  }
  return out;
}

EvalReport evaluate_regression(const Scorer& model, const InteractionSet& test, int threads) {
  const auto entries = test.entries();
  std::vector<std::string> bad;
  for (const auto& e : entries) {
    if (!(e.value > 0.0)) bad.push_back("(" + std::to_string(e.row) + "," + std::to_string(e.col) + ")");
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : " ") + b;
    throw DataError("MAPE undefined for zero-valued test rows: " + list);
  }
  std::vector<double> pred(entries.size());
  parallel_for(entries.size(), threads,
               [&](std::size_t i) { pred[i] = model.score_group(entries[i].row, entries[i].col); });
  EvalReport rep;
  rep.n_test_cases = entries.size();
  double se = 0.0;
  double ape = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double err = entries[i].value - pred[i];
    se += err * err;
    ape += std::abs(err) / entries[i].value;
  }
  const double n = entries.empty() ? 1.0 : static_cast<double>(entries.size());
  rep.mse = se / n;
  rep.mape = ape / n;
  return rep;
}

std::vector<int> order_by_score(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

std::vector<int> rank_all_items(const Scorer& model, const Dataset& dataset, int group) {
  std::vector<double> scores(static_cast<std::size_t>(dataset.n_items()));
  for (int i = 0; i < dataset.n_items(); ++i) scores[static_cast<std::size_t>(i)] = model.score_group(group, i);
  return order_by_score(scores);
}

// ---------------------------------------------------------------- report I/O

std::vector<std::pair<std::string, double>> EvalReport::columns() const {
  std::vector<std::pair<std::string, double>> cols;
  for (const auto& [k, v] : hr_at) cols.emplace_back("hr@" + std::to_string(k), v);
  for (const auto& [k, v] : ndcg_at) cols.emplace_back("ndcg@" + std::to_string(k), v);
  if (mse) cols.emplace_back("mse", *mse);
  if (mape) cols.emplace_back("mape", *mape);
  cols.emplace_back("n_test_cases", static_cast<double>(n_test_cases));
  return cols;
}

std::string EvalReport::to_tsv() const {
  std::string head;
  std::string vals;
  for (const auto& [name, v] : columns()) {
    head += (head.empty() ? "" : "\t") + name;
    vals += (vals.empty() ? "" : "\t") + tsv::format_double(v);
  }
  return head + "\n" + vals + "\n";
}

std::string EvalReport::summary() const {
  std::string out = "test cases: " + std::to_string(n_test_cases) + "\n";
  for (const auto& [name, v] : columns()) {
    if (name == "n_test_cases") continue;
    out += "  " + name + std::string(name.size() < 10 ? 10 - name.size() : 1, ' ') + tsv::format_fixed(v, 4) + "\n";
  }
  return out;
}

EvalReport EvalReport::from_tsv(const std::filesystem::path& path) {
  const auto table = tsv::read(path);
  if (table.rows.size() != 1) throw DataError(path.string() + ": expected exactly one report row");
  const auto& row = table.rows.front();
  if (row.fields.size() != table.header.size()) {
    throw DataError(path.string() + ":" + std::to_string(row.line) + ": column count mismatch");
  }
  EvalReport rep;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& name = table.header[c];
    const double v = tsv::parse_double(table, row, c);
    auto cutoff = [&](std::size_t prefix) {
      const auto digits = name.substr(prefix);
      int k = 0;
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
      if (ec != std::errc() || p != digits.data() + digits.size()) {
        throw DataError(path.string() + ": bad metric column '" + name + "'");
      }
      return k;
    };
    if (name.starts_with("hr@")) {
      rep.hr_at[cutoff(3)] = v;
    } else if (name.starts_with("ndcg@")) {
      rep.ndcg_at[cutoff(5)] = v;
    } else if (name == "mse") {
      rep.mse = v;
    } else if (name == "mape") {
      rep.mape = v;
    } else if (name == "n_test_cases") {
      rep.n_test_cases = static_cast<std::size_t>(v);
    } else {
      throw DataError(path.string() + ": unknown metric column '" + name + "'");
    }
  }
  return rep;
}

std::string format_rankings(std::span<const RankedResult> results, const Dataset& dataset) {
  std::string out = "group_id\tpos_item_id\trank_of_positive\tcandidate_item_id\tscore\n";
  for (const auto& r : results) {
    const auto prefix = std::to_string(dataset.group_ids.original(r.group)) + "\t" +
                        std::to_string(dataset.item_ids.original(r.pos_item)) + "\t" +
                        std::to_string(r.rank_of_positive) + "\t";
    for (std::size_t j = 0; j < r.candidates.size(); ++j) {
      out += prefix + std::to_string(dataset.item_ids.original(r.candidates[j])) + "\t" +
             tsv::format_double(r.scores[j]) + "\n";
    }
  }
  return out;
}

}  // namespace pgrec
