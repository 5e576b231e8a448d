#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pgrec/nn.hpp"

namespace pgrec {

struct Dataset;

enum class AggregatorKind {
  Pgusa,             // price-guided adaptive sigmoid weights
  Vanilla,           // learned softmax attention
  PgusaPlusVanilla,  // additive composition of the two
  Average,           // uniform 1/|group| weights (ablation)
};

std::string_view to_string(AggregatorKind kind);
AggregatorKind parse_aggregator(std::string_view s);

struct PgusaConfig {
  double beta = 5.0;
  void validate() const;  // beta > 0
};

// beta / (1 + exp(-alpha * freq)).
double pgusa_weight(double alpha, double freq, double beta);

// Item-conditioned group embedding plus the per-member weights that produced it.
struct Aggregate {
  std::vector<double> embedding;
  std::vector<double> weights;
};

using MemberEmbeddings = std::span<const std::span<const double>>;

// g = sum_t pgusa_weight(alpha, freq_t, beta) u_t. Weights are not normalized.
Aggregate aggregate_pgusa(MemberEmbeddings members, std::span<const double> freqs, double alpha,
                          double beta);
// g = mean_t u_t.
Aggregate aggregate_average(MemberEmbeddings members);

// score_t = v . relu(W [u_t; i] + c), weights = softmax(score), g = sum_t weights_t u_t.
// Parameters: <prefix>.w (d x 2d), <prefix>.c (1 x d), <prefix>.v (1 x d).
class VanillaAttention {
 public:
  struct Cache {
    std::vector<std::vector<double>> pre;     // W [u_t; i] + c
    std::vector<std::vector<double>> hidden;  // relu(pre)
    std::vector<double> weights;
  };
  struct InputGrads {
    std::vector<std::vector<double>> members;
    std::vector<double> item;
  };

  VanillaAttention() = default;
  VanillaAttention(nn::ParamStore& store, const std::string& prefix, int d);
  static void add_params(nn::ParamStore& store, const std::string& prefix, int d, Rng& rng);

  Aggregate forward(MemberEmbeddings members, std::span<const double> item, Cache* cache = nullptr) const;
  // Accumulates attention parameter gradients; returns gradients for members and item.
  InputGrads backward(const Cache& cache, MemberEmbeddings members, std::span<const double> item,
                      std::span<const double> upstream);

 private:
  int d_ = 0;
  nn::Parameter* w_ = nullptr;
  nn::Parameter* c_ = nullptr;
  nn::Parameter* v_ = nullptr;
};

// Two-step score aggregation used by the NCF-AVG / NCF-EXP baselines.
double aggregate_scores_avg(std::span<const double> scores);
// sum freq_t score_t / sum freq_t; falls back to the mean when all freqs are zero.
double aggregate_scores_exp(std::span<const double> scores, std::span<const double> freqs);

// Elementwise sum of same-length embeddings.
std::vector<double> compose_additive(std::span<const std::vector<double>> embeddings);

struct MemberWeightRecord {
  int group = 0;
  int item = 0;
  std::vector<std::pair<int, double>> weights;  // (dense user index, weight)
};

// `group_id<TAB>item_id<TAB>user_id<TAB>weight` with original ids.
std::string format_member_weights(std::span<const MemberWeightRecord> records, const Dataset& dataset);

}  // namespace pgrec
