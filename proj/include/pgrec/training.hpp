#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgrec/evaluation.hpp"
#include "pgrec/predictors.hpp"

namespace pgrec {

enum class LossKind { PairwiseRegression, MeanSquaredError, BinaryCrossEntropy };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view s);  // pairwise | mse | bce

struct PairLoss {
  double loss = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

struct PointLoss {
  double loss = 0.0;
  double grad = 0.0;
};

// (pos - neg - 1)^2
PairLoss pairwise_regression_loss(double pos, double neg);
// (y - y_hat)^2, gradient with respect to y_hat.
PointLoss mse_loss(double y, double y_hat);
// Cross-entropy of probability p (clamped to [1e-12, 1 - 1e-12]); gradient with respect to the logit.
PointLoss bce_loss(double label, double p);

inline constexpr double kBceClamp = 1e-12;

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean over every sample of the epoch
  double group_loss = 0.0;
  double user_loss = 0.0;
  double valid_loss = 0.0;
  double valid_hr10 = 0.0;
  double seconds = 0.0;     // cumulative wall clock
};

struct TrainConfig {
  ModelKind model = ModelKind::Pgusa;
  std::optional<AggregatorKind> aggregator;  // model default when unset
  int d = 8;
  int batch_size = 256;
  std::optional<double> learning_rate;  // 1e-4 implicit, 1e-3 explicit when unset
  double beta = 5.0;
  int epochs = 30;
  int patience = 5;  // epochs without validation improvement; 0 disables early stopping
  std::uint64_t seed = 1;
  std::optional<LossKind> loss;  // model and feedback default when unset
  int negative_ratio = 1;
  bool user_pass = true;  // interleave a user-item pass after each group pass
  double rho = 0.9;
  double epsilon = 1e-8;
  std::function<void(const EpochLog&)> on_epoch;

  ModelSpec model_spec(FeedbackKind feedback) const;
  LossKind resolved_loss(FeedbackKind feedback) const;
  double resolved_learning_rate(FeedbackKind feedback) const;
  // Throws UsageError on invalid values or a loss the model/feedback cannot use.
  void validate(FeedbackKind feedback) const;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double initial_valid_loss = 0.0;
  double initial_valid_hr10 = 0.0;
  int best_epoch = 0;  // 0: initial parameters were never improved on

  // Deterministic columns only (no wall clock).
  std::string to_tsv() const;
  std::string timing_tsv() const;
};

struct TrainResult {
  TrainedModel model;  // parameters of the best validation epoch
  TrainLog log;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config);

struct SweepRow {
  double beta = 0.0;
  EvalReport report;
};

// One training and test evaluation per beta, all with the same seeds.
std::vector<SweepRow> sweep_beta(const Dataset& dataset, std::span<const double> betas, const TrainConfig& config,
                                 const EvalConfig& eval);
std::string format_sweep(std::span<const SweepRow> rows);

// Three users (purchase counts 1, 2, 4), one group holding all of them, two items
// priced 10 and 40. The group bought item 0; users 0 and 2 bought item 0, user 1 item 1.
Dataset grad_check_toy_dataset();

// Finite-difference check of the full predictor on `dataset`: every parameter is
// redrawn uniform in [-1, 1], and the loss covers one pairwise (or bce) example per
// group and per user. `corrupt` negates the analytic gradient (negative control).
nn::GradCheckReport grad_check_model(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed,
                                     double tolerance, bool corrupt = false);

}  // namespace pgrec
