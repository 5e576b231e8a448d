#include "pgrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>

#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::PairwiseRegression: return "pairwise";
    case LossKind::MeanSquaredError: return "mse";
    case LossKind::BinaryCrossEntropy: return "bce";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "pairwise") return LossKind::PairwiseRegression;
  if (s == "mse") return LossKind::MeanSquaredError;
  if (s == "bce") return LossKind::BinaryCrossEntropy;
  throw UsageError("unknown loss '" + std::string(s) + "'");
}

PairLoss pairwise_regression_loss(double pos, double neg) {
  const double r = pos - neg - 1.0;
  return {r * r, 2.0 * r, -2.0 * r};
}

PointLoss mse_loss(double y, double y_hat) {
  const double r = y - y_hat;
  return {r * r, -2.0 * r};
}

PointLoss bce_loss(double label, double p) {
  const double q = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
  return {-label * std::log(q) - (1.0 - label) * std::log(1.0 - q), p - label};
}

namespace {

bool is_ncf(ModelKind k) { return k == ModelKind::Ncf || k == ModelKind::NcfAvg || k == ModelKind::NcfExp; }
bool member_only(ModelKind k) { return k == ModelKind::NcfAvg || k == ModelKind::NcfExp; }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ModelSpec TrainConfig::model_spec(FeedbackKind feedback) const {
  auto spec = ModelSpec::defaults_for(model, feedback);
  if (aggregator) spec.aggregator = *aggregator;
  spec.d = d;
  spec.beta = beta;
  return spec;
}

LossKind TrainConfig::resolved_loss(FeedbackKind feedback) const {
  if (loss) return *loss;
  if (feedback == FeedbackKind::Explicit) return LossKind::MeanSquaredError;
  return is_ncf(model) ? LossKind::BinaryCrossEntropy : LossKind::PairwiseRegression;
}

double TrainConfig::resolved_learning_rate(FeedbackKind feedback) const {
  if (learning_rate) return *learning_rate;
  return feedback == FeedbackKind::Explicit ? 1e-3 : 1e-4;
}

void TrainConfig::validate(FeedbackKind feedback) const {
  model_spec(feedback).validate();
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  if (epochs < 0) throw UsageError("epochs must be non-negative");
  if (patience < 0) throw UsageError("patience must be non-negative");
  if (negative_ratio < 1) throw UsageError("negative_ratio must be positive");
  const double lr = resolved_learning_rate(feedback);
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("learning_rate must be non-negative");
  if (!(rho >= 0.0 && rho < 1.0)) throw UsageError("rho must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
  const auto l = resolved_loss(feedback);
  if (feedback == FeedbackKind::Explicit && l != LossKind::MeanSquaredError) {
    throw UsageError("explicit feedback trains with the mse loss");
  }
  if (feedback == FeedbackKind::Implicit && is_ncf(model) && l != LossKind::BinaryCrossEntropy) {
    throw UsageError("NCF models train with the bce loss on implicit feedback");
  }
}

namespace {

// One training example. `neg` >= 0 marks a pairwise example; otherwise `target` is the label/value.
struct Example {
  int row = 0;
  int item = 0;
  int neg = -1;
  double target = 1.0;
};

// Model-family specific forward/backward over examples.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual bool has_group_pass() const = 0;
  // Forward and backward for one example; gradients scaled by `scale`. Returns the loss.
  virtual double fit_group(const Example& ex, double scale) = 0;
  virtual double fit_user(const Example& ex, double scale) = 0;
  virtual double loss_group(const Example& ex) const = 0;
  virtual const Scorer& scorer() const = 0;
};

class GroupLearner : public Learner {
 public:
  GroupLearner(const Dataset& dataset, TrainedModel& model, LossKind loss)
      : model_(dataset, model.params, model.spec), loss_(loss) {}

  bool has_group_pass() const override { return true; }

  double fit_group(const Example& ex, double scale) override {
    if (ex.neg >= 0) {
      GroupAttentionModel::GroupCache cp, cn;
      const double pos = model_.predict_group(ex.row, ex.item, &cp);
      const double neg = model_.predict_group(ex.row, ex.neg, &cn);
      const auto l = pairwise_regression_loss(pos, neg);
      model_.backward_group(cp, l.d_pos * scale);
      model_.backward_group(cn, l.d_neg * scale);
      return l.loss;
    }
    GroupAttentionModel::GroupCache c;
    const auto l = point(model_.predict_group(ex.row, ex.item, &c), ex.target);
    model_.backward_group(c, l.grad * scale);
    return l.loss;
  }

  double fit_user(const Example& ex, double scale) override {
    if (ex.neg >= 0) {
      GroupAttentionModel::UserCache cp, cn;
      const double pos = model_.predict_user(ex.row, ex.item, &cp);
      const double neg = model_.predict_user(ex.row, ex.neg, &cn);
      const auto l = pairwise_regression_loss(pos, neg);
      model_.backward_user(cp, l.d_pos * scale);
      model_.backward_user(cn, l.d_neg * scale);
      return l.loss;
    }
    GroupAttentionModel::UserCache c;
    const auto l = point(model_.predict_user(ex.row, ex.item, &c), ex.target);
    model_.backward_user(c, l.grad * scale);
    return l.loss;
  }

  double loss_group(const Example& ex) const override {
    if (ex.neg >= 0) {
      return pairwise_regression_loss(model_.predict_group(ex.row, ex.item), model_.predict_group(ex.row, ex.neg))
          .loss;
    }
    return point(model_.predict_group(ex.row, ex.item), ex.target).loss;
  }

  const Scorer& scorer() const override { return model_; }

 private:
  PointLoss point(double score, double target) const {
    return loss_ == LossKind::BinaryCrossEntropy ? bce_loss(target, sigmoid(score)) : mse_loss(target, score);
  }

  GroupAttentionModel model_;
  LossKind loss_;
};

class NcfLearner : public Learner {
 public:
  NcfLearner(const Dataset& dataset, TrainedModel& model, LossKind loss)
      : ncf_(dataset, model.params, model.spec), loss_(loss), kind_(model.spec.kind) {
    if (member_only(kind_)) {
      members_ = std::make_unique<MemberScoreAggregator>(
          dataset, ncf_,
          kind_ == ModelKind::NcfAvg ? MemberScoreAggregator::Rule::Average : MemberScoreAggregator::Rule::Expertise);
    }
  }

  bool has_group_pass() const override { return !member_only(kind_); }

  double fit_group(const Example& ex, double scale) override { return fit_row(ncf_.group_row(ex.row), ex, scale); }
  double fit_user(const Example& ex, double scale) override { return fit_row(ncf_.user_row(ex.row), ex, scale); }

  double loss_group(const Example& ex) const override { return point(scorer().score_group(ex.row, ex.item), ex.target).loss; }

  const Scorer& scorer() const override {
    return members_ ? static_cast<const Scorer&>(*members_) : static_cast<const Scorer&>(ncf_);
  }

 private:
  double fit_row(int row, const Example& ex, double scale) {
    NcfModel::Cache c;
    const auto l = point(ncf_.predict(row, ex.item, &c), ex.target);
    ncf_.backward(c, l.grad * scale);
    return l.loss;
  }

  // NCF output is already a probability for implicit feedback.
  PointLoss point(double output, double target) const {
    return loss_ == LossKind::BinaryCrossEntropy ? bce_loss(target, output) : mse_loss(target, output);
  }

  NcfModel ncf_;
  LossKind loss_;
  ModelKind kind_;
  std::unique_ptr<MemberScoreAggregator> members_;
};

// Examples for one pass over `positives`, in a seeded shuffled order.
std::vector<Example> build_examples(const InteractionSet& positives, const NegativeSampler& sampler, LossKind loss,
                                    FeedbackKind feedback, int negative_ratio, Rng& shuffle_rng, Rng& neg_rng) {
  const auto entries = positives.entries();
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
  }
  std::vector<Example> out;
  out.reserve(entries.size() * static_cast<std::size_t>(negative_ratio + 1));
  for (std::size_t idx : order) {
    const auto& e = entries[idx];
    if (feedback == FeedbackKind::Explicit) {
      out.push_back({e.row, e.col, -1, e.value});
      continue;
    }
    const auto negs = sampler.sample(e.row, negative_ratio, neg_rng);
    if (loss == LossKind::PairwiseRegression) {
      for (int n : negs) out.push_back({e.row, e.col, n, 1.0});
    } else {
      out.push_back({e.row, e.col, -1, 1.0});
      for (int n : negs) out.push_back({e.row, n, -1, 0.0});
    }
  }
  return out;
}

struct PassResult {
  double loss_sum = 0.0;
  std::size_t count = 0;
};

PassResult run_pass(const std::vector<Example>& examples, bool group, Learner& learner, nn::ParamStore& params,
                    const nn::RmspropConfig& opt, int batch_size, int epoch) {
  PassResult res;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0, batch = 0; start < examples.size(); start += bs, ++batch) {
    const auto end = std::min(examples.size(), start + bs);
    const double scale = 1.0 / static_cast<double>(end - start);
    double batch_loss = 0.0;
    try {
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += group ? learner.fit_group(examples[i], scale) : learner.fit_user(examples[i], scale);
      }
      if (!std::isfinite(batch_loss)) throw NumericError("non-finite loss");
      nn::rmsprop_step(params, opt);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", " +
                         (group ? "group" : "user") + " batch " + std::to_string(batch) + ": " + e.what());
    }
    res.loss_sum += batch_loss;
    res.count += end - start;
  }
  return res;
}

double mean_loss(const Learner& learner, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& ex : examples) sum += learner.loss_group(ex);
  return sum / static_cast<double>(examples.size());
}

double validation_hr10(const Learner& learner, const Dataset& dataset, std::uint64_t seed) {
  if (dataset.group_item_valid.empty() || dataset.feedback_kind == FeedbackKind::Explicit) return 0.0;
  EvalConfig cfg;
  cfg.ks = {10};
  cfg.seed = derive_seed(seed, streams::kValidationNegatives, 1);
  return evaluate_ranking(learner.scorer(), dataset, dataset.group_item_valid, cfg).report.hr_at.at(10);
}

void copy_values(const nn::ParamStore& from, nn::ParamStore& to) {
  for (auto& [name, p] : to.entries()) p.value = from.at(name).value;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  const auto feedback = dataset.feedback_kind;
  config.validate(feedback);
  const auto loss = config.resolved_loss(feedback);
  TrainResult result{init_model(dataset, config.model_spec(feedback), config.seed), {}};
  if (config.model == ModelKind::Popularity) return result;

  auto& params = result.model.params;
  std::unique_ptr<Learner> learner;
  if (is_ncf(config.model)) {
    learner = std::make_unique<NcfLearner>(dataset, result.model, loss);
  } else {
    learner = std::make_unique<GroupLearner>(dataset, result.model, loss);
  }

  const InteractionSet* group_known[] = {&dataset.group_item, &dataset.group_item_valid};
  const InteractionSet* user_known[] = {&dataset.user_item};
  const NegativeSampler group_sampler(dataset.n_items(), group_known);
  const NegativeSampler user_sampler(dataset.n_items(), user_known);

  // fixed validation examples
  std::vector<Example> valid;
  {
    auto order_rng = make_rng(config.seed, streams::kValidationNegatives, 2);
    auto neg_rng = make_rng(config.seed, streams::kValidationNegatives, 3);
    const InteractionSet* all_known[] = {&dataset.group_item, &dataset.group_item_valid, &dataset.group_item_test};
    const NegativeSampler valid_sampler(dataset.n_items(), all_known);
    valid = build_examples(dataset.group_item_valid, valid_sampler, loss, feedback, config.negative_ratio, order_rng,
                           neg_rng);
  }

  const nn::RmspropConfig opt{config.resolved_learning_rate(feedback), config.rho, config.epsilon};
  auto& log = result.log;
  log.initial_valid_loss = mean_loss(*learner, valid);
  log.initial_valid_hr10 = validation_hr10(*learner, dataset, config.seed);

  nn::ParamStore best = params;
  double best_loss = valid.empty() ? std::numeric_limits<double>::infinity() : log.initial_valid_loss;
  int since_best = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    PassResult group_res;
    PassResult user_res;
    if (learner->has_group_pass()) {
      auto shuffle_rng = make_rng(config.seed, streams::kShuffle, 2 * e);
      auto neg_rng = make_rng(config.seed, streams::kTrainNegatives, 2 * e);
      const auto examples = build_examples(dataset.group_item, group_sampler, loss, feedback, config.negative_ratio,
                                           shuffle_rng, neg_rng);
      group_res = run_pass(examples, true, *learner, params, opt, config.batch_size, epoch);
    }
    if (config.user_pass || !learner->has_group_pass()) {
      auto shuffle_rng = make_rng(config.seed, streams::kShuffle, 2 * e + 1);
      auto neg_rng = make_rng(config.seed, streams::kTrainNegatives, 2 * e + 1);
      const auto examples = build_examples(dataset.user_item, user_sampler, loss, feedback, config.negative_ratio,
                                           shuffle_rng, neg_rng);
      user_res = run_pass(examples, false, *learner, params, opt, config.batch_size, epoch);
    }

    EpochLog row;
    row.epoch = epoch;
    const auto total = group_res.count + user_res.count;
    row.train_loss = total ? (group_res.loss_sum + user_res.loss_sum) / static_cast<double>(total) : 0.0;
    row.group_loss = group_res.count ? group_res.loss_sum / static_cast<double>(group_res.count) : 0.0;
    row.user_loss = user_res.count ? user_res.loss_sum / static_cast<double>(user_res.count) : 0.0;
    row.valid_loss = valid.empty() ? row.train_loss : mean_loss(*learner, valid);
    row.valid_hr10 = validation_hr10(*learner, dataset, config.seed);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(row.valid_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": non-finite validation loss");
    }
    log.epochs.push_back(row);
    if (config.on_epoch) config.on_epoch(row);

    if (row.valid_loss < best_loss) {
      best_loss = row.valid_loss;
      best = params;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  copy_values(best, params);
  return result;
}

std::string TrainLog::to_tsv() const {
  std::string out = "epoch\ttrain_loss\tgroup_loss\tuser_loss\tvalid_loss\tvalid_hr@10\n";
  out += "0\t\t\t\t" + tsv::format_double(initial_valid_loss) + "\t" + tsv::format_double(initial_valid_hr10) + "\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "\t" + tsv::format_double(e.train_loss) + "\t" + tsv::format_double(e.group_loss) +
           "\t" + tsv::format_double(e.user_loss) + "\t" + tsv::format_double(e.valid_loss) + "\t" +
           tsv::format_double(e.valid_hr10) + "\n";
  }
  return out;
}

std::string TrainLog::timing_tsv() const {
  std::string out = "epoch\tcumulative_seconds\n";
  for (const auto& e : epochs) out += std::to_string(e.epoch) + "\t" + tsv::format_fixed(e.seconds, 3) + "\n";
  return out;
}

std::vector<SweepRow> sweep_beta(const Dataset& dataset, std::span<const double> betas, const TrainConfig& config,
                                 const EvalConfig& eval) {
  if (betas.empty()) throw UsageError("beta sweep needs at least one beta");
  std::vector<SweepRow> rows;
  for (double beta : betas) {
    auto cfg = config;
    cfg.beta = beta;
    auto trained = train(dataset, cfg);
    const auto scorer = make_scorer(trained.model, dataset);
    SweepRow row{beta, {}};
    if (dataset.feedback_kind == FeedbackKind::Explicit) {
      row.report = evaluate_regression(*scorer, dataset.group_item_test, eval.threads);
    } else {
      row.report = evaluate_ranking(*scorer, dataset, dataset.group_item_test, eval).report;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_sweep(std::span<const SweepRow> rows) {
  std::string out = "beta";
  if (rows.empty()) return out + "\n";
  for (const auto& [name, v] : rows.front().report.columns()) out += "\t" + name;
  out += "\n";
  for (const auto& r : rows) {
    out += tsv::format_double(r.beta);
    for (const auto& [name, v] : r.report.columns()) out += "\t" + tsv::format_double(v);
    out += "\n";
  }
  return out;
}

Dataset grad_check_toy_dataset() {
  RawData raw;
  raw.items = {{1, 10.0, 2}, {2, 40.0, 3}};
  raw.memberships = {{1, 1, 2}, {1, 2, 3}, {1, 3, 4}};
  raw.user_items = {{1, 1, 1.0, std::nullopt, 2}, {2, 2, 1.0, std::nullopt, 3}, {3, 1, 1.0, std::nullopt, 4}};
  raw.group_items = std::vector<RawInteraction>{{1, 1, 1.0, std::nullopt, 2}};
  LoadConfig cfg;
  cfg.feedback_kind = FeedbackKind::Implicit;
  cfg.test_fraction = 0.0;
  cfg.validation_fraction = 0.0;
  auto ds = build_dataset(raw, cfg);
  // purchase counts 1, 2, 4 give three distinct frequencies
  const int counts[] = {1, 2, 4};
  const auto freqs = normalize_frequency(counts);
  for (std::size_t u = 0; u < ds.users.size(); ++u) {
    ds.users[u].purchase_count = counts[u];
    ds.users[u].freq = freqs[u];
  }
  return ds;
}

nn::GradCheckReport grad_check_model(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed,
                                     double tolerance, bool corrupt) {
  auto model = init_model(dataset, spec, seed);
  auto rng = make_rng(seed, streams::kInit, 7);
  for (auto& [name, p] : model.params.entries()) {
    for (double& v : p.value.values()) v = 2.0 * uniform01(rng) - 1.0;
  }
  const bool ncf = is_ncf(spec.kind);
  const auto loss_kind = ncf ? LossKind::BinaryCrossEntropy : LossKind::PairwiseRegression;
  std::unique_ptr<Learner> learner;
  if (ncf) {
    learner = std::make_unique<NcfLearner>(dataset, model, loss_kind);
  } else {
    learner = std::make_unique<GroupLearner>(dataset, model, loss_kind);
  }
  // one example per group and per user: item 0 against item 1 (or labels 1 / 0)
  std::vector<Example> group_ex;
  std::vector<Example> user_ex;
  for (int g = 0; g < dataset.n_groups(); ++g) {
    if (ncf) {
      group_ex.push_back({g, 0, -1, 1.0});
      group_ex.push_back({g, 1, -1, 0.0});
    } else {
      group_ex.push_back({g, 0, 1, 1.0});
    }
  }
  for (int u = 0; u < dataset.n_users(); ++u) {
    if (ncf) {
      user_ex.push_back({u, 0, -1, 1.0});
      user_ex.push_back({u, 1, -1, 0.0});
    } else {
      user_ex.push_back({u, 0, 1, 1.0});
    }
  }
  const bool group_pass = learner->has_group_pass();
  nn::LossClosure closure = [&](nn::ParamStore& params) {
    double total = 0.0;
    if (group_pass) {
      for (const auto& ex : group_ex) total += learner->fit_group(ex, 1.0);
    }
    for (const auto& ex : user_ex) total += learner->fit_user(ex, 1.0);
    if (corrupt) {
      for (auto& [name, p] : params.entries()) {
        for (double& g : p.grad.values()) g = -g;
      }
    }
    return total;
  };
  return nn::grad_check(closure, model.params, tolerance);
}

}  // namespace pgrec
