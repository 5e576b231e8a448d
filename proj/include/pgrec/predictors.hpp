#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgrec/aggregation.hpp"
#include "pgrec/dataset.hpp"
#include "pgrec/nn.hpp"

namespace pgrec {

enum class ModelKind { Pgusa, Agree, Ncf, NcfAvg, NcfExp, Popularity };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view s);

// Everything needed to rebuild a model around a parameter store.
struct ModelSpec {
  ModelKind kind = ModelKind::Pgusa;
  AggregatorKind aggregator = AggregatorKind::Pgusa;  // group-attention models only
  int d = 8;
  double beta = 5.0;
  FeedbackKind feedback = FeedbackKind::Implicit;

  // pgusa -> Pgusa aggregator, agree -> Vanilla; others ignore the aggregator.
  static ModelSpec defaults_for(ModelKind kind, FeedbackKind feedback);
  void validate() const;

  std::map<std::string, std::string> to_meta() const;
  static ModelSpec from_meta(const std::map<std::string, std::string>& meta);
};

// Read-only group scorer shared by evaluation and analysis.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score_group(int group, int item) const = 0;
  virtual bool has_member_weights() const { return false; }
  // Per-member weights in group member order; throws UsageError when unsupported.
  virtual std::vector<double> member_weights(int group, int item) const;
};

// PGUsA / AGREE predictor: aggregated group embedding plus group bias, pooled
// with the item embedding and scored by an MLP shared with the user branch.
//
// Parameters: user_emb (n x d), item_emb (m x d), group_emb (s x d), head.*,
// and att.* when the aggregator uses learned attention.
class GroupAttentionModel : public Scorer {
 public:
  struct GroupCache {
    int group = 0;
    int item = 0;
    Aggregate aggregate;  // combined g and effective member weights
    VanillaAttention::Cache attention;
    std::vector<double> f;  // g + b
    nn::Mlp::Cache mlp;
  };
  struct UserCache {
    int user = 0;
    int item = 0;
    nn::Mlp::Cache mlp;
  };

  GroupAttentionModel(const Dataset& dataset, nn::ParamStore& params, const ModelSpec& spec);
  static nn::ParamStore init(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed);

  double predict_group(int group, int item, GroupCache* cache = nullptr) const;
  double predict_user(int user, int item, UserCache* cache = nullptr) const;
  // Accumulate d(loss)/d(params) given d(loss)/d(prediction).
  void backward_group(const GroupCache& cache, double upstream);
  void backward_user(const UserCache& cache, double upstream);

  double score_group(int group, int item) const override { return predict_group(group, item); }
  bool has_member_weights() const override { return true; }
  std::vector<double> member_weights(int group, int item) const override;

  const ModelSpec& spec() const { return spec_; }

 private:
  std::vector<std::span<const double>> member_rows(int group) const;
  void check_ids(int row, int rows, int item, const char* what) const;
  std::vector<double> pool(std::span<const double> f, std::span<const double> i) const;
  // Splits d(pooled) into d(f) and d(i).
  void unpool(std::span<const double> dpool, std::span<const double> f, std::span<const double> i,
              std::vector<double>& df, std::vector<double>& di) const;

  const Dataset* dataset_;
  ModelSpec spec_;
  nn::Parameter* user_emb_;
  nn::Parameter* item_emb_;
  nn::Parameter* group_emb_;
  nn::Mlp head_;
  VanillaAttention attention_;
  bool uses_pgusa_ = false;
  bool uses_attention_ = false;
};

// NCF: GMF and MLP paths over separate embedding tables whose rows are users
// followed by groups (virtual users), fused by one linear layer. Sigmoid output
// for implicit feedback, identity for explicit.
//
// Parameters: ncf.gmf_user ((n+s) x d), ncf.gmf_item (m x d), ncf.mlp_user,
// ncf.mlp_item, ncf.tower.* ([2d -> d -> d/2], ReLU), ncf.out.w, ncf.out.b.
class NcfModel : public Scorer {
 public:
  struct Cache {
    int row = 0;
    int item = 0;
    std::vector<double> gmf;
    nn::Mlp::Cache tower;
    std::vector<double> top;
    double output = 0.0;
  };

  NcfModel(const Dataset& dataset, nn::ParamStore& params, const ModelSpec& spec);
  static nn::ParamStore init(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed);
  static nn::MlpSpec tower_spec(int d);
  static int tower_top(int d);

  int rows() const { return rows_; }
  int user_row(int user) const { return user; }
  int group_row(int group) const { return dataset_->n_users() + group; }

  // Sigmoid probability (implicit) or raw value (explicit).
  double predict(int row, int item, Cache* cache = nullptr) const;
  // `upstream` is d(loss)/d(logit) for implicit models, d(loss)/d(output) otherwise.
  void backward(const Cache& cache, double upstream);

  double score_group(int group, int item) const override { return predict(group_row(group), item); }

 private:
  const Dataset* dataset_;
  ModelSpec spec_;
  int rows_ = 0;
  nn::Parameter* gmf_user_;
  nn::Parameter* gmf_item_;
  nn::Parameter* mlp_user_;
  nn::Parameter* mlp_item_;
  nn::Parameter* out_w_;
  nn::Parameter* out_b_;
  nn::Mlp tower_;
};

// Group score from member-level NCF scores (model trained on user-item only).
class MemberScoreAggregator : public Scorer {
 public:
  enum class Rule { Average, Expertise };
  MemberScoreAggregator(const Dataset& dataset, const NcfModel& model, Rule rule);
  double score_group(int group, int item) const override;

 private:
  const Dataset* dataset_;
  const NcfModel* model_;
  Rule rule_;
};

// Training interaction count per item: user-item plus group-item training entries.
std::vector<int> item_popularity(const Dataset& dataset);
// Candidates by count descending, then ascending item id. Items beyond `counts` count as 0.
std::vector<int> popularity_rank(std::span<const int> counts, std::span<const int> candidates);

class PopularityModel : public Scorer {
 public:
  explicit PopularityModel(const Dataset& dataset) : counts_(item_popularity(dataset)) {}
  double score_group(int, int item) const override { return counts_.at(static_cast<std::size_t>(item)); }
  std::span<const int> counts() const { return counts_; }

 private:
  std::vector<int> counts_;
};

// Parameters plus spec; owns the store that scorers point into.
struct TrainedModel {
  ModelSpec spec;
  nn::ParamStore params;
};

TrainedModel init_model(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed);
// Scorer bound to `model.params`; `model` must outlive it.
std::unique_ptr<Scorer> make_scorer(TrainedModel& model, const Dataset& dataset);

std::map<std::string, std::string> checkpoint_meta(const TrainedModel& model, const Dataset& dataset);
void save_model(const std::filesystem::path& path, const TrainedModel& model, const Dataset& dataset);
// Rejects a checkpoint written for different id maps or shapes.
TrainedModel load_model(const std::filesystem::path& path, const Dataset& dataset);

// `key<TAB>value` rows: model, d, aggregator, beta, feedback, parameter_count, dataset_hash.
std::string model_card(const TrainedModel& model, const Dataset& dataset);

}  // namespace pgrec
