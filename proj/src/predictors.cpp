#include "pgrec/predictors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Pgusa: return "pgusa";
    case ModelKind::Agree: return "agree";
    case ModelKind::Ncf: return "ncf";
    case ModelKind::NcfAvg: return "ncf-avg";
    case ModelKind::NcfExp: return "ncf-exp";
    case ModelKind::Popularity: return "popularity";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::Pgusa, ModelKind::Agree, ModelKind::Ncf, ModelKind::NcfAvg, ModelKind::NcfExp,
                 ModelKind::Popularity}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown model '" + std::string(s) + "'");
}

namespace {

bool is_group_attention(ModelKind k) { return k == ModelKind::Pgusa || k == ModelKind::Agree; }
bool is_ncf(ModelKind k) { return k == ModelKind::Ncf || k == ModelKind::NcfAvg || k == ModelKind::NcfExp; }

const std::string& meta_at(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

template <class T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(std::string("malformed ") + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

ModelSpec ModelSpec::defaults_for(ModelKind kind, FeedbackKind feedback) {
  ModelSpec spec;
  spec.kind = kind;
  spec.feedback = feedback;
  spec.aggregator = kind == ModelKind::Agree ? AggregatorKind::Vanilla : AggregatorKind::Pgusa;
  return spec;
}

void ModelSpec::validate() const {
  if (d < 1) throw UsageError("embedding size d must be >= 1");
  PgusaConfig{beta}.validate();
}

std::map<std::string, std::string> ModelSpec::to_meta() const {
  return {{"model", std::string(to_string(kind))},
          {"aggregator", std::string(to_string(aggregator))},
          {"d", std::to_string(d)},
          {"beta", tsv::format_double(beta)},
          {"feedback", std::string(to_string(feedback))}};
}

ModelSpec ModelSpec::from_meta(const std::map<std::string, std::string>& meta) {
  ModelSpec spec;
  try {
    spec.kind = parse_model_kind(meta_at(meta, "model"));
    spec.aggregator = parse_aggregator(meta_at(meta, "aggregator"));
    spec.feedback = parse_feedback_kind(meta_at(meta, "feedback"));
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  spec.d = parse_number<int>(meta_at(meta, "d"), "d");
  spec.beta = parse_number<double>(meta_at(meta, "beta"), "beta");
  spec.validate();
  return spec;
}

std::vector<double> Scorer::member_weights(int, int) const {
  throw UsageError("model does not expose member weights");
}

// ---------------------------------------------------------------- PGUsA / AGREE

GroupAttentionModel::GroupAttentionModel(const Dataset& dataset, nn::ParamStore& params, const ModelSpec& spec)
    : dataset_(&dataset),
      spec_(spec),
      user_emb_(&params.at("user_emb")),
      item_emb_(&params.at("item_emb")),
      group_emb_(&params.at("group_emb")),
      head_(params, "head", nn::MlpSpec::head(spec.d)) {
  spec_.validate();
  uses_pgusa_ = spec.aggregator == AggregatorKind::Pgusa || spec.aggregator == AggregatorKind::PgusaPlusVanilla;
  uses_attention_ =
      spec.aggregator == AggregatorKind::Vanilla || spec.aggregator == AggregatorKind::PgusaPlusVanilla;
  if (uses_attention_) attention_ = VanillaAttention(params, "att", spec.d);
  if (user_emb_->value.rows() != dataset.n_users() || item_emb_->value.rows() != dataset.n_items() ||
      group_emb_->value.rows() != dataset.n_groups() || user_emb_->value.cols() != spec.d) {
    throw UsageError("embedding tables do not match the dataset");
  }
}

nn::ParamStore GroupAttentionModel::init(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto store = nn::init_params(dataset.n_users(), dataset.n_items(), dataset.n_groups(), spec.d,
                               nn::MlpSpec::head(spec.d), seed);
  if (spec.aggregator == AggregatorKind::Vanilla || spec.aggregator == AggregatorKind::PgusaPlusVanilla) {
    auto rng = make_rng(seed, streams::kInit, 1);
    VanillaAttention::add_params(store, "att", spec.d, rng);
  }
  return store;
}

void GroupAttentionModel::check_ids(int row, int rows, int item, const char* what) const {
  if (row < 0 || row >= rows) throw DataError(std::string("unknown ") + what + " index " + std::to_string(row));
  if (item < 0 || item >= dataset_->n_items()) throw DataError("unknown item index " + std::to_string(item));
}

std::vector<std::span<const double>> GroupAttentionModel::member_rows(int group) const {
  const auto& members = dataset_->groups[static_cast<std::size_t>(group)].members;
  if (members.empty()) throw DataError("group " + std::to_string(group) + " has no members");
  std::vector<std::span<const double>> rows;
  rows.reserve(members.size());
  for (int u : members) rows.push_back(user_emb_->value.row(u));
  return rows;
}

std::vector<double> GroupAttentionModel::pool(std::span<const double> f, std::span<const double> i) const {
  const auto d = f.size();
  std::vector<double> e(3 * d);
  for (std::size_t k = 0; k < d; ++k) {
    e[k] = f[k];
    e[d + k] = i[k];
    e[2 * d + k] = f[k] * i[k];
  }
  return e;
}

void GroupAttentionModel::unpool(std::span<const double> dpool, std::span<const double> f,
                                 std::span<const double> i, std::vector<double>& df,
                                 std::vector<double>& di) const {
  const auto d = f.size();
  df.assign(d, 0.0);
  di.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    df[k] = dpool[k] + dpool[2 * d + k] * i[k];
    di[k] = dpool[d + k] + dpool[2 * d + k] * f[k];
  }
}

double GroupAttentionModel::predict_group(int group, int item, GroupCache* cache) const {
  check_ids(group, dataset_->n_groups(), item, "group");
  const auto rows = member_rows(group);
  const auto item_row = item_emb_->value.row(item);

  Aggregate combined;
  if (spec_.aggregator == AggregatorKind::Average) {
    combined = aggregate_average(rows);
  } else {
    std::vector<Aggregate> parts;
    if (uses_pgusa_) {
      const auto& members = dataset_->groups[static_cast<std::size_t>(group)].members;
      std::vector<double> freqs;
      freqs.reserve(members.size());
      for (int u : members) freqs.push_back(dataset_->users[static_cast<std::size_t>(u)].freq);
      parts.push_back(aggregate_pgusa(rows, freqs, dataset_->items[static_cast<std::size_t>(item)].alpha,
                                      spec_.beta));
    }
    if (uses_attention_) parts.push_back(attention_.forward(rows, item_row, cache ? &cache->attention : nullptr));
    combined = std::move(parts.front());
    for (std::size_t p = 1; p < parts.size(); ++p) {
      for (std::size_t k = 0; k < combined.embedding.size(); ++k) combined.embedding[k] += parts[p].embedding[k];
      for (std::size_t t = 0; t < combined.weights.size(); ++t) combined.weights[t] += parts[p].weights[t];
    }
  }

  std::vector<double> f(combined.embedding);
  const auto b = group_emb_->value.row(group);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] += b[k];
  const auto out = head_.forward(pool(f, item_row), cache ? &cache->mlp : nullptr);
  if (cache) {
    cache->group = group;
    cache->item = item;
    cache->aggregate = std::move(combined);
    cache->f = std::move(f);
  }
  return out.front();
}

void GroupAttentionModel::backward_group(const GroupCache& cache, double upstream) {
  const double up[1] = {upstream};
  const auto dpool = head_.backward(cache.mlp, up);
  const auto item_row = item_emb_->value.row(cache.item);
  std::vector<double> df;
  std::vector<double> di;
  unpool(dpool, cache.f, item_row, df, di);
  const auto d = df.size();

  auto gb = group_emb_->grad.row(cache.group);
  for (std::size_t k = 0; k < d; ++k) gb[k] += df[k];

  const auto& members = dataset_->groups[static_cast<std::size_t>(cache.group)].members;
  // fixed (non-learned) weights: everything but the attention share
  std::vector<double> fixed = cache.aggregate.weights;
  if (uses_attention_) {
    for (std::size_t t = 0; t < fixed.size(); ++t) fixed[t] -= cache.attention.weights[t];
  }
  if (spec_.aggregator != AggregatorKind::Vanilla) {
    for (std::size_t t = 0; t < members.size(); ++t) {
      auto gu = user_emb_->grad.row(members[t]);
      for (std::size_t k = 0; k < d; ++k) gu[k] += fixed[t] * df[k];
    }
  }
  if (uses_attention_) {
    const auto rows = member_rows(cache.group);
    const auto grads = attention_.backward(cache.attention, rows, item_row, df);
    for (std::size_t t = 0; t < members.size(); ++t) {
      auto gu = user_emb_->grad.row(members[t]);
      for (std::size_t k = 0; k < d; ++k) gu[k] += grads.members[t][k];
    }
    for (std::size_t k = 0; k < d; ++k) di[k] += grads.item[k];
  }
  auto gi = item_emb_->grad.row(cache.item);
  for (std::size_t k = 0; k < d; ++k) gi[k] += di[k];
}

double GroupAttentionModel::predict_user(int user, int item, UserCache* cache) const {
  check_ids(user, dataset_->n_users(), item, "user");
  const auto out =
      head_.forward(pool(user_emb_->value.row(user), item_emb_->value.row(item)), cache ? &cache->mlp : nullptr);
  if (cache) {
    cache->user = user;
    cache->item = item;
  }
  return out.front();
}

void GroupAttentionModel::backward_user(const UserCache& cache, double upstream) {
  const double up[1] = {upstream};
  const auto dpool = head_.backward(cache.mlp, up);
  std::vector<double> du;
  std::vector<double> di;
  unpool(dpool, user_emb_->value.row(cache.user), item_emb_->value.row(cache.item), du, di);
  auto gu = user_emb_->grad.row(cache.user);
  auto gi = item_emb_->grad.row(cache.item);
  for (std::size_t k = 0; k < du.size(); ++k) {
    gu[k] += du[k];
    gi[k] += di[k];
  }
}

std::vector<double> GroupAttentionModel::member_weights(int group, int item) const {
  GroupCache cache;
  predict_group(group, item, &cache);
  return cache.aggregate.weights;
}

// ---------------------------------------------------------------- NCF

nn::MlpSpec NcfModel::tower_spec(int d) { return nn::MlpSpec{{2 * d, d, tower_top(d)}, nn::Activation::Relu}; }

int NcfModel::tower_top(int d) { return std::max(1, d / 2); }

NcfModel::NcfModel(const Dataset& dataset, nn::ParamStore& params, const ModelSpec& spec)
    : dataset_(&dataset),
      spec_(spec),
      rows_(dataset.n_users() + dataset.n_groups()),
      gmf_user_(&params.at("ncf.gmf_user")),
      gmf_item_(&params.at("ncf.gmf_item")),
      mlp_user_(&params.at("ncf.mlp_user")),
      mlp_item_(&params.at("ncf.mlp_item")),
      out_w_(&params.at("ncf.out.w")),
      out_b_(&params.at("ncf.out.b")),
      tower_(params, "ncf.tower", tower_spec(spec.d)) {
  if (gmf_user_->value.rows() != rows_ || mlp_user_->value.rows() != rows_ ||
      gmf_item_->value.rows() != dataset.n_items() || gmf_user_->value.cols() != spec.d ||
      out_w_->value.cols() != spec.d + tower_top(spec.d)) {
    throw UsageError("NCF parameter shapes do not match the dataset");
  }
}

nn::ParamStore NcfModel::init(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int rows = dataset.n_users() + dataset.n_groups();
  const int m = dataset.n_items();
  const int d = spec.d;
  auto rng = make_rng(seed, streams::kInit);
  nn::ParamStore store;
  store.add("ncf.gmf_user", nn::xavier_uniform(rows, d, rng));
  store.add("ncf.gmf_item", nn::xavier_uniform(m, d, rng));
  store.add("ncf.mlp_user", nn::xavier_uniform(rows, d, rng));
  store.add("ncf.mlp_item", nn::xavier_uniform(m, d, rng));
  nn::Mlp::add_params(store, "ncf.tower", tower_spec(d), rng);
  store.add("ncf.out.w", nn::normal_init(1, d + tower_top(d), nn::kLinearInitStd, rng));
  store.add("ncf.out.b", nn::Tensor2(1, 1));
  return store;
}

double NcfModel::predict(int row, int item, Cache* cache) const {
  if (row < 0 || row >= rows_) throw DataError("unknown virtual-user row " + std::to_string(row));
  if (item < 0 || item >= dataset_->n_items()) throw DataError("unknown item index " + std::to_string(item));
  const auto d = static_cast<std::size_t>(spec_.d);
  const auto gu = gmf_user_->value.row(row);
  const auto gi = gmf_item_->value.row(item);
  std::vector<double> gmf(d);
  for (std::size_t k = 0; k < d; ++k) gmf[k] = gu[k] * gi[k];

  std::vector<double> x(2 * d);
  const auto mu = mlp_user_->value.row(row);
  const auto mi = mlp_item_->value.row(item);
  std::copy(mu.begin(), mu.end(), x.begin());
  std::copy(mi.begin(), mi.end(), x.begin() + static_cast<std::ptrdiff_t>(d));
  auto top = tower_.forward(x, cache ? &cache->tower : nullptr);

  const auto w = out_w_->value.row(0);
  double z = out_b_->value(0, 0);
  for (std::size_t k = 0; k < d; ++k) z += w[k] * gmf[k];
  for (std::size_t k = 0; k < top.size(); ++k) z += w[d + k] * top[k];
  if (!std::isfinite(z)) throw NumericError("non-finite NCF output");
  const double out = spec_.feedback == FeedbackKind::Implicit ? 1.0 / (1.0 + std::exp(-z)) : z;
  if (cache) {
    cache->row = row;
    cache->item = item;
    cache->gmf = std::move(gmf);
    cache->top = std::move(top);
    cache->output = out;
  }
  return out;
}

void NcfModel::backward(const Cache& cache, double upstream) {
  const auto d = static_cast<std::size_t>(spec_.d);
  const auto w = out_w_->value.row(0);
  auto gw = out_w_->grad.row(0);
  out_b_->grad(0, 0) += upstream;
  for (std::size_t k = 0; k < d; ++k) gw[k] += upstream * cache.gmf[k];
  std::vector<double> dtop(cache.top.size());
  for (std::size_t k = 0; k < cache.top.size(); ++k) {
    gw[d + k] += upstream * cache.top[k];
    dtop[k] = upstream * w[d + k];
  }

  const auto gu = gmf_user_->value.row(cache.row);
  const auto gi = gmf_item_->value.row(cache.item);
  auto ggu = gmf_user_->grad.row(cache.row);
  auto ggi = gmf_item_->grad.row(cache.item);
  for (std::size_t k = 0; k < d; ++k) {
    const double dg = upstream * w[k];
    ggu[k] += dg * gi[k];
    ggi[k] += dg * gu[k];
  }

  const auto dx = tower_.backward(cache.tower, dtop);
  auto gmu = mlp_user_->grad.row(cache.row);
  auto gmi = mlp_item_->grad.row(cache.item);
  for (std::size_t k = 0; k < d; ++k) {
    gmu[k] += dx[k];
    gmi[k] += dx[d + k];
  }
}

MemberScoreAggregator::MemberScoreAggregator(const Dataset& dataset, const NcfModel& model, Rule rule)
    : dataset_(&dataset), model_(&model), rule_(rule) {}

double MemberScoreAggregator::score_group(int group, int item) const {
  if (group < 0 || group >= dataset_->n_groups()) throw DataError("unknown group index " + std::to_string(group));
  const auto& members = dataset_->groups[static_cast<std::size_t>(group)].members;
  std::vector<double> scores;
  std::vector<double> freqs;
  for (int u : members) {
    scores.push_back(model_->predict(model_->user_row(u), item));
    freqs.push_back(dataset_->users[static_cast<std::size_t>(u)].freq);
  }
  return rule_ == Rule::Average ? aggregate_scores_avg(scores) : aggregate_scores_exp(scores, freqs);
}

// ---------------------------------------------------------------- popularity

std::vector<int> item_popularity(const Dataset& dataset) {
  std::vector<int> counts(static_cast<std::size_t>(dataset.n_items()), 0);
  for (const auto* set : {&dataset.user_item, &dataset.group_item}) {
    for (const auto& e : set->entries()) ++counts[static_cast<std::size_t>(e.col)];
  }
  return counts;
}

std::vector<int> popularity_rank(std::span<const int> counts, std::span<const int> candidates) {
  auto count_of = [&](int item) {
    return item >= 0 && static_cast<std::size_t>(item) < counts.size() ? counts[static_cast<std::size_t>(item)] : 0;
  };
  std::vector<int> out(candidates.begin(), candidates.end());
  std::sort(out.begin(), out.end(), [&](int a, int b) {
    const int ca = count_of(a);
    const int cb = count_of(b);
    return ca != cb ? ca > cb : a < b;
  });
  return out;
}

// ---------------------------------------------------------------- model plumbing

namespace {

class NcfMemberScorer : public Scorer {
 public:
  NcfMemberScorer(const Dataset& dataset, nn::ParamStore& params, const ModelSpec& spec,
                  MemberScoreAggregator::Rule rule)
      : ncf_(dataset, params, spec), agg_(dataset, ncf_, rule) {}
  double score_group(int group, int item) const override { return agg_.score_group(group, item); }

 private:
  NcfModel ncf_;
  MemberScoreAggregator agg_;
};

}  // namespace

TrainedModel init_model(const Dataset& dataset, const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  TrainedModel model{spec, {}};
  if (is_group_attention(spec.kind)) {
    model.params = GroupAttentionModel::init(dataset, spec, seed);
  } else if (is_ncf(spec.kind)) {
    model.params = NcfModel::init(dataset, spec, seed);
  }
  return model;
}

std::unique_ptr<Scorer> make_scorer(TrainedModel& model, const Dataset& dataset) {
  switch (model.spec.kind) {
    case ModelKind::Pgusa:
    case ModelKind::Agree:
      return std::make_unique<GroupAttentionModel>(dataset, model.params, model.spec);
    case ModelKind::Ncf:
      return std::make_unique<NcfModel>(dataset, model.params, model.spec);
    case ModelKind::NcfAvg:
      return std::make_unique<NcfMemberScorer>(dataset, model.params, model.spec,
                                               MemberScoreAggregator::Rule::Average);
    case ModelKind::NcfExp:
      return std::make_unique<NcfMemberScorer>(dataset, model.params, model.spec,
                                               MemberScoreAggregator::Rule::Expertise);
    case ModelKind::Popularity:
      return std::make_unique<PopularityModel>(dataset);
  }
  throw UsageError("unsupported model kind");
}

std::map<std::string, std::string> checkpoint_meta(const TrainedModel& model, const Dataset& dataset) {
  auto meta = model.spec.to_meta();
  meta["id_map_hash"] = dataset.id_map_hash();
  meta["dataset_hash"] = dataset.hash();
  return meta;
}

void save_model(const std::filesystem::path& path, const TrainedModel& model, const Dataset& dataset) {
  nn::save_checkpoint(path, model.params, checkpoint_meta(model, dataset));
}

TrainedModel load_model(const std::filesystem::path& path, const Dataset& dataset) {
  const auto ck = nn::read_checkpoint(path);
  const auto spec = ModelSpec::from_meta(ck.meta);
  auto model = init_model(dataset, spec, 0);
  nn::restore_params(ck, model.params, dataset.id_map_hash());
  return model;
}

std::string model_card(const TrainedModel& model, const Dataset& dataset) {
  std::string out = "key\tvalue\n";
  out += "model\t" + std::string(to_string(model.spec.kind)) + "\n";
  out += "d\t" + std::to_string(model.spec.d) + "\n";
  out += "aggregator\t" + std::string(to_string(model.spec.aggregator)) + "\n";
  out += "beta\t" + tsv::format_double(model.spec.beta) + "\n";
  out += "feedback\t" + std::string(to_string(model.spec.feedback)) + "\n";
  out += "parameter_count\t" + std::to_string(model.params.parameter_count()) + "\n";
  out += "dataset_hash\t" + dataset.hash() + "\n";
  return out;
}

}  // namespace pgrec
