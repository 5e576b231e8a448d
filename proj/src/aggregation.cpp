#include "pgrec/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "pgrec/dataset.hpp"
#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::Pgusa: return "pgusa";
    case AggregatorKind::Vanilla: return "vanilla";
    case AggregatorKind::PgusaPlusVanilla: return "pgusa+vanilla";
    case AggregatorKind::Average: return "average";
  }
  return "?";
}

AggregatorKind parse_aggregator(std::string_view s) {
  if (s == "pgusa") return AggregatorKind::Pgusa;
  if (s == "vanilla") return AggregatorKind::Vanilla;
  if (s == "pgusa+vanilla") return AggregatorKind::PgusaPlusVanilla;
  if (s == "average") return AggregatorKind::Average;
  throw UsageError("unknown aggregator '" + std::string(s) + "'");
}

void PgusaConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("beta must be positive");
}

double pgusa_weight(double alpha, double freq, double beta) {
  return beta / (1.0 + std::exp(-alpha * freq));
}

namespace {

void check_members(MemberEmbeddings members) {
  if (members.empty()) throw DataError("cannot aggregate an empty group");
  const auto d = members.front().size();
  for (const auto& u : members) {
    if (u.size() != d) throw UsageError("member embeddings differ in dimension");
  }
}

Aggregate weighted_sum(MemberEmbeddings members, std::vector<double> weights) {
  Aggregate out;
  out.embedding.assign(members.front().size(), 0.0);
  for (std::size_t t = 0; t < members.size(); ++t) {
    for (std::size_t k = 0; k < out.embedding.size(); ++k) out.embedding[k] += weights[t] * members[t][k];
  }
  out.weights = std::move(weights);
  return out;
}

}  // namespace

Aggregate aggregate_pgusa(MemberEmbeddings members, std::span<const double> freqs, double alpha,
                          double beta) {
  check_members(members);
  if (freqs.size() != members.size()) throw UsageError("one frequency per member required");
  std::vector<double> w(members.size());
  for (std::size_t t = 0; t < members.size(); ++t) w[t] = pgusa_weight(alpha, freqs[t], beta);
  return weighted_sum(members, std::move(w));
}

Aggregate aggregate_average(MemberEmbeddings members) {
  check_members(members);
  return weighted_sum(members, std::vector<double>(members.size(), 1.0 / static_cast<double>(members.size())));
}

// ---------------------------------------------------------------- vanilla attention

void VanillaAttention::add_params(nn::ParamStore& store, const std::string& prefix, int d, Rng& rng) {
  store.add(prefix + ".w", nn::normal_init(d, 2 * d, nn::kLinearInitStd, rng));
  store.add(prefix + ".c", nn::Tensor2(1, d));
  store.add(prefix + ".v", nn::normal_init(1, d, nn::kLinearInitStd, rng));
}

VanillaAttention::VanillaAttention(nn::ParamStore& store, const std::string& prefix, int d)
    : d_(d), w_(&store.at(prefix + ".w")), c_(&store.at(prefix + ".c")), v_(&store.at(prefix + ".v")) {
  if (w_->value.rows() != d || w_->value.cols() != 2 * d || c_->value.cols() != d || v_->value.cols() != d) {
    throw UsageError("attention parameter shapes do not match d=" + std::to_string(d));
  }
}

Aggregate VanillaAttention::forward(MemberEmbeddings members, std::span<const double> item,
                                    Cache* cache) const {
  check_members(members);
  const auto d = static_cast<std::size_t>(d_);
  if (members.front().size() != d || item.size() != d) throw UsageError("attention input dimension mismatch");
  const auto& w = w_->value;
  const auto& c = c_->value;
  const auto& v = v_->value;
  std::vector<double> logits(members.size());
  if (cache) {
    cache->pre.assign(members.size(), std::vector<double>(d));
    cache->hidden.assign(members.size(), std::vector<double>(d));
  }
  for (std::size_t t = 0; t < members.size(); ++t) {
    double score = 0.0;
    for (std::size_t o = 0; o < d; ++o) {
      const auto row = w.row(static_cast<int>(o));
      double z = c(0, static_cast<int>(o));
      for (std::size_t k = 0; k < d; ++k) z += row[k] * members[t][k] + row[d + k] * item[k];
      const double h = z > 0.0 ? z : 0.0;
      score += v(0, static_cast<int>(o)) * h;
      if (cache) {
        cache->pre[t][o] = z;
        cache->hidden[t][o] = h;
      }
    }
    logits[t] = score;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logits) l /= total;
  if (!std::isfinite(total)) throw NumericError("non-finite attention logits");
  if (cache) cache->weights = logits;
  return weighted_sum(members, std::move(logits));
}

VanillaAttention::InputGrads VanillaAttention::backward(const Cache& cache, MemberEmbeddings members,
                                                        std::span<const double> item,
                                                        std::span<const double> upstream) {
  const auto d = static_cast<std::size_t>(d_);
  const auto n = members.size();
  InputGrads grads;
  grads.members.assign(n, std::vector<double>(d, 0.0));
  grads.item.assign(d, 0.0);
  const auto& p = cache.weights;

  // through g = sum p_t u_t
  std::vector<double> dp(n, 0.0);
  double mean_dp = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = 0; k < d; ++k) {
      grads.members[t][k] += p[t] * upstream[k];
      dp[t] += upstream[k] * members[t][k];
    }
    mean_dp += p[t] * dp[t];
  }
  // softmax, then v . h, then relu(W [u; i] + c)
  auto& w = w_->value;
  auto& gw = w_->grad;
  auto& gc = c_->grad;
  const auto& v = v_->value;
  auto& gv = v_->grad;
  for (std::size_t t = 0; t < n; ++t) {
    const double da = p[t] * (dp[t] - mean_dp);
    for (std::size_t o = 0; o < d; ++o) {
      const int oi = static_cast<int>(o);
      gv(0, oi) += da * cache.hidden[t][o];
      if (!(cache.pre[t][o] > 0.0)) continue;
      const double dz = da * v(0, oi);
      gc(0, oi) += dz;
      auto grow = gw.row(oi);
      const auto wrow = w.row(oi);
      for (std::size_t k = 0; k < d; ++k) {
        grow[k] += dz * members[t][k];
        grow[d + k] += dz * item[k];
        grads.members[t][k] += dz * wrow[k];
        grads.item[k] += dz * wrow[d + k];
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------- score aggregation

double aggregate_scores_avg(std::span<const double> scores) {
  if (scores.empty()) throw DataError("cannot aggregate an empty score list");
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double aggregate_scores_exp(std::span<const double> scores, std::span<const double> freqs) {
  if (scores.empty()) throw DataError("cannot aggregate an empty score list");
  if (freqs.size() != scores.size()) throw UsageError("one frequency per score required");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    num += freqs[t] * scores[t];
    den += freqs[t];
  }
  if (den == 0.0) return aggregate_scores_avg(scores);
  return num / den;
}

std::vector<double> compose_additive(std::span<const std::vector<double>> embeddings) {
  if (embeddings.empty()) throw UsageError("nothing to compose");
  std::vector<double> out(embeddings.front().size(), 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != out.size()) throw UsageError("embedding dimension mismatch in additive composition");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += e[k];
  }
  return out;
}

std::string format_member_weights(std::span<const MemberWeightRecord> records, const Dataset& dataset) {
  std::string out = "group_id\titem_id\tuser_id\tweight\n";
  for (const auto& r : records) {
    const auto g = std::to_string(dataset.group_ids.original(r.group));
    const auto i = std::to_string(dataset.item_ids.original(r.item));
    for (const auto& [u, w] : r.weights) {
      out += g + "\t" + i + "\t" + std::to_string(dataset.user_ids.original(u)) + "\t" +
             tsv::format_double(w) + "\n";
    }
  }
  return out;
}

}  // namespace pgrec
