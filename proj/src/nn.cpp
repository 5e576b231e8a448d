#include "pgrec/nn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec::nn {

Tensor2::Tensor2(int rows, int cols, double fill)
    : rows_(rows), cols_(cols),
      values_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {
  if (rows < 0 || cols < 0) throw UsageError("negative tensor shape");
}

void Tensor2::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor2::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- ParamStore

Parameter& ParamStore::add(const std::string& name, Tensor2 value) {
  if (params_.count(name)) throw UsageError("parameter '" + name + "' already exists");
  Parameter p;
  p.grad = Tensor2(value.rows(), value.cols());
  p.sq_avg = Tensor2(value.rows(), value.cols());
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& [name, p] : params_) {
    auto it = other.params_.find(name);
    if (it == other.params_.end() || !(it->second.value == p.value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------- init

double xavier_limit(int rows, int cols) { return std::sqrt(6.0 / static_cast<double>(rows + cols)); }

Tensor2 xavier_uniform(int rows, int cols, Rng& rng) {
  Tensor2 t(rows, cols);
  const double limit = xavier_limit(rows, cols);
  for (double& v : t.values()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return t;
}

Tensor2 normal_init(int rows, int cols, double stddev, Rng& rng) {
  Tensor2 t(rows, cols);
  for (double& v : t.values()) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    v = stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  return t;
}

ParamStore init_params(int n, int m, int s, int d, const MlpSpec& head, std::uint64_t seed) {
  if (d < 1) throw UsageError("embedding size must be >= 1");
  head.validate();
  if (head.layer_sizes.front() != 3 * d || head.layer_sizes.back() != 1) {
    throw UsageError("scoring head must map 3d inputs to one output");
  }
  auto rng = make_rng(seed, streams::kInit);
  ParamStore store;
  store.add("user_emb", xavier_uniform(n, d, rng));
  store.add("item_emb", xavier_uniform(m, d, rng));
  store.add("group_emb", xavier_uniform(s, d, rng));
  Mlp::add_params(store, "head", head, rng);
  return store;
}

// ---------------------------------------------------------------- MLP

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw UsageError("MLP needs at least an input and an output size");
  for (int s : layer_sizes) {
    if (s < 1) throw UsageError("MLP layer sizes must be positive");
  }
}

MlpSpec MlpSpec::head(int d) { return MlpSpec{{3 * d, d, 1}, Activation::Identity}; }

namespace {

std::string weight_name(const std::string& prefix, std::size_t l) { return prefix + ".w" + std::to_string(l); }
std::string bias_name(const std::string& prefix, std::size_t l) { return prefix + ".b" + std::to_string(l); }

}  // namespace

void Mlp::add_params(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    store.add(weight_name(prefix, l),
              normal_init(spec.layer_sizes[l + 1], spec.layer_sizes[l], kLinearInitStd, rng));
    store.add(bias_name(prefix, l), Tensor2(1, spec.layer_sizes[l + 1]));
  }
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l + 1 < spec_.layer_sizes.size(); ++l) {
    Layer layer{&store.at(weight_name(prefix, l)), &store.at(bias_name(prefix, l))};
    if (layer.w->value.rows() != spec_.layer_sizes[l + 1] || layer.w->value.cols() != spec_.layer_sizes[l] ||
        layer.b->value.cols() != spec_.layer_sizes[l + 1]) {
      throw UsageError("parameter shapes under '" + prefix + "' do not match the MLP layout");
    }
    layers_.push_back(layer);
  }
}

std::vector<double> Mlp::forward(std::span<const double> input, Cache* cache) const {
  if (static_cast<int>(input.size()) != spec_.layer_sizes.front()) {
    throw UsageError("MLP input has length " + std::to_string(input.size()) + ", expected " +
                     std::to_string(spec_.layer_sizes.front()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l].w->value;
    const auto& b = layers_[l].b->value;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (int o = 0; o < w.rows(); ++o) {
      double acc = b(0, o);
      const auto wrow = w.row(o);
      for (std::size_t i = 0; i < x.size(); ++i) acc += wrow[i] * x[i];
      if (!std::isfinite(acc)) {
        throw NumericError("non-finite activation in MLP layer " + std::to_string(l));
      }
      z[static_cast<std::size_t>(o)] = acc;
    }
    const bool last = l + 1 == layers_.size();
    const bool relu = !last || spec_.output_activation == Activation::Relu;
    std::vector<double> a = z;
    if (relu) {
      for (double& v : a) v = v > 0.0 ? v : 0.0;
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre.push_back(std::move(z));
    }
    x = std::move(a);
  }
  return x;
}

std::vector<double> Mlp::backward(const Cache& cache, std::span<const double> upstream) {
  if (cache.pre.size() != layers_.size() ||
      static_cast<int>(upstream.size()) != spec_.layer_sizes.back()) {
    throw UsageError("MLP backward: cache or upstream gradient does not match the network");
  }
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const bool last = l + 1 == layers_.size();
    const bool relu = !last || spec_.output_activation == Activation::Relu;
    const auto& z = cache.pre[l];
    if (relu) {
      for (std::size_t o = 0; o < delta.size(); ++o) {
        if (!(z[o] > 0.0)) delta[o] = 0.0;
      }
    }
    auto& w = layers_[l].w->value;
    auto& gw = layers_[l].w->grad;
    auto& gb = layers_[l].b->grad;
    const auto& x = cache.inputs[l];
    std::vector<double> next(x.size(), 0.0);
    for (int o = 0; o < w.rows(); ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      if (d == 0.0) continue;
      gb(0, o) += d;
      auto grow = gw.row(o);
      const auto wrow = w.row(o);
      for (std::size_t i = 0; i < x.size(); ++i) {
        grow[i] += d * x[i];
        next[i] += d * wrow[i];
      }
    }
    delta = std::move(next);
  }
  return delta;
}

// ---------------------------------------------------------------- RMSprop

void rmsprop_step(ParamStore& params, const RmspropConfig& config) {
  for (const auto& [name, p] : params.entries()) {
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient in '" + name + "'");
  }
  for (auto& [name, p] : params.entries()) {
    auto value = p.value.values();
    auto grad = p.grad.values();
    auto sq = p.sq_avg.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      sq[i] = config.rho * sq[i] + (1.0 - config.rho) * g * g;
      const double updated = value[i] - config.learning_rate * g / (std::sqrt(sq[i]) + config.epsilon);
      if (!std::isfinite(updated)) throw NumericError("non-finite update in '" + name + "'");
      value[i] = updated;
    }
  }
  params.zero_grad();
  params.count_step();
}

// ---------------------------------------------------------------- gradient check

GradCheckReport grad_check(const LossClosure& loss, ParamStore& params, double tolerance,
                           double step) {
  GradCheckReport report;
  report.tolerance = tolerance;
  params.zero_grad();
  loss(params);
  std::map<std::string, Tensor2> analytic;
  for (const auto& [name, p] : params.entries()) analytic.emplace(name, p.grad);

  for (auto& [name, p] : params.entries()) {
    auto values = p.value.values();
    const auto grads = analytic.at(name).values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss(params);
      values[i] = saved - step;
      const double down = loss(params);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked;
      if (report.worst_param.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  params.zero_grad();
  report.passed = report.max_rel_error < tolerance;
  return report;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr const char* kCheckpointMagic = "pgrec-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::map<std::string, std::string>& meta) {
  if (!meta.count("id_map_hash")) throw UsageError("checkpoint metadata must include id_map_hash");
  std::string out = std::string(kCheckpointMagic) + "\t" + std::to_string(kCheckpointVersion) + "\n";
  for (const auto& [k, v] : meta) out += "meta\t" + k + "\t" + v + "\n";
  for (const auto& [name, p] : params.entries()) {
    out += "param\t" + name + "\t" + std::to_string(p.value.rows()) + "\t" +
           std::to_string(p.value.cols()) + "\n";
    const auto values = p.value.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out += '\t';
      out += tsv::format_double(values[i]);
    }
    out += "\n";
  }
  out += "end\n";
  tsv::write_file(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(tsv::read_file(path));
  auto bad = [&](const std::string& what) { return DataError(path.string() + ": " + what); };
  std::string line;
  if (!std::getline(in, line)) throw bad("empty checkpoint");
  const auto head = tsv::split(line);
  if (head.size() != 2 || head[0] != kCheckpointMagic) throw bad("not a checkpoint file");
  if (head[1] != std::to_string(kCheckpointVersion)) throw bad("unsupported checkpoint version " + head[1]);
  Checkpoint ck;
  bool ended = false;
  while (std::getline(in, line)) {
    const auto f = tsv::split(line);
    if (f[0] == "end") {
      ended = true;
      break;
    }
    if (f[0] == "meta" && f.size() == 3) {
      ck.meta[f[1]] = f[2];
    } else if (f[0] == "param" && f.size() == 4) {
      int rows = -1, cols = -1;
      for (auto [text, out] : {std::pair{&f[2], &rows}, std::pair{&f[3], &cols}}) {
        const auto [ptr, ec] = std::from_chars(text->data(), text->data() + text->size(), *out);
        if (ec != std::errc() || ptr != text->data() + text->size() || *out < 0) {
          throw bad("malformed shape for '" + f[1] + "'");
        }
      }
      Tensor2 t(rows, cols);
      std::string values_line;
      std::getline(in, values_line);
      const auto vals = t.size() ? tsv::split(values_line) : std::vector<std::string>{};
      if (vals.size() != t.size()) throw bad("parameter '" + f[1] + "' has the wrong number of values");
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const auto& s = vals[i];
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), t.values()[i]);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw bad("malformed value in '" + f[1] + "'");
      }
      ck.params.add(f[1], std::move(t));
    } else {
      throw bad("malformed line '" + line + "'");
    }
  }
  if (!ended) throw bad("truncated checkpoint");
  return ck;
}

void restore_params(const Checkpoint& checkpoint, ParamStore& target,
                    const std::string& expected_id_map_hash) {
  const auto it = checkpoint.meta.find("id_map_hash");
  if (it == checkpoint.meta.end() || it->second != expected_id_map_hash) {
    throw DataError("checkpoint id-map hash does not match the dataset");
  }
  if (checkpoint.params.entries().size() != target.entries().size()) {
    throw DataError("checkpoint parameter set does not match the model");
  }
  for (auto& [name, p] : target.entries()) {
    if (!checkpoint.params.contains(name)) throw DataError("checkpoint lacks parameter '" + name + "'");
    const auto& src = checkpoint.params.at(name).value;
    if (src.rows() != p.value.rows() || src.cols() != p.value.cols()) {
      throw DataError("checkpoint shape mismatch for '" + name + "'");
    }
    p.value = src;
  }
}

}  // namespace pgrec::nn
