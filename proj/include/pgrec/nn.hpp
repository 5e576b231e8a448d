#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pgrec/rng.hpp"

namespace pgrec::nn {

// Row-major dense matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(int rows, int cols, double fill = 0.0);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(int r, int c) { return values_[index(r, c)]; }
  double operator()(int r, int c) const { return values_[index(r, c)]; }

  std::span<double> row(int r) { return {values_.data() + index(r, 0), static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const {
    return {values_.data() + index(r, 0), static_cast<std::size_t>(cols_)};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

struct Parameter {
  Tensor2 value;
  Tensor2 grad;
  Tensor2 sq_avg;  // RMSprop running mean of squared gradients
};

// Named learnable tensors with matching gradient and optimizer buffers.
// Node-based storage: Parameter addresses stay valid while the store lives,
// including across moves.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor2 value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::map<std::string, Parameter>& entries() { return params_; }
  const std::map<std::string, Parameter>& entries() const { return params_; }

  void zero_grad();
  std::size_t parameter_count() const;
  std::int64_t step_count() const { return step_count_; }
  void count_step() { ++step_count_; }

  // Parameter values only (gradients and optimizer state ignored).
  bool same_values(const ParamStore& other) const;

 private:
  std::map<std::string, Parameter> params_;
  std::int64_t step_count_ = 0;
};

// Uniform(-limit, limit), limit = sqrt(6 / (rows + cols)).
Tensor2 xavier_uniform(int rows, int cols, Rng& rng);
double xavier_limit(int rows, int cols);
// Normal(0, std^2) via Box-Muller over the portable uniform source.
Tensor2 normal_init(int rows, int cols, double stddev, Rng& rng);

inline constexpr double kLinearInitStd = 0.01;

enum class Activation { Identity, Relu };

// Fully connected stack; hidden layers use ReLU, the last layer `output_activation`.
struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation output_activation = Activation::Identity;

  void validate() const;
  // Scoring head over pooled inputs: [3d -> d -> 1].
  static MlpSpec head(int d);
};

class Mlp {
 public:
  struct Cache {
    std::vector<std::vector<double>> inputs;  // input to each layer
    std::vector<std::vector<double>> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  // Binds to parameters `<prefix>.w<l>` / `<prefix>.b<l>` that must already exist in `store`.
  Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec);

  // Adds weights ~ Normal(0, 0.01^2) (out x in) and zero biases (1 x out).
  static void add_params(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng);

  const MlpSpec& spec() const { return spec_; }

  // Throws NumericError on a non-finite intermediate.
  std::vector<double> forward(std::span<const double> input, Cache* cache = nullptr) const;
  // Adds parameter gradients into the store; returns d(loss)/d(input).
  std::vector<double> backward(const Cache& cache, std::span<const double> upstream);

 private:
  struct Layer {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
  };
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

// Embedding tables user_emb (n x d), item_emb (m x d), group_emb (s x d), all
// Xavier-uniform, plus the scoring head under prefix "head".
ParamStore init_params(int n, int m, int s, int d, const MlpSpec& head, std::uint64_t seed);

struct RmspropConfig {
  double learning_rate = 1e-3;
  double rho = 0.9;
  double epsilon = 1e-8;
};

// s <- rho s + (1 - rho) g^2; theta <- theta - lr g / (sqrt(s) + eps); then zeroes gradients.
void rmsprop_step(ParamStore& params, const RmspropConfig& config);

// Computes the loss and accumulates its analytic gradient into the store
// (the store's gradients are zeroed by the caller).
using LossClosure = std::function<double(ParamStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central differences at `step` for every parameter entry. Relative error is
// |a - f| / max(|a|, |f|, 1e-6).
GradCheckReport grad_check(const LossClosure& loss, ParamStore& params, double tolerance,
                           double step = 1e-4);

// Text checkpoint: header, metadata (must include id_map_hash) and every
// parameter's shape and values in shortest round-trip form.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const std::map<std::string, std::string>& meta);

struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamStore params;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
// Copies values into `target`; rejects id-map hash, key set or shape mismatch.
void restore_params(const Checkpoint& checkpoint, ParamStore& target,
                    const std::string& expected_id_map_hash);

}  // namespace pgrec::nn
