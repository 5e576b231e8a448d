#include <gtest/gtest.h>

#include <cmath>

#include "pgrec/error.hpp"
#include "pgrec/nn.hpp"
#include "pgrec/tsv.hpp"
#include "test_util.hpp"

using namespace pgrec;
using namespace pgrec::nn;

namespace {

// Straight-line reference forward for a [in -> h -> out] ReLU / identity net.
std::vector<double> naive_forward(const ParamStore& s, const std::string& prefix, std::span<const double> x,
                                  int layers) {
  std::vector<double> a(x.begin(), x.end());
  for (int l = 0; l < layers; ++l) {
    const auto& w = s.at(prefix + ".w" + std::to_string(l)).value;
    const auto& b = s.at(prefix + ".b" + std::to_string(l)).value;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (int r = 0; r < w.rows(); ++r) {
      double acc = b(0, r);
      for (int c = 0; c < w.cols(); ++c) acc += w(r, c) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = (l + 1 < layers) ? std::max(0.0, acc) : acc;
    }
    a = z;
  }
  return a;
}

void randomize(ParamStore& s, Rng& rng, double scale) {
  for (auto& [name, p] : s.entries()) {
    for (auto& v : p.value.values()) v = scale * (2.0 * uniform01(rng) - 1.0);
  }
}

}  // namespace

TEST(Init, DeterministicAndWithinXavierLimit) {
  const auto a = init_params(20, 15, 4, 8, MlpSpec::head(8), 3);
  const auto b = init_params(20, 15, 4, 8, MlpSpec::head(8), 3);
  EXPECT_TRUE(a.same_values(b));
  EXPECT_FALSE(a.same_values(init_params(20, 15, 4, 8, MlpSpec::head(8), 4)));
  const struct {
    const char* name;
    int rows;
  } tables[] = {{"user_emb", 20}, {"item_emb", 15}, {"group_emb", 4}};
  for (const auto& t : tables) {
    const auto& v = a.at(t.name).value;
    EXPECT_EQ(v.rows(), t.rows);
    EXPECT_EQ(v.cols(), 8);
    const double limit = std::sqrt(6.0 / (t.rows + 8));
    EXPECT_DOUBLE_EQ(xavier_limit(t.rows, 8), limit);
    for (double x : v.values()) EXPECT_LE(std::abs(x), limit);
  }
  EXPECT_EQ(a.at("head.w0").value.rows(), 8);
  EXPECT_EQ(a.at("head.w0").value.cols(), 24);
  for (double x : a.at("head.b0").value.values()) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(init_params(2, 2, 1, 0, MlpSpec::head(1), 1), UsageError);
}

TEST(Init, NormalInitHasRequestedSpread) {
  Rng rng(9);
  const auto t = normal_init(200, 100, kLinearInitStd, rng);
  double sum = 0.0, sq = 0.0;
  for (double v : t.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(t.size());
  EXPECT_NEAR(sum / n, 0.0, 5e-4);
  EXPECT_NEAR(std::sqrt(sq / n), 0.01, 5e-4);
}

TEST(Mlp, ZeroWeightsGiveZero) {
  ParamStore s;
  Rng rng(1);
  Mlp::add_params(s, "m", MlpSpec::head(2), rng);
  for (auto& [n, p] : s.entries()) p.value.fill(0.0);
  Mlp mlp(s, "m", MlpSpec::head(2));
  const std::vector<double> x{1, -2, 3, 4, 5, -6};
  EXPECT_EQ(mlp.forward(x)[0], 0.0);
}

TEST(Mlp, UnitVectorProjection) {
  ParamStore s;
  Rng rng(1);
  const MlpSpec spec{{6, 1}, Activation::Identity};
  Mlp::add_params(s, "m", spec, rng);
  auto& w = s.at("m.w0").value;
  w.fill(0.0);
  w(0, 4) = 1.0;
  Mlp mlp(s, "m", spec);
  const std::vector<double> x{1, -2, 3, 4, 5.5, -6};
  EXPECT_EQ(mlp.forward(x)[0], 5.5);

  Mlp::Cache cache;
  mlp.forward(x, &cache);
  const std::vector<double> up{3.0};
  const auto dx = mlp.backward(cache, up);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(dx[static_cast<std::size_t>(k)], w(0, k) * 3.0);
}

TEST(Mlp, ForwardMatchesNaiveRecomputation) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore s;
    const MlpSpec spec{{9, 5, 1}, Activation::Identity};
    Mlp::add_params(s, "m", spec, rng);
    randomize(s, rng, 1.0);
    Mlp mlp(s, "m", spec);
    std::vector<double> x(9);
    for (auto& v : x) v = 2.0 * uniform01(rng) - 1.0;
    EXPECT_NEAR(mlp.forward(x)[0], naive_forward(s, "m", x, 2)[0], 1e-12);
  }
}

TEST(Mlp, BackwardZeroUpstreamAddsNothing) {
  ParamStore s;
  Rng rng(2);
  Mlp::add_params(s, "m", MlpSpec::head(2), rng);
  randomize(s, rng, 1.0);
  Mlp mlp(s, "m", MlpSpec::head(2));
  Mlp::Cache cache;
  const std::vector<double> x{0.3, -0.2, 0.5, 0.1, 0.7, -0.4};
  mlp.forward(x, &cache);
  const std::vector<double> zero{0.0};
  const auto dx = mlp.backward(cache, zero);
  for (double v : dx) EXPECT_EQ(v, 0.0);
  for (const auto& [n, p] : s.entries()) {
    for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Mlp, BackwardAccumulatesAdditively) {
  Rng rng(4);
  ParamStore a, b;
  Mlp::add_params(a, "m", MlpSpec::head(2), rng);
  randomize(a, rng, 1.0);
  for (const auto& [n, p] : a.entries()) b.add(n, p.value);
  Mlp ma(a, "m", MlpSpec::head(2)), mb(b, "m", MlpSpec::head(2));
  const std::vector<double> x{0.3, -0.2, 0.5, 0.1, 0.7, -0.4};
  Mlp::Cache ca, cb;
  ma.forward(x, &ca);
  mb.forward(x, &cb);
  const std::vector<double> one{1.0}, two{2.0};
  ma.backward(ca, one);
  ma.backward(ca, one);
  mb.backward(cb, two);
  for (const auto& [n, p] : a.entries()) {
    const auto ga = p.grad.values();
    const auto gb = b.at(n).grad.values();
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_DOUBLE_EQ(ga[i], gb[i]) << n;
  }
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  ParamStore s;
  const MlpSpec spec = MlpSpec::head(2);
  Mlp::add_params(s, "m", spec, rng);
  randomize(s, rng, 1.0);
  Mlp mlp(s, "m", spec);
  const std::vector<double> x{0.3, -0.2, 0.5, 0.1, 0.7, -0.4};
  auto loss = [&](ParamStore&) {
    Mlp::Cache cache;
    const double y = mlp.forward(x, &cache)[0];
    const std::vector<double> up{2.0 * (y - 0.25)};
    mlp.backward(cache, up);
    return (y - 0.25) * (y - 0.25);
  };
  const auto report = grad_check(loss, s, 1e-3);
  EXPECT_TRUE(report.passed) << report.worst_param << " " << report.max_rel_error;
  EXPECT_EQ(report.checked, s.parameter_count());
}

TEST(Mlp, NonFiniteActivationIsNumericError) {
  ParamStore s;
  Rng rng(2);
  const MlpSpec spec{{2, 1}, Activation::Identity};
  Mlp::add_params(s, "m", spec, rng);
  s.at("m.w0").value.fill(1e308);
  Mlp mlp(s, "m", spec);
  const std::vector<double> x{1e308, 1e308};
  EXPECT_THROW(mlp.forward(x), NumericError);
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(mlp.forward(wrong), UsageError);
}

TEST(Rmsprop, FirstStepByHand) {
  ParamStore s;
  s.add("theta", Tensor2(1, 1, 0.0));
  s.at("theta").grad(0, 0) = 1.0;
  rmsprop_step(s, {0.01, 0.9, 1e-8});
  EXPECT_NEAR(s.at("theta").value(0, 0), -0.01 / (std::sqrt(0.1) + 1e-8), 1e-15);
  EXPECT_NEAR(s.at("theta").value(0, 0), -0.03162, 1e-5);
  EXPECT_NEAR(s.at("theta").sq_avg(0, 0), 0.1, 1e-15);
  EXPECT_EQ(s.at("theta").grad(0, 0), 0.0);
  EXPECT_EQ(s.step_count(), 1);
}

TEST(Rmsprop, ZeroGradientAndZeroRateAreNoOps) {
  Rng rng(5);
  ParamStore s;
  s.add("a", normal_init(3, 4, 1.0, rng));
  const auto before = s.at("a").value;
  rmsprop_step(s, {0.1, 0.9, 1e-8});
  EXPECT_EQ(s.at("a").value, before);
  for (auto& g : s.at("a").grad.values()) g = 0.7;
  rmsprop_step(s, {0.0, 0.9, 1e-8});
  EXPECT_EQ(s.at("a").value, before);
}

TEST(Rmsprop, RepeatedGradientStepApproachesRate) {
  ParamStore s;
  s.add("theta", Tensor2(1, 1, 0.0));
  double prev = 0.0, step = 0.0;
  for (int i = 0; i < 200; ++i) {
    s.at("theta").grad(0, 0) = 0.5;
    rmsprop_step(s, {0.01, 0.9, 1e-8});
    const double now = s.at("theta").value(0, 0);
    step = prev - now;
    prev = now;
  }
  EXPECT_NEAR(step, 0.01, 1e-6);
}

TEST(Rmsprop, NonFiniteGradientRejected) {
  ParamStore s;
  s.add("theta", Tensor2(1, 1, 0.0));
  s.at("theta").grad(0, 0) = std::nan("");
  EXPECT_THROW(rmsprop_step(s, {}), NumericError);
}

TEST(GradCheck, QuadraticMatchesClosely) {
  Rng rng(6);
  ParamStore s;
  s.add("theta", normal_init(2, 3, 1.0, rng));
  auto loss = [](ParamStore& p) {
    auto& t = p.at("theta");
    double l = 0.0;
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      l += 0.5 * t.value.values()[i] * t.value.values()[i];
      t.grad.values()[i] += t.value.values()[i];
    }
    return l;
  };
  const auto r = grad_check(loss, s, 1e-6);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SignFlipFails) {
  Rng rng(6);
  ParamStore s;
  s.add("theta", normal_init(2, 3, 1.0, rng));
  auto loss = [](ParamStore& p) {
    auto& t = p.at("theta");
    double l = 0.0;
    for (std::size_t i = 0; i < t.value.size(); ++i) {
      l += 0.5 * t.value.values()[i] * t.value.values()[i];
      t.grad.values()[i] -= t.value.values()[i];
    }
    return l;
  };
  EXPECT_FALSE(grad_check(loss, s, 1e-3).passed);
}

TEST(Checkpoint, RoundTripsBitwiseAndRejectsMismatch) {
  pgrec::testing::TempDir dir;
  auto s = init_params(5, 4, 2, 3, MlpSpec::head(3), 17);
  save_checkpoint(dir / "ck.tsv", s, {{"id_map_hash", "abc"}, {"model", "pgusa"}});
  const auto ck = read_checkpoint(dir / "ck.tsv");
  EXPECT_EQ(ck.meta.at("model"), "pgusa");
  EXPECT_TRUE(ck.params.same_values(s));

  auto target = init_params(5, 4, 2, 3, MlpSpec::head(3), 99);
  EXPECT_THROW(restore_params(ck, target, "other"), DataError);
  restore_params(ck, target, "abc");
  EXPECT_TRUE(target.same_values(s));

  auto wrong_shape = init_params(6, 4, 2, 3, MlpSpec::head(3), 1);
  EXPECT_THROW(restore_params(ck, wrong_shape, "abc"), DataError);
  EXPECT_THROW(save_checkpoint(dir / "x.tsv", s, {}), UsageError);
}

TEST(Checkpoint, TruncatedFileRejected) {
  pgrec::testing::TempDir dir;
  auto s = init_params(3, 3, 1, 2, MlpSpec::head(2), 1);
  save_checkpoint(dir / "ck.tsv", s, {{"id_map_hash", "h"}});
  auto text = pgrec::tsv::read_file(dir / "ck.tsv");
  pgrec::tsv::write_file(dir / "cut.tsv", text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(dir / "cut.tsv"), DataError);
  pgrec::tsv::write_file(dir / "junk.tsv", "hello\n");
  EXPECT_THROW(read_checkpoint(dir / "junk.tsv"), DataError);
}
