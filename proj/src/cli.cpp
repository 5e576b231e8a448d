#include "pgrec/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "pgrec/analysis.hpp"
#include "pgrec/dataset.hpp"
#include "pgrec/error.hpp"
#include "pgrec/evaluation.hpp"
#include "pgrec/predictors.hpp"
#include "pgrec/synthetic.hpp"
#include "pgrec/training.hpp"
#include "pgrec/tsv.hpp"

#ifndef PGREC_VERSION
#define PGREC_VERSION "dev"
#endif

namespace fs = std::filesystem;

namespace pgrec::cli {

namespace {

enum class Level { Error = 0, Info = 1, Debug = 2 };

Level log_level() {
  const char* env = std::getenv("PGREC_LOG");
  if (!env) return Level::Info;
  const std::string v(env);
  if (v == "error") return Level::Error;
  if (v == "debug") return Level::Debug;
  return Level::Info;
}

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err), level_(log_level()) {}
  void error(const std::string& msg) const { err_ << "pgrec: error: " << msg << "\n"; }
  void info(const std::string& msg) const {
    if (level_ >= Level::Info) err_ << msg << "\n";
  }
  void debug(const std::string& msg) const {
    if (level_ >= Level::Debug) err_ << msg << "\n";
  }

 private:
  std::ostream& err_;
  Level level_;
};

struct Options {
  std::string data;
  std::string out;
  std::string config;
  std::string model;
  std::string loss;
  std::string aggregator;
  std::string k = "1,5,10";
  std::string betas = "1,5,10";
  std::string truth;
  std::string metric = "hr@10";
  std::string group;
  std::optional<double> beta;
  std::uint64_t seed = 1;
  int threads = 1;
  int max_rank = 0;
  double tolerance = 1e-3;
  double alpha = 0.1;
  bool dump_rankings = false;
  bool dump_weights = false;
  bool corrupt = false;
  std::vector<std::string> runs;
};

// ---------------------------------------------------------------- config keys

template <class T>
T parse_value(const std::string& key, const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw UsageError("config key '" + key + "': malformed value '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw UsageError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

// Hands out config values and rejects keys nobody asked for.
class Keys {
 public:
  explicit Keys(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  template <class T>
  void get(const std::string& key, T& target) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    if constexpr (std::is_same_v<T, bool>) {
      target = parse_bool(key, it->second);
    } else if constexpr (std::is_same_v<T, std::string>) {
      target = it->second;
    } else {
      target = parse_value<T>(key, it->second);
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& target) {
    if (!kv_.count(key)) return;
    T v{};
    get(key, v);
    target = v;
  }

  void finish() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.count(k)) throw UsageError("unknown config key '" + k + "'");
    }
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

Keys load_keys(const Options& o) {
  return Keys(o.config.empty() ? std::map<std::string, std::string>{} : read_config_file(o.config));
}

LoadConfig load_config(Keys& keys) {
  LoadConfig cfg;
  std::string feedback;
  keys.get("feedback", feedback);
  if (!feedback.empty()) cfg.feedback_kind = parse_feedback_kind(feedback);
  keys.get("min_buyers", cfg.min_buyers);
  keys.get("test_fraction", cfg.test_fraction);
  keys.get("validation_fraction", cfg.validation_fraction);
  keys.get("split_cutoff", cfg.split_cutoff);
  keys.get("split_seed", cfg.seed);
  return cfg;
}

TrainConfig train_config(Keys& keys, const Options& o) {
  TrainConfig cfg;
  keys.get("d", cfg.d);
  keys.get("batch_size", cfg.batch_size);
  keys.get("learning_rate", cfg.learning_rate);
  keys.get("epochs", cfg.epochs);
  keys.get("patience", cfg.patience);
  keys.get("negative_ratio", cfg.negative_ratio);
  keys.get("user_pass", cfg.user_pass);
  keys.get("rmsprop_rho", cfg.rho);
  keys.get("epsilon", cfg.epsilon);
  keys.get("beta", cfg.beta);
  std::string aggregator = o.aggregator;
  std::string loss = o.loss;
  std::string model = o.model;
  if (aggregator.empty()) keys.get("aggregator", aggregator);
  if (loss.empty()) keys.get("loss", loss);
  if (model.empty()) keys.get("model", model);
  if (!model.empty()) cfg.model = parse_model_kind(model);
  if (!aggregator.empty()) cfg.aggregator = parse_aggregator(aggregator);
  if (!loss.empty()) cfg.loss = parse_loss_kind(loss);
  if (o.beta) cfg.beta = *o.beta;
  cfg.seed = o.seed;
  return cfg;
}

std::vector<int> parse_int_list(const std::string& s, const char* what) {
  std::vector<int> out;
  for (const auto& part : tsv::split(s, ',')) out.push_back(parse_value<int>(what, part));
  if (out.empty()) throw UsageError(std::string(what) + " list is empty");
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& part : tsv::split(s, ',')) out.push_back(parse_value<double>(what, part));
  if (out.empty()) throw UsageError(std::string(what) + " list is empty");
  return out;
}

EvalConfig eval_config(Keys& keys, const Options& o) {
  EvalConfig cfg;
  keys.get("negatives", cfg.negatives);
  cfg.ks = parse_int_list(o.k, "k");
  cfg.seed = o.seed;
  cfg.threads = o.threads;
  cfg.keep_weights = o.dump_weights;
  if (cfg.threads < 1) throw UsageError("--threads must be positive");
  return cfg;
}

GenConfig gen_config(Keys& keys) {
  GenConfig cfg;
  keys.get("n_users", cfg.n_users);
  keys.get("n_items", cfg.n_items);
  keys.get("n_groups", cfg.n_groups);
  keys.get("group_size", cfg.group_size);
  keys.get("n_topics", cfg.n_topics);
  keys.get("heavy_fraction", cfg.heavy_fraction);
  keys.get("heavy_min_purchases", cfg.heavy_min_purchases);
  keys.get("heavy_max_purchases", cfg.heavy_max_purchases);
  keys.get("light_min_purchases", cfg.light_min_purchases);
  keys.get("light_max_purchases", cfg.light_max_purchases);
  keys.get("off_topic_rate", cfg.off_topic_rate);
  keys.get("price_min", cfg.price_min);
  keys.get("price_max", cfg.price_max);
  keys.get("rho", cfg.rho);
  keys.get("group_events", cfg.group_events);
  keys.get("horizon", cfg.horizon);
  keys.get("test_fraction", cfg.test_fraction);
  std::string s;
  keys.get("price_distribution", s);
  if (s == "uniform") {
    cfg.price_distribution = PriceDistribution::Uniform;
  } else if (s == "lognormal") {
    cfg.price_distribution = PriceDistribution::LogNormal;
  } else if (!s.empty()) {
    throw UsageError("price_distribution must be uniform or lognormal");
  }
  s.clear();
  keys.get("feedback", s);
  if (!s.empty()) cfg.feedback = parse_feedback_kind(s);
  s.clear();
  keys.get("rating_rule", s);
  if (s == "raters") {
    cfg.rating_rule = GroupRatingRule::RatersOnly;
  } else if (s == "all") {
    cfg.rating_rule = GroupRatingRule::AllMembers;
  } else if (!s.empty()) {
    throw UsageError("rating_rule must be raters or all");
  }
  s.clear();
  keys.get("background", s);
  if (s == "balanced") {
    cfg.background = BackgroundSource::Balanced;
  } else if (s == "uniform") {
    cfg.background = BackgroundSource::Uniform;
  } else if (!s.empty()) {
    throw UsageError("background must be balanced or uniform");
  }
  return cfg;
}

// ---------------------------------------------------------------- helpers

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
}

Dataset load_data(const Options& o, const LoadConfig& cfg) {
  require(o.data, "--data");
  return load_dataset(DataPaths::in_directory(o.data), cfg);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& args, std::uint64_t seed,
                    const std::string& dataset_hash) {
  std::string cmd = "pgrec";
  for (const auto& a : args) cmd += " " + a;
  std::string out = "key\tvalue\n";
  out += "command\t" + cmd + "\n";
  out += "subcommand\t" + (args.empty() ? std::string() : args.front()) + "\n";
  out += "seed\t" + std::to_string(seed) + "\n";
  out += "dataset_hash\t" + dataset_hash + "\n";
  out += "code_version\t" PGREC_VERSION "\n";
  out += "timestamp\t" + utc_timestamp() + "\n";
  tsv::write_file(dir / "manifest.tsv", out);
}

std::string dataset_stats(const Dataset& ds) {
  std::string out = "key\tvalue\n";
  out += "feedback\t" + std::string(to_string(ds.feedback_kind)) + "\n";
  out += "users\t" + std::to_string(ds.n_users()) + "\n";
  out += "items\t" + std::to_string(ds.n_items()) + "\n";
  out += "groups\t" + std::to_string(ds.n_groups()) + "\n";
  out += "user_items_train\t" + std::to_string(ds.user_item.size()) + "\n";
  out += "user_items_test\t" + std::to_string(ds.user_item_test.size()) + "\n";
  out += "group_items_train\t" + std::to_string(ds.group_item.size()) + "\n";
  out += "group_items_valid\t" + std::to_string(ds.group_item_valid.size()) + "\n";
  out += "group_items_test\t" + std::to_string(ds.group_item_test.size()) + "\n";
  out += "dataset_hash\t" + ds.hash() + "\n";
  return out;
}

TrainedModel resolve_model(const Options& o, const Dataset& ds) {
  require(o.model, "--model");
  if (o.model == "popularity") return init_model(ds, ModelSpec::defaults_for(ModelKind::Popularity, ds.feedback_kind), 0);
  return load_model(o.model, ds);
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  require(o.out, "--out");
  auto keys = load_keys(o);
  const auto cfg = gen_config(keys);
  keys.finish();
  cfg.validate();
  const auto corpus = generate_synthetic(cfg, o.seed);
  write_corpus(corpus, o.out);
  LoadConfig lc;
  lc.feedback_kind = cfg.feedback;
  const auto ds = load_dataset(DataPaths::in_directory(o.out), lc);
  write_manifest(o.out, args, o.seed, ds.hash());
  log.info("wrote synthetic corpus to " + o.out);
  out << dataset_stats(ds);
  return 0;
}

int cmd_validate(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  keys.finish();
  const auto ds = load_data(o, lc);
  if (!o.out.empty()) {
    write_id_maps(ds, o.out);
    write_manifest(o.out, args, o.seed, ds.hash());
  }
  log.info("dataset ok");
  out << dataset_stats(ds);
  return 0;
}

int cmd_train(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  require(o.out, "--out");
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  auto cfg = train_config(keys, o);
  keys.finish();
  const auto ds = load_data(o, lc);
  cfg.on_epoch = [&](const EpochLog& e) {
    log.info("epoch " + std::to_string(e.epoch) + " loss " + tsv::format_fixed(e.train_loss, 6) + " valid " +
             tsv::format_fixed(e.valid_loss, 6) + " hr@10 " + tsv::format_fixed(e.valid_hr10, 4));
  };
  const auto result = train(ds, cfg);
  const fs::path dir = o.out;
  save_model(dir / "checkpoint.tsv", result.model, ds);
  tsv::write_file(dir / "model_card.tsv", model_card(result.model, ds));
  tsv::write_file(dir / "train_log.tsv", result.log.to_tsv());
  tsv::write_file(dir / "timing.tsv", result.log.timing_tsv());
  write_id_maps(ds, dir);
  write_manifest(dir, args, o.seed, ds.hash());
  out << result.log.to_tsv();
  return 0;
}

int cmd_evaluate(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  const auto ec = eval_config(keys, o);
  keys.finish();
  const auto ds = load_data(o, lc);
  auto model = resolve_model(o, ds);
  const auto scorer = make_scorer(model, ds);
  EvalReport report;
  std::vector<RankedResult> results;
  if (ds.feedback_kind == FeedbackKind::Explicit) {
    report = evaluate_regression(*scorer, ds.group_item_test, ec.threads);
  } else {
    auto outcome = evaluate_ranking(*scorer, ds, ds.group_item_test, ec);
    report = outcome.report;
    results = std::move(outcome.results);
  }
  if (!o.out.empty()) {
    const fs::path dir = o.out;
    tsv::write_file(dir / "eval_report.tsv", report.to_tsv());
    if (o.dump_rankings) tsv::write_file(dir / "rankings.tsv", format_rankings(results, ds));
    if (o.dump_weights) {
      if (!scorer->has_member_weights()) throw UsageError("--dump-weights needs a model with member weights");
      std::vector<MemberWeightRecord> records;
      for (const auto& r : results) {
        MemberWeightRecord rec{r.group, r.pos_item, {}};
        const auto& members = ds.groups[static_cast<std::size_t>(r.group)].members;
        for (std::size_t t = 0; t < members.size(); ++t) rec.weights.emplace_back(members[t], r.member_weights[t]);
        records.push_back(std::move(rec));
      }
      tsv::write_file(dir / "member_weights.tsv", format_member_weights(records, ds));
    }
    write_manifest(dir, args, o.seed, ds.hash());
  }
  log.info(report.summary());
  out << report.to_tsv();
  return 0;
}

int cmd_sweep(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  auto cfg = train_config(keys, o);
  const auto ec = eval_config(keys, o);
  keys.finish();
  const auto betas = parse_double_list(o.betas, "betas");
  const auto ds = load_data(o, lc);
  const auto rows = sweep_beta(ds, betas, cfg, ec);
  const auto table = format_sweep(rows);
  if (!o.out.empty()) {
    tsv::write_file(fs::path(o.out) / "beta_sweep.tsv", table);
    write_manifest(o.out, args, o.seed, ds.hash());
  }
  log.info("swept " + std::to_string(rows.size()) + " beta values");
  out << table;
  return 0;
}

int cmd_analyze_influence(const Options& o, const std::vector<std::string>& args, std::ostream& out,
                          const Log& log) {
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  keys.finish();
  const auto ds = load_data(o, lc);
  std::vector<InfluenceRecord> records;
  if (!o.truth.empty()) {
    const auto flags = label_frequent_buyers(ds);
    for (const auto& t : read_truth(o.truth)) {
      const int g = ds.group_ids.dense(t.group_id);
      const int i = ds.item_ids.dense(t.item_id);
      if (!ds.group_item_test.contains(g, i)) continue;
      records.push_back(make_influence_record(ds, flags, g, i, ds.user_ids.dense(t.source_user_id)));
    }
  } else {
    if (o.model == "popularity") throw UsageError("influence extraction needs a model with member weights");
    auto model = resolve_model(o, ds);
    const auto scorer = make_scorer(model, ds);
    records = extract_influence(*scorer, ds, ds.group_item_test, o.seed, o.threads);
  }
  const fs::path dir = o.out;
  if (!o.out.empty()) {
    tsv::write_file(dir / "influence.tsv", format_influence(records, ds));
    tsv::write_file(dir / "price_buckets.tsv", format_price_buckets(price_bucket_report(records)));
  }
  const auto tests = price_bucket_tests(records);
  if (!o.out.empty()) {
    tsv::write_file(dir / "chi_square.tsv", format_chi_square(tests));
    write_manifest(dir, args, o.seed, ds.hash());
  }
  log.info(std::to_string(records.size()) + " influence records");
  log.info(chi_square_summary(tests));
  out << format_chi_square(tests);
  return 0;
}

int cmd_analyze_gmv(const Options& o, const std::vector<std::string>& args, std::ostream& out, const Log& log) {
  auto keys = load_keys(o);
  const auto lc = load_config(keys);
  keys.finish();
  const auto ds = load_data(o, lc);
  auto model = resolve_model(o, ds);
  const auto scorer = make_scorer(model, ds);
  const int max_rank = o.max_rank > 0 ? o.max_rank : ds.n_items();
  std::vector<int> groups;
  if (!o.group.empty()) {
    groups.push_back(ds.group_ids.dense(parse_value<std::int64_t>("group", o.group)));
  } else {
    for (int g = 0; g < ds.n_groups(); ++g) groups.push_back(g);
  }
  std::vector<std::vector<double>> curves(groups.size());
  parallel_for(groups.size(), o.threads,
               [&](std::size_t i) { curves[i] = gmv_curve(*scorer, ds, groups[i], max_rank); });
  std::vector<double> total(curves.empty() ? 0 : curves.front().size(), 0.0);
  for (const auto& c : curves) {
    for (std::size_t r = 0; r < total.size(); ++r) total[r] += c[r];
  }
  if (!o.out.empty()) {
    const fs::path dir = o.out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      tsv::write_file(dir / "gmv" / ("group_" + std::to_string(ds.group_ids.original(groups[i])) + ".tsv"),
                      format_gmv(curves[i]));
    }
    tsv::write_file(dir / "gmv_total.tsv", format_gmv(total));
    write_manifest(dir, args, o.seed, ds.hash());
  }
  log.info("gmv curves for " + std::to_string(groups.size()) + " groups");
  out << format_gmv(total);
  return 0;
}

int cmd_grad_check(const Options& o, std::ostream& out, const Log& log) {
  const auto kind = o.model.empty() ? ModelKind::Pgusa : parse_model_kind(o.model);
  if (kind == ModelKind::Popularity) throw UsageError("the popularity model has no parameters");
  auto spec = ModelSpec::defaults_for(kind, FeedbackKind::Implicit);
  if (!o.aggregator.empty()) spec.aggregator = parse_aggregator(o.aggregator);
  spec.d = 2;
  if (o.beta) spec.beta = *o.beta;
  const auto report = grad_check_model(grad_check_toy_dataset(), spec, o.seed, o.tolerance, o.corrupt);
  out << "checked\tmax_rel_error\tworst_param\tworst_index\ttolerance\tpassed\n"
      << report.checked << "\t" << tsv::format_double(report.max_rel_error) << "\t" << report.worst_param << "\t"
      << report.worst_index << "\t" << tsv::format_double(report.tolerance) << "\t" << (report.passed ? 1 : 0)
      << "\n";
  if (!report.passed) {
    log.error("gradient check failed: relative error " + tsv::format_double(report.max_rel_error) + " at " +
              report.worst_param + "[" + std::to_string(report.worst_index) + "]");
    return static_cast<int>(ErrorKind::Numeric);
  }
  return 0;
}

bool lower_is_better(const std::string& metric) { return metric == "mse" || metric == "mape"; }

int cmd_compare(const Options& o, std::ostream& out, const Log& log) {
  if (o.runs.size() < 2) throw UsageError("compare needs at least two run directories");
  struct Run {
    std::string name;
    std::vector<double> values;
    double mean = 0.0;
    double sd = 0.0;
  };
  std::vector<Run> runs;
  std::optional<std::vector<std::string>> columns;
  for (const auto& dir : o.runs) {
    if (!fs::is_directory(dir)) throw DataError("run directory '" + dir + "' does not exist");
    std::vector<fs::path> reports;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() == "eval_report.tsv") reports.push_back(e.path());
    }
    std::sort(reports.begin(), reports.end());
    if (reports.size() < 2) {
      throw DataError("run directory '" + dir + "' holds " + std::to_string(reports.size()) +
                      " eval reports; at least two seeds are required");
    }
    Run run{dir, {}, 0.0, 0.0};
    for (const auto& p : reports) {
      const auto rep = EvalReport::from_tsv(p);
      std::vector<std::string> names;
      std::optional<double> value;
      for (const auto& [name, v] : rep.columns()) {
        names.push_back(name);
        if (name == o.metric) value = v;
      }
      if (!columns) columns = names;
      if (names != *columns) throw DataError(p.string() + ": metric set differs from the other reports");
      if (!value) throw DataError(p.string() + ": no metric '" + o.metric + "'");
      run.values.push_back(*value);
    }
    for (double v : run.values) run.mean += v;
    run.mean /= static_cast<double>(run.values.size());
    for (double v : run.values) run.sd += (v - run.mean) * (v - run.mean);
    run.sd = std::sqrt(run.sd / static_cast<double>(run.values.size() - 1));
    runs.push_back(std::move(run));
  }
  const bool lower = lower_is_better(o.metric);
  auto better = [&](double a, double b) { return lower ? a < b : a > b; };
  out << "run\tn\tmean\tstddev\tversus\tt\tp_value\tsignificant\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::size_t rival = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < runs.size(); ++j) {
      if (j != i && better(runs[j].mean, runs[rival].mean)) rival = j;
    }
    const auto t = t_test_two_sample(runs[i].values, runs[rival].values, o.alpha);
    const bool star = t.significant && better(runs[i].mean, runs[rival].mean);
    out << runs[i].name << "\t" << runs[i].values.size() << "\t" << tsv::format_double(runs[i].mean) << "\t"
        << tsv::format_double(runs[i].sd) << "\t" << runs[rival].name << "\t" << tsv::format_double(t.t) << "\t"
        << tsv::format_double(t.p_value) << "\t" << (star ? "*" : "") << "\n";
  }
  log.debug("compared " + std::to_string(runs.size()) + " runs on " + o.metric);
  return 0;
}

}  // namespace

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = path.string() + ":" + std::to_string(n);
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw UsageError(where + ": expected 'key = value'");
    if (!kv.emplace(key, value).second) throw UsageError(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

std::map<std::string, std::string> snapshot_outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    auto bytes = tsv::read_file(e.path());
    if (e.path().filename() == "timing.tsv") continue;
    if (e.path().filename() == "manifest.tsv") {
      std::string kept;
      std::istringstream in(bytes);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.starts_with("timestamp\t")) kept += line + "\n";
      }
      bytes = kept;
    }
    files.emplace(rel, std::move(bytes));
  }
  return files;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Log log(err);
  Options o;
  CLI::App app{"pgrec: price-guided group recommendation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto data = [&](CLI::App* s) { s->add_option("--data", o.data, "dataset directory"); };
  auto outdir = [&](CLI::App* s, const char* help) { s->add_option("--out", o.out, help); };
  auto seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "random seed"); };
  auto config = [&](CLI::App* s) { s->add_option("--config", o.config, "key = value overrides"); };
  auto threads = [&](CLI::App* s) { s->add_option("--threads", o.threads, "worker threads"); };
  auto training = [&](CLI::App* s) {
    s->add_option("--loss", o.loss, "pairwise | mse | bce");
    s->add_option("--beta", o.beta, "PGUsA beta");
    s->add_option("--aggregator", o.aggregator, "pgusa | vanilla | pgusa+vanilla | average");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  outdir(synth, "output directory");
  seed(synth);
  config(synth);

  auto* validate = app.add_subcommand("validate", "load and check a dataset");
  data(validate);
  outdir(validate, "write id maps here");
  config(validate);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  data(train_cmd);
  outdir(train_cmd, "run directory");
  seed(train_cmd);
  config(train_cmd);
  threads(train_cmd);
  training(train_cmd);
  train_cmd->add_option("--model", o.model, "pgusa | agree | ncf | ncf-avg | ncf-exp | popularity");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  data(evaluate);
  outdir(evaluate, "report directory");
  seed(evaluate);
  config(evaluate);
  threads(evaluate);
  evaluate->add_option("--model", o.model, "checkpoint file, or 'popularity'");
  evaluate->add_option("--k", o.k, "comma-separated cutoffs");
  evaluate->add_flag("--dump-rankings", o.dump_rankings, "write rankings.tsv");
  evaluate->add_flag("--dump-weights", o.dump_weights, "write member_weights.tsv");

  auto* sweep = app.add_subcommand("sweep-beta", "train and evaluate once per beta");
  data(sweep);
  outdir(sweep, "output directory");
  seed(sweep);
  config(sweep);
  threads(sweep);
  training(sweep);
  sweep->add_option("--model", o.model, "group-attention model (default pgusa)");
  sweep->add_option("--betas", o.betas, "comma-separated beta values");
  sweep->add_option("--k", o.k, "comma-separated cutoffs");

  auto* influence = app.add_subcommand("analyze-influence", "most-influential-member analysis");
  data(influence);
  outdir(influence, "output directory");
  seed(influence);
  config(influence);
  threads(influence);
  influence->add_option("--model", o.model, "checkpoint file");
  influence->add_option("--truth", o.truth, "generator influence_truth.tsv instead of a model");

  auto* gmv = app.add_subcommand("analyze-gmv", "cumulative GMV over full-catalog ranks");
  data(gmv);
  outdir(gmv, "output directory");
  seed(gmv);
  config(gmv);
  threads(gmv);
  gmv->add_option("--model", o.model, "checkpoint file, or 'popularity'");
  gmv->add_option("--max-rank", o.max_rank, "last rank (default: all items)");
  gmv->add_option("--group", o.group, "single group id (default: every group)");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of a model's gradients");
  seed(grad);
  grad->add_option("--model", o.model, "pgusa | agree | ncf");
  grad->add_option("--aggregator", o.aggregator, "aggregator override");
  grad->add_option("--beta", o.beta, "PGUsA beta");
  grad->add_option("--tolerance", o.tolerance, "maximum relative error");
  grad->add_flag("--corrupt-backward", o.corrupt, "negate analytic gradients (negative control)");

  auto* compare = app.add_subcommand("compare", "Welch t-tests across multi-seed run directories");
  compare->add_option("runs", o.runs, "run directories")->required();
  compare->add_option("--metric", o.metric, "metric column (default hr@10)");
  compare->add_option("--alpha", o.alpha, "significance level");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "pgrec: " << e.what() << "\n" << app.help();
    return static_cast<int>(ErrorKind::Usage);
  }

  try {
    if (synth->parsed()) return cmd_synth(o, args, out, log);
    if (validate->parsed()) return cmd_validate(o, args, out, log);
    if (train_cmd->parsed()) return cmd_train(o, args, out, log);
    if (evaluate->parsed()) return cmd_evaluate(o, args, out, log);
    if (sweep->parsed()) return cmd_sweep(o, args, out, log);
    if (influence->parsed()) return cmd_analyze_influence(o, args, out, log);
    if (gmv->parsed()) return cmd_analyze_gmv(o, args, out, log);
    if (grad->parsed()) return cmd_grad_check(o, out, log);
    if (compare->parsed()) return cmd_compare(o, out, log);
  } catch (const Error& e) {
    log.error(e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    log.error(e.what());
    return static_cast<int>(ErrorKind::Data);
  }
  return static_cast<int>(ErrorKind::Usage);
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pgrec::cli
