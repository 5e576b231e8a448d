#include "pgrec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "pgrec/error.hpp"
#include "pgrec/tsv.hpp"

namespace pgrec {

std::string_view to_string(FeedbackKind kind) {
  return kind == FeedbackKind::Implicit ? "implicit" : "explicit";
}

FeedbackKind parse_feedback_kind(std::string_view s) {
  if (s == "implicit") return FeedbackKind::Implicit;
  if (s == "explicit") return FeedbackKind::Explicit;
  throw UsageError("unknown feedback kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- InteractionSet

namespace {

bool row_col_less(const Interaction& a, const Interaction& b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

}  // namespace

InteractionSet::InteractionSet(std::vector<Interaction> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), row_col_less);
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i - 1].row == entries_[i].row && entries_[i - 1].col == entries_[i].col) {
      throw DataError("duplicate interaction (" + std::to_string(entries_[i].row) + ", " +
                      std::to_string(entries_[i].col) + ")");
    }
  }
}

const Interaction* InteractionSet::find(int row, int col) const {
  Interaction key;
  key.row = row;
  key.col = col;
  auto it = std::lower_bound(entries_.begin(), entries_.end(), key, row_col_less);
  if (it != entries_.end() && it->row == row && it->col == col) return &*it;
  return nullptr;
}

std::span<const Interaction> InteractionSet::row(int r) const {
  auto lo = std::partition_point(entries_.begin(), entries_.end(),
                                 [r](const Interaction& e) { return e.row < r; });
  auto hi = std::partition_point(lo, entries_.end(),
                                 [r](const Interaction& e) { return e.row == r; });
  return {lo, hi};
}

// ---------------------------------------------------------------- IdMap

IdMap::IdMap(std::vector<std::int64_t> originals) : originals_(std::move(originals)) {
  std::sort(originals_.begin(), originals_.end());
  originals_.erase(std::unique(originals_.begin(), originals_.end()), originals_.end());
}

std::optional<int> IdMap::find(std::int64_t original) const {
  auto it = std::lower_bound(originals_.begin(), originals_.end(), original);
  if (it == originals_.end() || *it != original) return std::nullopt;
  return static_cast<int>(it - originals_.begin());
}

int IdMap::dense(std::int64_t original) const {
  if (auto d = find(original)) return *d;
  throw DataError("unknown id " + std::to_string(original));
}

std::string IdMap::to_tsv() const {
  std::string out = "original_id\tdense_index\n";
  for (std::size_t i = 0; i < originals_.size(); ++i) {
    out += std::to_string(originals_[i]) + "\t" + std::to_string(i) + "\n";
  }
  return out;
}

IdMap IdMap::from_tsv(const std::filesystem::path& path) {
  const auto table = tsv::read(path);
  std::vector<std::int64_t> ids(table.rows.size());
  for (const auto& row : table.rows) {
    const auto dense = tsv::parse_int(table, row, 1);
    if (dense < 0 || static_cast<std::size_t>(dense) >= ids.size()) {
      throw DataError(path.string() + ":" + std::to_string(row.line) + ": dense index out of range");
    }
    ids[static_cast<std::size_t>(dense)] = tsv::parse_int(table, row, 0);
  }
  IdMap map(ids);
  if (map.size() != ids.size() || !std::equal(ids.begin(), ids.end(), map.originals_.begin())) {
    throw DataError(path.string() + ": id map is not a sorted bijection");
  }
  return map;
}

// ---------------------------------------------------------------- Dataset hashing

namespace {

void hash_set(std::ostringstream& out, std::string_view name, const InteractionSet& set,
              const IdMap& rows, const IdMap& cols) {
  out << name << ' ' << set.size() << '\n';
  for (const auto& e : set.entries()) {
    out << rows.original(e.row) << ' ' << cols.original(e.col) << ' '
        << tsv::format_double(e.value) << ' ';
    if (e.timestamp) out << *e.timestamp;
    out << '\n';
  }
}

}  // namespace

std::string Dataset::hash() const {
  std::ostringstream out;
  out << to_string(feedback_kind) << '\n';
  for (const auto& item : items) {
    out << item_ids.original(item.id) << ' ' << tsv::format_double(item.raw_price) << '\n';
  }
  for (const auto& g : groups) {
    out << 'g' << group_ids.original(g.id);
    for (int u : g.members) out << ' ' << user_ids.original(u);
    out << '\n';
  }
  hash_set(out, "X", user_item, user_ids, item_ids);
  hash_set(out, "Xt", user_item_test, user_ids, item_ids);
  hash_set(out, "Y", group_item, group_ids, item_ids);
  hash_set(out, "Yv", group_item_valid, group_ids, item_ids);
  hash_set(out, "Yt", group_item_test, group_ids, item_ids);
  return tsv::hex64(tsv::fnv1a(out.str()));
}

std::string Dataset::id_map_hash() const {
  auto h = tsv::fnv1a(user_ids.to_tsv());
  h = tsv::fnv1a(item_ids.to_tsv(), h);
  h = tsv::fnv1a(group_ids.to_tsv(), h);
  return tsv::hex64(h);
}

void write_id_maps(const Dataset& dataset, const std::filesystem::path& dir) {
  tsv::write_file(dir / "users.idmap.tsv", dataset.user_ids.to_tsv());
  tsv::write_file(dir / "items.idmap.tsv", dataset.item_ids.to_tsv());
  tsv::write_file(dir / "groups.idmap.tsv", dataset.group_ids.to_tsv());
}

// ---------------------------------------------------------------- normalization

std::vector<double> normalize_price(std::span<const double> raw_prices) {
  if (raw_prices.empty()) throw DataError("normalize_price: empty price list");
  for (double p : raw_prices) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw DataError("normalize_price: non-positive price " + tsv::format_double(p));
    }
  }
  const auto [lo, hi] = std::minmax_element(raw_prices.begin(), raw_prices.end());
  const double p_min = *lo;
  const double p_max = *hi;
  std::vector<double> alpha(raw_prices.size(), 1.0);
  if (p_max == p_min) return alpha;
  for (std::size_t i = 0; i < raw_prices.size(); ++i) {
    alpha[i] = 0.01 + 0.99 * (p_max - raw_prices[i]) / (p_max - p_min);
  }
  return alpha;
}

std::vector<double> normalize_frequency(std::span<const int> counts) {
  if (counts.empty()) throw DataError("normalize_frequency: empty count list");
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  const int c_min = *lo;
  const int c_max = *hi;
  std::vector<double> freq(counts.size(), 2.5);
  if (c_max == c_min) return freq;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    freq[i] = 5.0 * static_cast<double>(counts[i] - c_min) / static_cast<double>(c_max - c_min);
  }
  return freq;
}

// ---------------------------------------------------------------- group interactions

InteractionSet derive_group_interactions(std::span<const GroupDef> groups,
                                         const InteractionSet& user_item, int min_buyers,
                                         FeedbackKind kind) {
  if (min_buyers < 1) throw UsageError("min_buyers must be >= 1");
  struct Tally {
    int buyers = 0;
    double value_sum = 0.0;
    std::vector<std::int64_t> stamps;
    bool all_stamped = true;
  };
  std::vector<Interaction> out;
  for (const auto& g : groups) {
    std::map<int, Tally> tally;
    for (int u : g.members) {
      for (const auto& e : user_item.row(u)) {
        auto& t = tally[e.col];
        ++t.buyers;
        t.value_sum += e.value;
        if (e.timestamp) {
          t.stamps.push_back(*e.timestamp);
        } else {
          t.all_stamped = false;
        }
      }
    }
    for (auto& [item, t] : tally) {
      if (t.buyers < min_buyers) continue;
      Interaction e;
      e.row = g.id;
      e.col = item;
      e.value = kind == FeedbackKind::Implicit ? 1.0 : t.value_sum / t.buyers;
      if (t.all_stamped) {
        // the moment the buyer threshold was reached
        std::sort(t.stamps.begin(), t.stamps.end());
        e.timestamp = t.stamps[static_cast<std::size_t>(min_buyers - 1)];
      }
      out.push_back(e);
    }
  }
  return InteractionSet(std::move(out));
}

InteractionSet derive_group_interactions(const Dataset& dataset, int min_buyers) {
  return derive_group_interactions(dataset.groups, dataset.user_item, min_buyers,
                                   dataset.feedback_kind);
}

// ---------------------------------------------------------------- file reading

DataPaths DataPaths::in_directory(const std::filesystem::path& dir) {
  DataPaths p;
  p.items = dir / "items.tsv";
  p.groups = dir / "groups.tsv";
  p.user_items = dir / "user_items.tsv";
  if (std::filesystem::exists(dir / "group_items.tsv")) p.group_items = dir / "group_items.tsv";
  return p;
}

namespace {

std::vector<RawInteraction> read_interactions(const std::filesystem::path& path) {
  const auto table = tsv::read(path);
  std::vector<RawInteraction> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.fields.size() < 3 || row.fields.size() > 4) {
      throw DataError(path.string() + ":" + std::to_string(row.line) +
                      ": expected 3 or 4 tab-separated fields, got " +
                      std::to_string(row.fields.size()));
    }
    RawInteraction r;
    r.row_id = tsv::parse_int(table, row, 0);
    r.item_id = tsv::parse_int(table, row, 1);
    r.value = tsv::parse_double(table, row, 2);
    if (row.fields.size() == 4) r.timestamp = tsv::parse_int(table, row, 3);
    r.line = row.line;
    out.push_back(r);
  }
  return out;
}

}  // namespace

RawData read_raw(const DataPaths& paths) {
  RawData raw;
  raw.items_source = paths.items.string();
  raw.groups_source = paths.groups.string();
  raw.user_items_source = paths.user_items.string();

  const auto items = tsv::read(paths.items);
  for (const auto& row : items.rows) {
    if (row.fields.size() != 2) {
      throw DataError(paths.items.string() + ":" + std::to_string(row.line) +
                      ": expected 2 tab-separated fields");
    }
    raw.items.push_back({tsv::parse_int(items, row, 0), tsv::parse_double(items, row, 1), row.line});
  }
  const auto groups = tsv::read(paths.groups);
  for (const auto& row : groups.rows) {
    if (row.fields.size() != 2) {
      throw DataError(paths.groups.string() + ":" + std::to_string(row.line) +
                      ": expected 2 tab-separated fields");
    }
    raw.memberships.push_back(
        {tsv::parse_int(groups, row, 0), tsv::parse_int(groups, row, 1), row.line});
  }
  raw.user_items = read_interactions(paths.user_items);
  if (paths.group_items) {
    raw.group_items_source = paths.group_items->string();
    raw.group_items = read_interactions(*paths.group_items);
  }
  return raw;
}

// ---------------------------------------------------------------- build

namespace {

std::string at(const std::string& source, std::size_t line) {
  return line > 0 ? source + ":" + std::to_string(line) : source;
}

struct Located {
  Interaction e;
  std::size_t line;
};

InteractionSet to_set(std::vector<Located> rows, const std::string& source, const char* what) {
  std::sort(rows.begin(), rows.end(),
            [](const Located& a, const Located& b) {
              if (a.e.row != b.e.row) return a.e.row < b.e.row;
              if (a.e.col != b.e.col) return a.e.col < b.e.col;
              return a.line < b.line;
            });
  std::vector<Interaction> entries;
  entries.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i - 1].e.row == rows[i].e.row && rows[i - 1].e.col == rows[i].e.col) {
      throw DataError(at(source, rows[i].line) + ": duplicate " + what + " pair (first seen at line " +
                      std::to_string(rows[i - 1].line) + ")");
    }
    entries.push_back(rows[i].e);
  }
  return InteractionSet(std::move(entries));
}

void check_value(FeedbackKind kind, double v, const std::string& where) {
  if (kind == FeedbackKind::Implicit && v != 1.0) {
    throw DataError(where + ": implicit feedback value must be 1, got " + tsv::format_double(v));
  }
  if (kind == FeedbackKind::Explicit && !(v > 0.0 && std::isfinite(v))) {
    throw DataError(where + ": explicit feedback value must be finite and > 0, got " +
                    tsv::format_double(v));
  }
}

bool all_stamped(const InteractionSet& s) {
  return std::all_of(s.entries().begin(), s.entries().end(),
                     [](const Interaction& e) { return e.timestamp.has_value(); });
}

std::vector<Interaction> seeded_pick(std::vector<Interaction> entries, double fraction,
                                     std::uint64_t seed, std::uint64_t stream,
                                     std::vector<Interaction>& rest) {
  auto rng = make_rng(seed, stream);
  for (std::size_t i = entries.size(); i > 1; --i) {
    std::swap(entries[i - 1], entries[uniform_index(rng, i)]);
  }
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(entries.size())));
  std::vector<Interaction> picked(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k));
  rest.assign(entries.begin() + static_cast<std::ptrdiff_t>(k), entries.end());
  return picked;
}

}  // namespace

Dataset build_dataset(const RawData& raw, const LoadConfig& config) {
  if (!(config.test_fraction >= 0.0 && config.test_fraction < 1.0) ||
      !(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
    throw UsageError("split fractions must lie in [0, 1)");
  }
  Dataset ds;

  // items
  {
    std::vector<std::int64_t> ids;
    for (const auto& it : raw.items) ids.push_back(it.item_id);
    ds.item_ids = IdMap(ids);
    if (ds.item_ids.size() != raw.items.size()) {
      std::map<std::int64_t, std::size_t> seen;
      for (const auto& it : raw.items) {
        if (auto [pos, fresh] = seen.emplace(it.item_id, it.line); !fresh) {
          throw DataError(at(raw.items_source, it.line) + ": duplicate item id " +
                          std::to_string(it.item_id));
        }
      }
    }
    if (raw.items.empty()) throw DataError(raw.items_source + ": no items");
    std::vector<double> prices(ds.item_ids.size());
    for (const auto& it : raw.items) {
      if (!(it.price > 0.0)) {
        throw DataError(at(raw.items_source, it.line) + ": non-positive price " +
                        tsv::format_double(it.price) + " for item " + std::to_string(it.item_id));
      }
      prices[static_cast<std::size_t>(ds.item_ids.dense(it.item_id))] = it.price;
    }
    const auto alpha = normalize_price(prices);
    for (std::size_t i = 0; i < prices.size(); ++i) {
      ds.items.push_back({static_cast<int>(i), prices[i], alpha[i]});
    }
  }

  // groups and users
  {
    std::vector<std::int64_t> gids;
    std::vector<std::int64_t> uids;
    for (const auto& m : raw.memberships) {
      gids.push_back(m.group_id);
      uids.push_back(m.user_id);
    }
    for (const auto& r : raw.user_items) uids.push_back(r.row_id);
    ds.group_ids = IdMap(gids);
    ds.user_ids = IdMap(uids);
    ds.groups.resize(ds.group_ids.size());
    for (std::size_t g = 0; g < ds.groups.size(); ++g) ds.groups[g].id = static_cast<int>(g);
    std::vector<std::vector<std::pair<int, std::size_t>>> members(ds.groups.size());
    for (const auto& m : raw.memberships) {
      members[static_cast<std::size_t>(ds.group_ids.dense(m.group_id))].push_back(
          {ds.user_ids.dense(m.user_id), m.line});
    }
    for (std::size_t g = 0; g < members.size(); ++g) {
      auto& list = members[g];
      std::sort(list.begin(), list.end());
      for (std::size_t i = 1; i < list.size(); ++i) {
        if (list[i].first == list[i - 1].first) {
          throw DataError(at(raw.groups_source, list[i].second) + ": user " +
                          std::to_string(ds.user_ids.original(list[i].first)) +
                          " listed twice in group " + std::to_string(ds.group_ids.original(static_cast<int>(g))));
        }
      }
      for (const auto& [u, line] : list) ds.groups[g].members.push_back(u);
    }
  }

  // feedback kind
  if (config.feedback_kind) {
    ds.feedback_kind = *config.feedback_kind;
  } else {
    bool all_one = std::all_of(raw.user_items.begin(), raw.user_items.end(),
                               [](const RawInteraction& r) { return r.value == 1.0; });
    if (raw.group_items) {
      all_one = all_one && std::all_of(raw.group_items->begin(), raw.group_items->end(),
                                       [](const RawInteraction& r) { return r.value == 1.0; });
    }
    ds.feedback_kind = all_one ? FeedbackKind::Implicit : FeedbackKind::Explicit;
  }

  // interactions
  std::vector<Located> x_rows;
  for (const auto& r : raw.user_items) {
    const auto where = at(raw.user_items_source, r.line);
    check_value(ds.feedback_kind, r.value, where);
    const auto item = ds.item_ids.find(r.item_id);
    if (!item) throw DataError(where + ": unknown item id " + std::to_string(r.item_id));
    x_rows.push_back({{ds.user_ids.dense(r.row_id), *item, r.value, r.timestamp}, r.line});
  }
  const InteractionSet x_all = to_set(std::move(x_rows), raw.user_items_source, "(user, item)");

  InteractionSet y_all;
  if (raw.group_items) {
    std::vector<Located> y_rows;
    for (const auto& r : *raw.group_items) {
      const auto where = at(raw.group_items_source, r.line);
      check_value(ds.feedback_kind, r.value, where);
      const auto group = ds.group_ids.find(r.row_id);
      if (!group) throw DataError(where + ": unknown group id " + std::to_string(r.row_id));
      const auto item = ds.item_ids.find(r.item_id);
      if (!item) throw DataError(where + ": unknown item id " + std::to_string(r.item_id));
      y_rows.push_back({{*group, *item, r.value, r.timestamp}, r.line});
    }
    y_all = to_set(std::move(y_rows), raw.group_items_source, "(group, item)");
  } else {
    y_all = derive_group_interactions(ds.groups, x_all, config.min_buyers, ds.feedback_kind);
  }

  // train / test split
  std::vector<Interaction> x_train, x_test, y_train, y_test;
  const bool by_time = !y_all.empty() && all_stamped(x_all) && all_stamped(y_all);
  if (by_time) {
    std::int64_t cutoff = 0;
    if (config.split_cutoff) {
      cutoff = *config.split_cutoff;
    } else {
      std::vector<std::int64_t> stamps;
      for (const auto& e : y_all.entries()) stamps.push_back(*e.timestamp);
      std::sort(stamps.begin(), stamps.end());
      auto idx = static_cast<std::size_t>(
          std::floor((1.0 - config.test_fraction) * static_cast<double>(stamps.size())));
      idx = std::min(idx, stamps.size() - 1);
      cutoff = config.test_fraction > 0.0 ? stamps[idx] : stamps.back() + 1;
    }
    for (const auto& e : x_all.entries()) (*e.timestamp < cutoff ? x_train : x_test).push_back(e);
    for (const auto& e : y_all.entries()) (*e.timestamp < cutoff ? y_train : y_test).push_back(e);
  } else {
    x_train.assign(x_all.entries().begin(), x_all.entries().end());
    std::vector<Interaction> all(y_all.entries().begin(), y_all.entries().end());
    y_test = seeded_pick(std::move(all), config.test_fraction, config.seed, streams::kTestSplit,
                         y_train);
  }
  std::vector<Interaction> y_fit;
  auto y_valid = seeded_pick(std::move(y_train), config.validation_fraction, config.seed,
                             streams::kValidationSplit, y_fit);

  ds.user_item = InteractionSet(std::move(x_train));
  ds.user_item_test = InteractionSet(std::move(x_test));
  ds.group_item = InteractionSet(std::move(y_fit));
  ds.group_item_valid = InteractionSet(std::move(y_valid));
  ds.group_item_test = InteractionSet(std::move(y_test));

  // user frequency from training interactions only
  std::vector<int> counts(ds.user_ids.size(), 0);
  for (const auto& e : ds.user_item.entries()) ++counts[static_cast<std::size_t>(e.row)];
  if (!counts.empty()) {
    const auto freq = normalize_frequency(counts);
    for (std::size_t u = 0; u < counts.size(); ++u) {
      ds.users.push_back({static_cast<int>(u), counts[u], freq[u]});
    }
  }
  return ds;
}

Dataset load_dataset(const DataPaths& paths, const LoadConfig& config) {
  return build_dataset(read_raw(paths), config);
}

// ---------------------------------------------------------------- negatives

NegativeSampler::NegativeSampler(int num_items, std::span<const InteractionSet* const> known)
    : num_items_(num_items) {
  for (const auto* set : known) {
    for (const auto& e : set->entries()) {
      if (e.row >= static_cast<int>(known_.size())) known_.resize(static_cast<std::size_t>(e.row) + 1);
      known_[static_cast<std::size_t>(e.row)].push_back(e.col);
    }
  }
  for (auto& row : known_) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
}

std::span<const int> NegativeSampler::known_for(int row) const {
  if (row < 0 || row >= static_cast<int>(known_.size())) return {};
  return known_[static_cast<std::size_t>(row)];
}

int NegativeSampler::eligible_count(int row) const {
  return num_items_ - static_cast<int>(known_for(row).size());
}

std::vector<int> NegativeSampler::sample(int row, int k, Rng& rng) const {
  const auto known = known_for(row);
  const int eligible = eligible_count(row);
  if (eligible < k) {
    throw DataError("row " + std::to_string(row) + " has only " + std::to_string(eligible) +
                    " eligible negatives, " + std::to_string(k) + " required");
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  auto is_known = [&](int item) { return std::binary_search(known.begin(), known.end(), item); };
  if (eligible >= 4 * k) {
    while (static_cast<int>(out.size()) < k) {
      const int item = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(num_items_)));
      if (is_known(item) || std::find(out.begin(), out.end(), item) != out.end()) continue;
      out.push_back(item);
    }
    return out;
  }
  // dense case: partial Fisher-Yates over the eligible list
  std::vector<int> pool;
  pool.reserve(static_cast<std::size_t>(eligible));
  for (int i = 0; i < num_items_; ++i) {
    if (!is_known(i)) pool.push_back(i);
  }
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   uniform_index(rng, pool.size() - static_cast<std::size_t>(i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<NegativeSample> sample_negatives(const InteractionSet& positives,
                                             const NegativeSampler& sampler, int k_per_positive,
                                             std::uint64_t seed, std::uint64_t stream) {
  std::vector<NegativeSample> out;
  out.reserve(positives.size());
  std::uint64_t index = 0;
  for (const auto& e : positives.entries()) {
    auto rng = make_rng(seed, stream, index++);
    out.push_back({e.row, e.col, sampler.sample(e.row, k_per_positive, rng)});
  }
  return out;
}

}  // namespace pgrec
