#include "relocl/sim/routine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace relocl::sim {

using graph::GraphSnapshot;
using graph::Timestamp;

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::span<const GraphSnapshot> TaskDataset::day(int d) const {
  const auto begin = day_start.at(static_cast<std::size_t>(d));
  const auto end = static_cast<std::size_t>(d + 1) < day_start.size()
                       ? day_start[static_cast<std::size_t>(d + 1)]
                       : snapshots.size();
  return std::span<const GraphSnapshot>(snapshots).subspan(begin, end - begin);
}

void validate_spec(const HouseholdSpec& spec) {
  if (!spec.catalog) throw SimError("household '" + spec.name + "' has no catalog");
  const auto& cat = *spec.catalog;
  if (static_cast<int>(spec.initial_location.size()) != cat.object_count()) {
    throw SimError("initial placement must cover every object");
  }
  for (int loc : spec.initial_location) {
    if (loc < 0 || loc >= cat.location_count()) throw SimError("initial placement names an unknown location");
  }
  for (const auto& a : spec.activities) {
    if (!(a.probability >= 0.0 && a.probability <= 1.0)) {
      throw SimError("activity '" + a.name + "': probability outside [0, 1]");
    }
    if (!(a.jitter_sd >= 0.0)) throw SimError("activity '" + a.name + "': negative jitter");
    if (!(a.minute_of_day >= 0.0 && a.minute_of_day < 1440.0)) {
      throw SimError("activity '" + a.name + "': nominal time outside the day");
    }
    for (const auto& m : a.moves) {
      if (m.object < 0 || m.object >= cat.object_count() || m.from_location < 0 ||
          m.from_location >= cat.location_count() || m.to_location < 0 ||
          m.to_location >= cat.location_count()) {
        throw SimError("activity '" + a.name + "': move references an unknown entity");
      }
      if (m.from_location == m.to_location) throw SimError("activity '" + a.name + "': no-op move");
    }
  }
}

TaskDataset generate_dataset(const HouseholdSpec& spec, int days, int sample_interval,
                             std::uint64_t seed, int task) {
  validate_spec(spec);
  if (days < 1) throw SimError("days must be >= 1");
  if (sample_interval <= 0 || 1440 % sample_interval != 0) {
    throw SimError("sample interval must divide 1440");
  }
  const auto& cat = *spec.catalog;

  TaskDataset ds;
  ds.task = task;
  ds.household = spec.name;
  ds.catalog = spec.catalog;
  ds.interval = sample_interval;
  ds.activity_fires.assign(spec.activities.size(), 0);
  ds.snapshots.reserve(static_cast<std::size_t>(days) * static_cast<std::size_t>(1440 / sample_interval));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Fired {
    double minute;
    std::size_t activity;
  };

  for (int d = 0; d < days; ++d) {
    std::vector<Fired> fired;
    for (std::size_t a = 0; a < spec.activities.size(); ++a) {
      const auto& act = spec.activities[a];
      // Both draws happen for every activity so the stream does not depend on outcomes.
      const double u = coin(rng);
      const double z = gauss(rng);
      if (u >= act.probability) continue;
      const double when = std::clamp(act.minute_of_day + act.jitter_sd * z, 0.0, 1439.0);
      fired.push_back({when, a});
      ++ds.activity_fires[a];
    }
    std::stable_sort(fired.begin(), fired.end(),
                     [](const Fired& x, const Fired& y) { return x.minute < y.minute; });

    std::vector<int> where = spec.initial_location;
    std::size_t next = 0;
    ds.day_start.push_back(ds.snapshots.size());
    ds.day_split.push_back(Split::Train);
    for (int m = 0; m < 1440; m += sample_interval) {
      while (next < fired.size() && fired[next].minute <= static_cast<double>(m)) {
        for (const auto& mv : spec.activities[fired[next].activity].moves) {
          auto& slot = where[static_cast<std::size_t>(mv.object)];
          if (slot != mv.from_location) {
            ++ds.skipped_moves;
            continue;
          }
          slot = mv.to_location;
        }
        ++next;
      }
      GraphSnapshot s;
      s.task = task;
      s.time = Timestamp{static_cast<std::int64_t>(d) * graph::kMinutesPerDay + m};
      s.catalog = spec.catalog;
      s.parent.resize(where.size());
      for (std::size_t o = 0; o < where.size(); ++o) s.parent[o] = cat.location_node(where[o]);
      ds.snapshots.push_back(std::move(s));
    }
    // Moves fired after the last snapshot of the day are never observed.
    for (; next < fired.size(); ++next) {
      for (const auto& mv : spec.activities[fired[next].activity].moves) {
        auto& slot = where[static_cast<std::size_t>(mv.object)];
        if (slot != mv.from_location) {
          ++ds.skipped_moves;
        } else {
          slot = mv.to_location;
        }
      }
    }
  }
  return ds;
}

void label_split(TaskDataset& ds, int train_days, int test_days) {
  if (train_days < 0 || test_days < 0 || train_days + test_days > ds.day_count()) {
    throw SimError("split needs " + std::to_string(train_days + test_days) + " days, dataset has " +
                   std::to_string(ds.day_count()));
  }
  for (int d = 0; d < ds.day_count(); ++d) {
    ds.day_split[static_cast<std::size_t>(d)] = d < train_days ? Split::Train : Split::Test;
  }
}

std::pair<TaskDataset, TaskDataset> split_train_test(const TaskDataset& ds, int train_days,
                                                     int test_days) {
  if (train_days < 0 || test_days < 0 || train_days + test_days > ds.day_count()) {
    throw SimError("split needs " + std::to_string(train_days + test_days) + " days, dataset has " +
                   std::to_string(ds.day_count()));
  }
  auto slice = [&](int first, int count, Split label) {
    TaskDataset out;
    out.task = ds.task;
    out.household = ds.household;
    out.catalog = ds.catalog;
    out.interval = ds.interval;
    out.first_day = ds.first_day + first;
    out.activity_fires = ds.activity_fires;
    for (int d = first; d < first + count; ++d) {
      out.day_start.push_back(out.snapshots.size());
      out.day_split.push_back(label);
      for (const auto& s : ds.day(d)) out.snapshots.push_back(s);
    }
    return out;
  };
  return {slice(0, train_days, Split::Train), slice(train_days, test_days, Split::Test)};
}

graph::CatalogPtr builtin_catalog() {
  static const graph::CatalogPtr cat = std::make_shared<const graph::EntityCatalog>(
      graph::EntityCatalog::from_ids({"mug", "plate", "bowl", "spoon", "glass", "laptop", "book",
                                      "keys", "remote", "pan"},
                                     {"house", "cabinet", "table", "sink", "desk", "shelf", "counter", "drawer", "sofa",
                                      "fridge", "dishwasher", "bed", "bag"},
                                     "house"));
  return cat;
}

std::vector<int> dominant_destinations(const HouseholdSpec& spec) {
  const auto& cat = *spec.catalog;
  std::vector<std::vector<double>> weight(static_cast<std::size_t>(cat.object_count()),
                                          std::vector<double>(static_cast<std::size_t>(cat.location_count()), 0.0));
  for (const auto& a : spec.activities) {
    for (const auto& m : a.moves) {
      weight[static_cast<std::size_t>(m.object)][static_cast<std::size_t>(m.to_location)] += a.probability;
    }
  }
  std::vector<int> out;
  for (std::size_t o = 0; o < weight.size(); ++o) {
    const auto& w = weight[o];
    const auto best = std::max_element(w.begin(), w.end());
    // an object that never moves stays home
    out.push_back(*best > 0.0 ? static_cast<int>(best - w.begin()) : spec.initial_location.at(o));
  }
  return out;
}

namespace {

// One household. The active day (06:00 to 22:00) is cut into three windows,
// roughly morning, afternoon and evening. In each window every object leaves
// its home, is carried on to a second spot one slot later and goes back home a
// few slots after that. Nominal times sit mid-slot so small jitter rarely
// crosses a sampling boundary.
HouseholdSpec random_household(const graph::CatalogPtr& cat, int index, std::mt19937_64& rng) {
  HouseholdSpec h;
  h.name = "household_" + std::to_string(index);
  h.catalog = cat;
  const int n_obj = cat->object_count();
  const int n_loc = cat->location_count();
  std::vector<int> places;
  for (int l = 0; l < n_loc; ++l) {
    if (l != cat->root_location()) places.push_back(l);
  }
  auto pick = [&](auto&& excluded) {
    std::vector<int> options;
    for (int l : places) {
      if (!excluded(l)) options.push_back(l);
    }
    return options[static_cast<std::size_t>(rng() % options.size())];
  };

  h.initial_location.resize(static_cast<std::size_t>(n_obj));
  for (auto& home : h.initial_location) home = pick([](int) { return false; });

  constexpr double kJitter = 1.5;
  constexpr double kLeaveProbability = 0.9;
  constexpr int kEpisodes = 3;
  constexpr int kFirstSlot = 6 * 6;
  constexpr int kLastSlot = 22 * 6;
  constexpr int kWindow = (kLastSlot - kFirstSlot) / kEpisodes;
  std::uniform_int_distribution<int> stay(2, 6);
  auto at = [](int slot) { return std::min(1439.0, slot * 10.0 + 5.0); };
  for (int o = 0; o < n_obj; ++o) {
    const int home = h.initial_location[static_cast<std::size_t>(o)];
    const std::string obj = cat->object(o).id;
    for (int e = 0; e < kEpisodes; ++e) {
      const int first = pick([&](int l) { return l == home; });
      const int second = pick([&](int l) { return l == home || l == first; });
      const int len = 1 + stay(rng);
      std::uniform_int_distribution<int> start(kFirstSlot + e * kWindow, kFirstSlot + (e + 1) * kWindow - len - 2);
      const int slot = start(rng);
      const std::string tag = obj + "_" + std::to_string(e);
      h.activities.push_back({tag + "_out", at(slot), kJitter, kLeaveProbability, {{o, home, first}}});
      h.activities.push_back({tag + "_carry", at(slot + 1), kJitter, 1.0, {{o, first, second}}});
      h.activities.push_back({tag + "_return", at(slot + len), kJitter, 1.0, {{o, second, home}}});
    }
  }
  return h;
}

double dominant_disagreement(const HouseholdSpec& a, const HouseholdSpec& b) {
  const auto da = dominant_destinations(a);
  const auto db = dominant_destinations(b);
  int differ = 0;
  for (std::size_t i = 0; i < da.size(); ++i) differ += da[i] != db[i] ? 1 : 0;
  return static_cast<double>(differ) / static_cast<double>(da.size());
}

}  // namespace

std::vector<HouseholdSpec> builtin_household_suite(int n, std::uint64_t seed) {
  if (n < 1) throw SimError("suite size must be >= 1");
  const auto cat = builtin_catalog();
  std::mt19937_64 rng(seed);
  std::vector<HouseholdSpec> suite;
  while (static_cast<int>(suite.size()) < n) {
    auto candidate = random_household(cat, static_cast<int>(suite.size()), rng);
    const bool drifts = std::all_of(suite.begin(), suite.end(), [&](const HouseholdSpec& prev) {
      return dominant_disagreement(prev, candidate) >= 0.3 &&
             prev.initial_location != candidate.initial_location;
    });
    if (drifts) suite.push_back(std::move(candidate));
  }
  return suite;
}

}  // namespace relocl::sim
