// Synthetic household routines: daily activities relocate objects, and the
// household is sampled into a stream of graph snapshots.
#ifndef RELOCL_SIM_ROUTINE_HPP
#define RELOCL_SIM_ROUTINE_HPP

#include "relocl/graph/graph.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace relocl::sim {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Move {
  int object = 0;
  int from_location = 0;
  int to_location = 0;
};

struct ActivitySpec {
  std::string name;
  double minute_of_day = 0.0;
  double jitter_sd = 0.0;
  double probability = 1.0;
  std::vector<Move> moves;
};

struct HouseholdSpec {
  std::string name;
  graph::CatalogPtr catalog;
  std::vector<ActivitySpec> activities;
  std::vector<int> initial_location;  // location index per object
};

enum class Split { Train, Test };

const char* to_string(Split s);

struct TaskDataset {
  int task = 0;
  std::string household;
  graph::CatalogPtr catalog;
  int interval = 10;    // minutes between snapshots
  int first_day = 0;    // day index of the first day held here
  std::vector<graph::GraphSnapshot> snapshots;
  std::vector<std::size_t> day_start;  // index of each day's first snapshot
  std::vector<Split> day_split;
  std::vector<int> activity_fires;     // days each activity fired (generation diagnostic)
  std::size_t skipped_moves = 0;       // unsatisfiable moves dropped during generation

  [[nodiscard]] int day_count() const { return static_cast<int>(day_start.size()); }
  [[nodiscard]] int snapshots_per_day() const { return static_cast<int>(1440 / interval); }
  // Snapshots of one day, in time order.
  [[nodiscard]] std::span<const graph::GraphSnapshot> day(int d) const;
  [[nodiscard]] Split split_of_day(int d) const { return day_split.at(static_cast<std::size_t>(d)); }
};

// Throws SimError describing the first inconsistency.
void validate_spec(const HouseholdSpec& spec);

// Each day starts from the initial placement; every activity fires with its
// probability at its nominal minute plus clamped Gaussian jitter, and the
// snapshot at minute m shows every move fired at or before m.
TaskDataset generate_dataset(const HouseholdSpec& spec, int days, int sample_interval,
                             std::uint64_t seed, int task = 0);

// Labels the first train_days as train and the next test_days as test.
void label_split(TaskDataset& ds, int train_days, int test_days);

// Chronological split by whole days.
std::pair<TaskDataset, TaskDataset> split_train_test(const TaskDataset& ds, int train_days,
                                                     int test_days);

graph::CatalogPtr builtin_catalog();

// Expected most frequent destination per object (probability weighted, ties
// to the lowest location index).
std::vector<int> dominant_destinations(const HouseholdSpec& spec);

// n households over builtin_catalog() with distinct placements and schedules;
// any two differ in the dominant destination of at least 30% of objects.
std::vector<HouseholdSpec> builtin_household_suite(int n, std::uint64_t seed);

}  // namespace relocl::sim

#endif  // RELOCL_SIM_ROUTINE_HPP
