// Household environment graphs: objects hang off locations by a single
// "is-in" edge, so a snapshot is just each object's parent.
#ifndef RELOCL_GRAPH_GRAPH_HPP
#define RELOCL_GRAPH_GRAPH_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace relocl::graph {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Global node index: objects occupy [0, object_count), locations follow.
using NodeIndex = int;
inline constexpr NodeIndex kNoParent = -1;

inline constexpr std::int64_t kMinutesPerDay = 1440;

struct Entity {
  std::string id;
  std::string name;

  friend bool operator==(const Entity&, const Entity&) = default;
};

class EntityCatalog {
 public:
  EntityCatalog(std::vector<Entity> objects, std::vector<Entity> locations, int root_location);

  // Convenience: ids double as names.
  static EntityCatalog from_ids(const std::vector<std::string>& objects,
                                const std::vector<std::string>& locations,
                                const std::string& root);

  [[nodiscard]] int object_count() const { return static_cast<int>(objects_.size()); }
  [[nodiscard]] int location_count() const { return static_cast<int>(locations_.size()); }
  [[nodiscard]] int node_count() const { return object_count() + location_count(); }
  [[nodiscard]] int root_location() const { return root_; }

  [[nodiscard]] const std::vector<Entity>& objects() const { return objects_; }
  [[nodiscard]] const std::vector<Entity>& locations() const { return locations_; }
  [[nodiscard]] const Entity& object(int i) const { return objects_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] const Entity& location(int i) const {
    return locations_.at(static_cast<std::size_t>(i));
  }

  [[nodiscard]] NodeIndex location_node(int location) const { return object_count() + location; }
  [[nodiscard]] bool is_object(NodeIndex n) const { return n >= 0 && n < object_count(); }
  [[nodiscard]] bool is_location(NodeIndex n) const {
    return n >= object_count() && n < node_count();
  }
  // Location index of a location node; throws for anything else.
  [[nodiscard]] int location_index(NodeIndex n) const;

  [[nodiscard]] std::optional<int> find_object(const std::string& id) const;
  [[nodiscard]] std::optional<int> find_location(const std::string& id) const;
  // Object or location node with this id.
  [[nodiscard]] std::optional<NodeIndex> find_node(const std::string& id) const;
  [[nodiscard]] const std::string& node_id(NodeIndex n) const;

  friend bool operator==(const EntityCatalog&, const EntityCatalog&) = default;

 private:
  std::vector<Entity> objects_;
  std::vector<Entity> locations_;
  int root_ = 0;
};

using CatalogPtr = std::shared_ptr<const EntityCatalog>;

bool same_catalog(const CatalogPtr& a, const CatalogPtr& b);

struct Timestamp {
  std::int64_t minutes = 0;  // since stream start; the stream starts on day-of-week 0 at 00:00

  [[nodiscard]] std::int64_t day() const { return minutes / kMinutesPerDay; }
  [[nodiscard]] int minute_of_day() const { return static_cast<int>(minutes % kMinutesPerDay); }
  [[nodiscard]] int day_of_week() const { return static_cast<int>(day() % 7); }

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

inline constexpr std::size_t kTimeEncodingSize = 4;
using TimeEncoding = std::array<double, kTimeEncodingSize>;

// sin/cos of the daily and weekly phase.
TimeEncoding time_encoding(Timestamp t);

struct GraphSnapshot {
  int task = 0;
  Timestamp time;
  std::vector<NodeIndex> parent;  // indexed by object
  CatalogPtr catalog;

  [[nodiscard]] TimeEncoding encoding() const { return time_encoding(time); }
  // Location index of object's parent; the snapshot must be valid.
  [[nodiscard]] int parent_location(int object) const;

  friend bool operator==(const GraphSnapshot& a, const GraphSnapshot& b);
};

struct ParentChange {
  int object = 0;
  NodeIndex from = kNoParent;
  NodeIndex to = kNoParent;

  friend bool operator==(const ParentChange&, const ParentChange&) = default;
};

struct GraphDelta {
  std::vector<ParentChange> changes;
  std::optional<Timestamp> to_time;  // timestamp of the later snapshot, if known

  [[nodiscard]] bool empty() const { return changes.empty(); }
  friend bool operator==(const GraphDelta&, const GraphDelta&) = default;
};

struct RelocationEvent {
  int object = 0;
  int from_location = 0;
  int to_location = 0;
  Timestamp window_start;
  Timestamp window_end;

  friend bool operator==(const RelocationEvent&, const RelocationEvent&) = default;
};

enum class ViolationKind { MissingParent, ParentNotLocation, UnknownId, MissingCatalog };

struct Violation {
  ViolationKind kind;
  int object = -1;
  std::string message;
};

GraphDelta snapshot_diff(const GraphSnapshot& later, const GraphSnapshot& earlier);
GraphSnapshot apply_delta(const GraphSnapshot& base, const GraphDelta& delta);
// Net effect of consecutive deltas: objects that end where they started drop out.
GraphDelta compose_deltas(std::span<const GraphDelta> deltas);
std::vector<RelocationEvent> extract_relocations(const GraphSnapshot& at_t,
                                                 const GraphSnapshot& at_t_plus_delta);
std::vector<Violation> validate_snapshot(const GraphSnapshot& g);

const char* to_string(ViolationKind kind);

}  // namespace relocl::graph

#endif  // RELOCL_GRAPH_GRAPH_HPP
