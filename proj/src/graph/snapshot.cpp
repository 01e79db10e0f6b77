#include "relocl/graph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace relocl::graph {

namespace {

void require_same_catalog(const GraphSnapshot& a, const GraphSnapshot& b, const char* op) {
  if (!same_catalog(a.catalog, b.catalog)) throw GraphError(std::string(op) + ": catalog mismatch");
  if (a.parent.size() != b.parent.size()) throw GraphError(std::string(op) + ": object count mismatch");
}

}  // namespace

TimeEncoding time_encoding(Timestamp t) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double day_phase = two_pi * static_cast<double>(t.minute_of_day()) / 1440.0;
  const double week_phase = two_pi * static_cast<double>(t.day_of_week()) / 7.0;
  return {std::sin(day_phase), std::cos(day_phase), std::sin(week_phase), std::cos(week_phase)};
}

int GraphSnapshot::parent_location(int object) const {
  return catalog->location_index(parent.at(static_cast<std::size_t>(object)));
}

bool operator==(const GraphSnapshot& a, const GraphSnapshot& b) {
  return a.task == b.task && a.time == b.time && a.parent == b.parent &&
         (a.catalog == b.catalog || same_catalog(a.catalog, b.catalog));
}

GraphDelta snapshot_diff(const GraphSnapshot& later, const GraphSnapshot& earlier) {
  require_same_catalog(later, earlier, "snapshot_diff");
  if (later.task != earlier.task) throw GraphError("snapshot_diff: snapshots from different tasks");
  if (later.time < earlier.time) throw GraphError("snapshot_diff: later snapshot precedes earlier");
  GraphDelta delta;
  delta.to_time = later.time;
  for (std::size_t i = 0; i < later.parent.size(); ++i) {
    if (later.parent[i] != earlier.parent[i]) {
      delta.changes.push_back({static_cast<int>(i), earlier.parent[i], later.parent[i]});
    }
  }
  return delta;
}

GraphSnapshot apply_delta(const GraphSnapshot& base, const GraphDelta& delta) {
  GraphSnapshot out = base;
  for (const auto& c : delta.changes) {
    if (c.object < 0 || c.object >= static_cast<int>(out.parent.size())) {
      throw GraphError("apply_delta: unknown object " + std::to_string(c.object));
    }
    auto& slot = out.parent[static_cast<std::size_t>(c.object)];
    if (slot != c.from) {
      throw GraphError("apply_delta: stale delta for object '" +
                       base.catalog->object(c.object).id + "'");
    }
    if (!base.catalog->is_location(c.to)) {
      throw GraphError("apply_delta: new parent of '" + base.catalog->object(c.object).id +
                       "' is not a location");
    }
    slot = c.to;
  }
  if (delta.to_time) out.time = *delta.to_time;
  return out;
}

GraphDelta compose_deltas(std::span<const GraphDelta> deltas) {
  // object -> (first origin, latest destination), in first-touch order
  std::map<int, ParentChange> net;
  std::vector<int> order;
  GraphDelta out;
  for (const auto& d : deltas) {
    for (const auto& c : d.changes) {
      auto it = net.find(c.object);
      if (it == net.end()) {
        net.emplace(c.object, c);
        order.push_back(c.object);
      } else {
        if (it->second.to != c.from) throw GraphError("compose_deltas: deltas are not consecutive");
        it->second.to = c.to;
      }
    }
    if (d.to_time) out.to_time = d.to_time;
  }
  std::sort(order.begin(), order.end());
  for (int object : order) {
    const auto& c = net.at(object);
    if (c.from != c.to) out.changes.push_back(c);
  }
  return out;
}

std::vector<RelocationEvent> extract_relocations(const GraphSnapshot& at_t,
                                                 const GraphSnapshot& at_t_plus_delta) {
  require_same_catalog(at_t, at_t_plus_delta, "extract_relocations");
  if (at_t_plus_delta.time < at_t.time) throw GraphError("extract_relocations: window is reversed");
  std::vector<RelocationEvent> events;
  for (std::size_t i = 0; i < at_t.parent.size(); ++i) {
    if (at_t.parent[i] == at_t_plus_delta.parent[i]) continue;
    const int obj = static_cast<int>(i);
    events.push_back({obj, at_t.parent_location(obj), at_t_plus_delta.parent_location(obj),
                      at_t.time, at_t_plus_delta.time});
  }
  return events;
}

std::vector<Violation> validate_snapshot(const GraphSnapshot& g) {
  std::vector<Violation> out;
  if (!g.catalog) {
    out.push_back({ViolationKind::MissingCatalog, -1, "snapshot has no catalog"});
    return out;
  }
  const auto& cat = *g.catalog;
  const int n = cat.object_count();
  for (int i = 0; i < n; ++i) {
    const std::string& name = cat.object(i).id;
    if (i >= static_cast<int>(g.parent.size()) || g.parent[static_cast<std::size_t>(i)] == kNoParent) {
      out.push_back({ViolationKind::MissingParent, i, "missing parent for '" + name + "'"});
      continue;
    }
    const NodeIndex p = g.parent[static_cast<std::size_t>(i)];
    if (p < 0 || p >= cat.node_count()) {
      out.push_back({ViolationKind::UnknownId, i, "unknown parent id for '" + name + "'"});
    } else if (!cat.is_location(p)) {
      out.push_back({ViolationKind::ParentNotLocation, i,
                     "parent not a location: '" + name + "' is in object '" + cat.node_id(p) + "'"});
    }
  }
  for (std::size_t i = static_cast<std::size_t>(n); i < g.parent.size(); ++i) {
    out.push_back({ViolationKind::UnknownId, static_cast<int>(i),
                   "parent entry for unknown object index " + std::to_string(i)});
  }
  return out;
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::MissingParent: return "missing parent";
    case ViolationKind::ParentNotLocation: return "parent not a location";
    case ViolationKind::UnknownId: return "unknown id";
    case ViolationKind::MissingCatalog: return "missing catalog";
  }
  return "?";
}

}  // namespace relocl::graph
