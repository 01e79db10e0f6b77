#include "relocl/graph/graph.hpp"

#include <set>

namespace relocl::graph {

EntityCatalog::EntityCatalog(std::vector<Entity> objects, std::vector<Entity> locations,
                             int root_location)
    : objects_(std::move(objects)), locations_(std::move(locations)), root_(root_location) {
  if (locations_.empty()) throw GraphError("catalog needs at least the root location");
  if (root_ < 0 || root_ >= location_count()) throw GraphError("root location out of range");
  std::set<std::string> seen;
  for (const auto& e : objects_) {
    if (e.id.empty()) throw GraphError("empty entity id");
    if (!seen.insert(e.id).second) throw GraphError("duplicate entity id '" + e.id + "'");
  }
  for (const auto& e : locations_) {
    if (e.id.empty()) throw GraphError("empty entity id");
    if (!seen.insert(e.id).second) throw GraphError("duplicate entity id '" + e.id + "'");
  }
}

EntityCatalog EntityCatalog::from_ids(const std::vector<std::string>& objects,
                                      const std::vector<std::string>& locations,
                                      const std::string& root) {
  std::vector<Entity> objs;
  std::vector<Entity> locs;
  int root_index = -1;
  for (const auto& o : objects) objs.push_back({o, o});
  for (std::size_t i = 0; i < locations.size(); ++i) {
    locs.push_back({locations[i], locations[i]});
    if (locations[i] == root) root_index = static_cast<int>(i);
  }
  if (root_index < 0) throw GraphError("root '" + root + "' is not among the locations");
  return EntityCatalog(std::move(objs), std::move(locs), root_index);
}

int EntityCatalog::location_index(NodeIndex n) const {
  if (!is_location(n)) throw GraphError("node " + std::to_string(n) + " is not a location");
  return n - object_count();
}

std::optional<int> EntityCatalog::find_object(const std::string& id) const {
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    if (objects_[i].id == id) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> EntityCatalog::find_location(const std::string& id) const {
  for (std::size_t i = 0; i < locations_.size(); ++i) {
    if (locations_[i].id == id) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<NodeIndex> EntityCatalog::find_node(const std::string& id) const {
  if (auto o = find_object(id)) return *o;
  if (auto l = find_location(id)) return location_node(*l);
  return std::nullopt;
}

const std::string& EntityCatalog::node_id(NodeIndex n) const {
  if (is_object(n)) return object(n).id;
  return location(location_index(n)).id;
}

bool same_catalog(const CatalogPtr& a, const CatalogPtr& b) {
  if (a == b) return a != nullptr;
  return a && b && *a == *b;
}

}  // namespace relocl::graph
