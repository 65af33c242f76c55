#include "dhan/hierarchy.hpp"

#include <algorithm>
#include <unordered_map>

namespace dhan {

std::vector<std::string> DimensionSpec::attr_keys() const {
  if (levels.size() < 2 || levels[0] != "item")
    throw ConfigError("hierarchy dimension \"" + name +
                      "\": levels must start with \"item\" and have depth >= 2");
  return {levels.begin() + 1, levels.end()};
}

std::vector<std::string> HierarchySpec::attr_keys() const {
  std::vector<std::string> out;
  for (const DimensionSpec& d : dimensions)
    for (const std::string& k : d.attr_keys())
      if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  return out;
}

void HierarchySpec::validate() const {
  if (dimensions.empty()) throw ConfigError("hierarchy: needs at least one dimension");
  for (const DimensionSpec& d : dimensions) {
    const std::vector<std::string> keys = d.attr_keys();
    for (size_t i = 0; i < keys.size(); ++i)
      for (size_t j = i + 1; j < keys.size(); ++j)
        if (keys[i] == keys[j])
          throw ConfigError("hierarchy dimension \"" + d.name + "\": duplicate level key \"" +
                            keys[i] + "\"");
  }
}

GroupedBehaviors group_positions(std::span<const int> attrs, std::span<const std::uint8_t> mask) {
  if (attrs.size() != mask.size())
    throw ShapeError("group_positions: attrs length " + std::to_string(attrs.size()) +
                     " does not match mask length " + std::to_string(mask.size()));
  GroupedBehaviors out;
  std::unordered_map<int, size_t> index;
  for (size_t i = 0; i < attrs.size(); ++i) {
    if (!mask[i]) continue;
    auto [it, inserted] = index.emplace(attrs[i], out.groups.size());
    if (inserted) out.groups.push_back(Group{attrs[i], {}});
    out.groups[it->second].positions.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

int attr_key_index(const std::vector<std::string>& attr_keys, const std::string& key,
                   const std::string& dim) {
  for (size_t i = 0; i < attr_keys.size(); ++i)
    if (attr_keys[i] == key) return static_cast<int>(i);
  throw ConfigError("hierarchy dimension \"" + dim + "\": sample has no attribute sequence for \"" +
                    key + "\"");
}

}  // namespace

DimensionTree build_dimension_tree(const Sample& sample, const DimensionSpec& dim,
                                   const std::vector<std::string>& attr_keys) {
  const std::vector<std::string> keys = dim.attr_keys();
  DimensionTree tree;
  tree.dimension = dim.name;

  // Top-down: the top level partitions all unmasked positions, each level
  // below refines its parent groups, first-appearance order within a parent.
  std::vector<TreeLevel> top_down;
  for (auto key_it = keys.rbegin(); key_it != keys.rend(); ++key_it) {
    const int k = attr_key_index(attr_keys, *key_it, dim.name);
    if (sample.history_attrs[k].size() != sample.mask.size())
      throw ShapeError("hierarchy: attribute sequence for \"" + *key_it +
                       "\" is not aligned with the history");
    TreeLevel level;
    level.key = *key_it;
    if (top_down.empty()) {
      GroupedBehaviors g = group_positions(sample.history_attrs[k], sample.mask);
      level.groups = std::move(g.groups);
      level.parent.assign(level.groups.size(), -1);
    } else {
      const TreeLevel& above = top_down.back();
      for (size_t p = 0; p < above.groups.size(); ++p) {
        std::unordered_map<int, size_t> index;
        for (int pos : above.groups[p].positions) {
          const int a = sample.history_attrs[k][pos];
          auto [it, inserted] = index.emplace(a, level.groups.size());
          if (inserted) {
            level.groups.push_back(Group{a, {}});
            level.parent.push_back(static_cast<int>(p));
          }
          level.groups[it->second].positions.push_back(pos);
        }
      }
    }
    top_down.push_back(std::move(level));
  }
  tree.levels.assign(top_down.rbegin(), top_down.rend());
  return tree;
}

std::vector<DimensionTree> build_tree(const Sample& sample, const HierarchySpec& spec,
                                      const std::vector<std::string>& attr_keys) {
  std::vector<DimensionTree> out;
  out.reserve(spec.dimensions.size());
  for (const DimensionSpec& d : spec.dimensions)
    out.push_back(build_dimension_tree(sample, d, attr_keys));
  return out;
}

}  // namespace dhan
