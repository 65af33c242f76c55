#pragma once

// Multi-dimensional interest hierarchies: each dimension is a tower of
// attribute levels above the item level, and behavior positions are
// partitioned into attribute groups per level.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhan/data.hpp"
#include "dhan/error.hpp"

namespace dhan {

struct DimensionSpec {
  std::string name;
  // Level 1 is always "item"; the rest are attribute keys, lowest first.
  std::vector<std::string> levels;

  // Attribute keys above the item level, lowest first.
  std::vector<std::string> attr_keys() const;
  int depth() const { return static_cast<int>(levels.size()); }
};

struct HierarchySpec {
  std::vector<DimensionSpec> dimensions;

  // Union of all dimensions' attribute keys, first-appearance order.
  std::vector<std::string> attr_keys() const;
  void validate() const;
};

struct Group {
  int attr = 0;
  std::vector<int> positions;  // indices into the history sequence
};

struct GroupedBehaviors {
  std::vector<Group> groups;
};

// One group per distinct unmasked attribute value, in first-appearance order;
// positions keep their original order. All-masked input yields zero groups.
GroupedBehaviors group_positions(std::span<const int> attrs, std::span<const std::uint8_t> mask);

struct TreeLevel {
  std::string key;
  std::vector<Group> groups;
  // Index of each group's parent in the level above; -1 at the top level.
  std::vector<int> parent;
};

// levels[0] is the lowest attribute level, levels.back() the top; each level
// partitions its parents' positions.
struct DimensionTree {
  std::string dimension;
  std::vector<TreeLevel> levels;
};

// attr_keys gives the sample's history_attrs layout.
DimensionTree build_dimension_tree(const Sample& sample, const DimensionSpec& dim,
                                   const std::vector<std::string>& attr_keys);

std::vector<DimensionTree> build_tree(const Sample& sample, const HierarchySpec& spec,
                                      const std::vector<std::string>& attr_keys);

}  // namespace dhan
