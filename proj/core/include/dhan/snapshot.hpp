#pragma once

// Flat binary parameter snapshots, little-endian:
//   u32 magic 'DHSN' | u32 version | u32 count
//   per entry: u32 name_len | name | u32 ndim | u32 extents... | f32 values...

#include <filesystem>
#include <string>
#include <vector>

namespace dhan {

struct SnapshotEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

inline constexpr std::uint32_t kSnapshotMagic = 0x4E534844u;  // "DHSN"
inline constexpr std::uint32_t kSnapshotVersion = 1;

void save_snapshot(const std::filesystem::path& path, const std::vector<SnapshotEntry>& entries);
std::vector<SnapshotEntry> load_snapshot(const std::filesystem::path& path);

}  // namespace dhan
