#include "dhan/snapshot.hpp"

#include <cstring>

#include "dhan/error.hpp"
#include "dhan/fsio.hpp"

namespace dhan {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw ParseError("snapshot: truncated file");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    if (pos + n > buf.size()) throw ParseError("snapshot: truncated file");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_snapshot(const std::filesystem::path& path, const std::vector<SnapshotEntry>& entries) {
  std::string out;
  put_u32(out, kSnapshotMagic);
  put_u32(out, kSnapshotVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const SnapshotEntry& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    size_t numel = 1;
    for (int d : e.shape) {
      put_u32(out, static_cast<std::uint32_t>(d));
      numel *= static_cast<size_t>(d);
    }
    if (numel != e.values.size())
      throw ContractError("snapshot: entry " + e.name + " shape does not match value count");
    for (float v : e.values) put_f32(out, v);
  }
  write_file_atomic(path, out);
}

std::vector<SnapshotEntry> load_snapshot(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Reader r{buf};
  if (r.u32() != kSnapshotMagic) throw ParseError("snapshot: bad magic in " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kSnapshotVersion)
    throw ParseError("snapshot: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<SnapshotEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SnapshotEntry e;
    e.name = r.str(r.u32());
    const std::uint32_t ndim = r.u32();
    size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      numel *= static_cast<size_t>(e.shape.back());
    }
    e.values.resize(numel);
    for (size_t k = 0; k < numel; ++k) e.values[k] = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.pos != buf.size()) throw ParseError("snapshot: trailing bytes in " + path.string());
  return entries;
}

}  // namespace dhan
