#include "ospg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

namespace ospg::ckpt {

std::string_view to_string(CheckpointFault fault) {
  switch (fault) {
    case CheckpointFault::Magic: return "bad magic";
    case CheckpointFault::Version: return "unsupported version";
    case CheckpointFault::Size: return "size mismatch";
    case CheckpointFault::Format: return "malformed entry";
    case CheckpointFault::Duplicate: return "duplicate name";
    case CheckpointFault::Missing: return "missing tensor";
    case CheckpointFault::Shape: return "shape mismatch";
  }
  return "?";
}

const Entry* Checkpoint::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

constexpr char kMagic[4] = {'O', 'S', 'P', 'G'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw CheckpointError(CheckpointFault::Size, pos_,
                            "file ends while reading " + what + " (" + std::to_string(n) + " bytes needed, " +
                                std::to_string(remaining()) + " left)");
    }
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct EntryLayout {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::size_t data_offset = 0;
  std::size_t count = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  std::unordered_set<std::string> names;
  for (const auto& e : ckpt.entries) {
    if (!names.insert(e.name).second) {
      throw CheckpointError(CheckpointFault::Duplicate, out.size(), "tensor name '" + e.name + "' appears twice");
    }
    std::size_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.data.size()) {
      throw CheckpointError(CheckpointFault::Size, out.size(),
                            "tensor '" + e.name + "' holds " + std::to_string(e.data.size()) + " values for " +
                                std::to_string(count) + " elements");
    }
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    put_u32(out, kDtypeF32);
    for (float f : e.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError(CheckpointFault::Magic, 0, "expected \"OSPG\"");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw CheckpointError(CheckpointFault::Version, version_at,
                          "file version " + std::to_string(version) + ", reader supports " + std::to_string(kVersion));
  }
  const std::uint32_t count = r.u32("tensor count");

  // First pass: headers and size arithmetic only.
  std::vector<EntryLayout> layout;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    const auto name_bytes = r.take(name_len, "tensor name");
    EntryLayout e;
    e.name.assign(name_bytes.begin(), name_bytes.end());
    if (!names.insert(e.name).second) {
      throw CheckpointError(CheckpointFault::Duplicate, entry_at, "tensor name '" + e.name + "' appears twice");
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw CheckpointError(CheckpointFault::Format, r.offset() - 4, "rank " + std::to_string(rank) + " > 8");
    std::uint64_t elements = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.u32("dimension"));
      elements *= e.dims.back();
      if (elements > bytes.size()) {
        throw CheckpointError(CheckpointFault::Size, r.offset(), "tensor '" + e.name + "' is larger than the file");
      }
    }
    const std::size_t dtype_at = r.offset();
    const std::uint32_t dtype = r.u32("dtype");
    if (dtype != kDtypeF32) {
      throw CheckpointError(CheckpointFault::Format, dtype_at, "unknown dtype code " + std::to_string(dtype));
    }
    e.count = static_cast<std::size_t>(elements);
    e.data_offset = r.offset();
    r.take(4 * e.count, "data of '" + e.name + "'");
    layout.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointFault::Size, r.offset(),
                          std::to_string(r.remaining()) + " trailing bytes after the last tensor");
  }

  Checkpoint out;
  out.entries.reserve(layout.size());
  for (auto& e : layout) {
    Entry entry{std::move(e.name), std::move(e.dims), std::vector<float>(e.count)};
    for (std::size_t k = 0; k < e.count; ++k) {
      const std::uint8_t* p = bytes.data() + e.data_offset + 4 * k;
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                                 static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
      entry.data[k] = std::bit_cast<float>(bits);
    }
    out.entries.push_back(std::move(entry));
  }
  return out;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.fault(), e.offset(), path.string() + ": " + e.detail());
  }
}

}  // namespace ospg::ckpt
