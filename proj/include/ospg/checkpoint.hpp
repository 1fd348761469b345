#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ospg/nn.hpp"

// Binary tensor table:
//   "OSPG" | u32 version | u32 count | count × entry
//   entry = u32 name_len | name | u32 rank | rank × u32 dim | u32 dtype | data
// Little-endian throughout; dtype 0 is float32.
namespace ospg::ckpt {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

enum class CheckpointFault { Magic, Version, Size, Format, Duplicate, Missing, Shape };
std::string_view to_string(CheckpointFault fault);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, std::size_t offset, const std::string& message)
      : Error("checkpoint", std::string(to_string(fault)) + " at byte " + std::to_string(offset) + ": " + message),
        fault_(fault),
        offset_(offset),
        detail_(message) {}
  CheckpointFault fault() const { return fault_; }
  std::size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  CheckpointFault fault_;
  std::size_t offset_;
  std::string detail_;
};

struct Entry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const Entry&, const Entry&) = default;
};

struct Checkpoint {
  std::vector<Entry> entries;

  const Entry* find(std::string_view name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
// Validates the whole layout before materializing any tensor.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& path);

// Collects every tensor a module exposes through visit(prefix, fn) or visit(fn).
template <class T, class Module>
Checkpoint snapshot(Module& module) {
  Checkpoint out;
  module.visit([&](const std::string& name, num::Tensor<T>& t) {
    Entry e{name, {}, {}};
    for (int d : t.dims()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.data.assign(t.data().begin(), t.data().end());
    out.entries.push_back(std::move(e));
  });
  return out;
}

// Copies checkpoint values into the module's tensors in place. Every tensor
// must be present with matching dims; extra entries are an error too.
template <class T, class Module>
void restore(Module& module, const Checkpoint& ckpt) {
  std::size_t used = 0;
  module.visit([&](const std::string& name, num::Tensor<T>& t) {
    const Entry* e = ckpt.find(name);
    if (!e) throw CheckpointError(CheckpointFault::Missing, 0, "no tensor named '" + name + "'");
    std::vector<int> dims(e->dims.begin(), e->dims.end());
    if (dims != t.dims()) {
      throw CheckpointError(CheckpointFault::Shape, 0,
                            "tensor '" + name + "' has dims " + num::to_string(dims) + ", model expects " +
                                num::to_string(t.dims()));
    }
    auto dst = t.data_mut();
    std::copy(e->data.begin(), e->data.end(), dst.begin());
    ++used;
  });
  if (used != ckpt.entries.size()) {
    throw CheckpointError(CheckpointFault::Missing, 0,
                          std::to_string(ckpt.entries.size() - used) + " checkpoint tensors match nothing in the model");
  }
}

}  // namespace ospg::ckpt
