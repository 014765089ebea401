#pragma once

// Checkpoint container: a text manifest (tensor name -> dtype, shape, byte
// offset, byte length) next to a raw little-endian blob. One directory per
// checkpoint; the version field is mandatory.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rom {

struct TensorEntry {
  std::string name;
  std::string dtype;  // f32 | f64 | i64
  std::vector<int64_t> shape;
  uint64_t offset = 0;
  uint64_t bytes = 0;
};

struct CheckpointManifest {
  int version = 1;
  std::string dtype;  // model parameter dtype
  int64_t step = 0;
  int64_t tokens = 0;
  uint64_t seed = 0;
  std::map<std::string, std::string> extra;
  std::vector<TensorEntry> tensors;

  const TensorEntry* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

// Writes manifest.txt and data.bin under dir (created if missing). Each blob
// pointer supplies entry.bytes bytes; offsets are assigned in entry order.
void write_checkpoint(const std::string& dir, CheckpointManifest manifest,
                      const std::vector<const void*>& blobs);

CheckpointManifest read_manifest(const std::string& dir);
std::vector<char> read_blob(const std::string& dir);

}  // namespace rom
