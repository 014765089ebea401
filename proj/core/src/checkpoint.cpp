#include "rom/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rom {

namespace {

std::string shape_token(const std::vector<int64_t>& shape) {
  if (shape.empty()) return "scalar";
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

std::vector<int64_t> parse_shape(const std::string& tok) {
  if (tok == "scalar") return {};
  std::vector<int64_t> shape;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoll(part));
  return shape;
}

}  // namespace

void write_checkpoint(const std::string& dir, CheckpointManifest manifest,
                      const std::vector<const void*>& blobs) {
  if (blobs.size() != manifest.tensors.size())
    throw std::invalid_argument("write_checkpoint: blob count does not match manifest");
  std::filesystem::create_directories(dir);

  uint64_t offset = 0;
  for (auto& t : manifest.tensors) {
    t.offset = offset;
    offset += t.bytes;
  }

  {
    std::ofstream blob(dir + "/data.bin", std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("write_checkpoint: cannot write " + dir + "/data.bin");
    for (size_t i = 0; i < blobs.size(); ++i)
      blob.write(static_cast<const char*>(blobs[i]),
                 static_cast<std::streamsize>(manifest.tensors[i].bytes));
    if (!blob) throw std::runtime_error("write_checkpoint: short write to " + dir + "/data.bin");
  }

  std::ostringstream os;
  os << "rom-checkpoint " << manifest.version << "\n";
  os << "dtype " << manifest.dtype << "\n";
  os << "step " << manifest.step << "\n";
  os << "tokens " << manifest.tokens << "\n";
  os << "seed " << manifest.seed << "\n";
  for (const auto& [k, v] : manifest.extra) os << "extra " << k << " " << v << "\n";
  for (const auto& t : manifest.tensors)
    os << "tensor " << t.name << " " << t.dtype << " " << shape_token(t.shape) << " " << t.offset
       << " " << t.bytes << "\n";

  std::ofstream mf(dir + "/manifest.txt", std::ios::trunc);
  if (!mf) throw std::runtime_error("write_checkpoint: cannot write " + dir + "/manifest.txt");
  mf << os.str();
}

CheckpointManifest read_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.txt");
  if (!in) throw std::runtime_error("read_manifest: cannot open " + dir + "/manifest.txt");
  CheckpointManifest m;
  std::string line;
  bool versioned = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag.empty()) continue;
    if (tag == "rom-checkpoint") {
      ls >> m.version;
      versioned = true;
      if (m.version != 1)
        throw std::runtime_error("read_manifest: unsupported checkpoint version " +
                                 std::to_string(m.version));
    } else if (tag == "dtype") {
      ls >> m.dtype;
    } else if (tag == "step") {
      ls >> m.step;
    } else if (tag == "tokens") {
      ls >> m.tokens;
    } else if (tag == "seed") {
      ls >> m.seed;
    } else if (tag == "extra") {
      std::string k, v;
      ls >> k >> v;
      m.extra[k] = v;
    } else if (tag == "tensor") {
      TensorEntry t;
      std::string shape;
      ls >> t.name >> t.dtype >> shape >> t.offset >> t.bytes;
      t.shape = parse_shape(shape);
      m.tensors.push_back(std::move(t));
    } else {
      throw std::runtime_error("read_manifest: unknown line tag '" + tag + "'");
    }
  }
  if (!versioned) throw std::runtime_error("read_manifest: missing version line");
  return m;
}

std::vector<char> read_blob(const std::string& dir) {
  std::ifstream in(dir + "/data.bin", std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("read_blob: cannot open " + dir + "/data.bin");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<char> data(static_cast<size_t>(size));
  in.read(data.data(), size);
  if (!in) throw std::runtime_error("read_blob: short read from " + dir + "/data.bin");
  return data;
}

}  // namespace rom
