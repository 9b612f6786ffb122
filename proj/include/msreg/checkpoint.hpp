#pragma once

#include "msreg/autograd.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace msreg {

/// Checkpoint container:
///   bytes 0..7   "MSREGCK1"
///   bytes 8..15  manifest length L (uint64, little-endian)
///   next L bytes manifest JSON {format_version, meta, tensors: [{name, shape, dtype, trainable}]}
///   remainder    little-endian f32 blob, tensors concatenated in manifest order.
inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[9] = "MSREGCK1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  std::vector<int64_t> shape;
  bool trainable = true;
  std::vector<float> data;
};

struct CheckpointData {
  nlohmann::json meta;
  std::vector<TensorRecord> tensors;
};

template <typename T>
void write_checkpoint(const std::string& path, const ParamStore<T>& store, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  size_t total = 0;
  for (const auto& p : store.all()) {
    manifest["tensors"].push_back({{"name", p.name}, {"shape", p.shape}, {"dtype", "f32"}, {"trainable", p.trainable}});
    total += static_cast<size_t>(p.count());
  }
  const std::string text = manifest.dump();
  std::vector<char> blob(total * 4);
  size_t off = 0;
  for (const auto& p : store.all()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      float f = static_cast<float>(p.value.data()[i]);
      uint32_t bits = std::bit_cast<uint32_t>(f);
      for (int b = 0; b < 4; ++b) blob[off++] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 8);
  uint64_t len = text.size();
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((len >> (8 * b)) & 0xFF));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  if (16 + len > bytes.size()) throw CheckpointError("checkpoint manifest truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest unreadable: ") + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  CheckpointData out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  size_t off = 16 + len;
  for (const auto& t : manifest.at("tensors")) {
    TensorRecord rec;
    rec.name = t.at("name").get<std::string>();
    rec.shape = t.at("shape").get<std::vector<int64_t>>();
    rec.trainable = t.value("trainable", true);
    if (t.value("dtype", std::string("f32")) != "f32") throw CheckpointError("tensor '" + rec.name + "' is not f32");
    size_t n = 1;
    for (auto s : rec.shape) n *= static_cast<size_t>(s);
    if (off + 4 * n > bytes.size())
      throw CheckpointError("checkpoint blob truncated while reading tensor '" + rec.name + "'");
    rec.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 4 * i + b])) << (8 * b);
      rec.data[i] = std::bit_cast<float>(bits);
    }
    off += 4 * n;
    out.tensors.push_back(std::move(rec));
  }
  if (off != bytes.size()) throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - off) + " trailing bytes");
  return out;
}

/// Copies checkpoint tensors into an existing store, requiring identical names and shapes.
template <typename T>
void restore_params(ParamStore<T>& store, const CheckpointData& data) {
  if (data.tensors.size() != store.size())
    throw CheckpointError("checkpoint has " + std::to_string(data.tensors.size()) + " tensors, model expects " +
                          std::to_string(store.size()));
  for (const auto& rec : data.tensors) {
    if (!store.contains(rec.name)) throw CheckpointError("checkpoint tensor '" + rec.name + "' not in model");
    auto& p = store.at(rec.name);
    if (p.shape != rec.shape) throw CheckpointError("shape mismatch for tensor '" + rec.name + "'");
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(rec.data[static_cast<size_t>(i)]);
    p.grad.setZero();
    p.momentum.setZero();
  }
}

}  // namespace msreg
