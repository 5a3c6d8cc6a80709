#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpfl/lora.hpp"
#include "dpfl/model.hpp"
#include "dpfl/tensor.hpp"

namespace dpfl {

// Binary container, little-endian throughout:
//   "DPFL" | u16 version | u32 tensor count
//   per tensor: u32 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f64)
//               | u8 rank | u64 dims[rank] | u64 absolute payload offset
//   payload region (tensors back to back, in table order)
//   u64 metadata length | metadata JSON
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // raw little-endian element bytes

  template <typename T>
  static CheckpointTensor from(std::string name, const Tensor<T>& t);
  // Converts to T; a dtype mismatch is a CheckpointError unless `convert`.
  template <typename T>
  Tensor<T> as(bool convert = false) const;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  std::string metadata_json = "{}";

  const CheckpointTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

// IoError when the file cannot be opened, CheckpointError on bad content.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Base tensors under "base/<name>", adapters under "lora/<target>/{A,B}",
// merged matrices under "merged/<name>".
template <typename T>
void add_base(Checkpoint& ckpt, const ModelWeights<T>& weights);
template <typename T>
void add_adapters(Checkpoint& ckpt, const AdapterSet<T>& adapters);
template <typename T>
void add_merged(Checkpoint& ckpt, const ModelWeights<T>& weights, const AdapterSet<T>& adapters);

template <typename T>
ModelWeights<T> read_base(const Checkpoint& ckpt, const ModelConfig& config);
// Adapters for every "lora/<target>/A" entry; rank from A's shape.
template <typename T>
AdapterSet<T> read_adapters(const Checkpoint& ckpt, double alpha);

}  // namespace dpfl
