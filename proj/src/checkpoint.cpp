#include "dpfl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dpfl/errors.hpp"

namespace dpfl {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'F', 'L'};
// Refuses absurd counts from corrupt headers before allocating.
constexpr std::uint64_t kMaxTensors = 1u << 20;
constexpr std::uint64_t kMaxRank = 8;

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint64_t get(int bytes, const char* what) {
    need(static_cast<std::size_t>(bytes), what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void seek(std::size_t p) { pos_ = p; }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (n > bytes_.size() || pos_ > bytes_.size() - n) {
      throw CheckpointError(std::string("truncated file while reading ") + what);
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

}  // namespace

template <typename T>
CheckpointTensor CheckpointTensor::from(std::string name, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  CheckpointTensor c;
  c.name = std::move(name);
  c.dtype = std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
  c.shape = t.shape();
  c.payload.reserve(t.size() * sizeof(T));
  for (T v : t.values()) {
    if constexpr (std::is_same_v<T, float>) {
      put(c.payload, std::bit_cast<std::uint32_t>(v), 4);
    } else {
      put(c.payload, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return c;
}

template <typename T>
Tensor<T> CheckpointTensor::as(bool convert) const {
  const DType want = std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
  if (dtype != want && !convert) {
    throw CheckpointError("tensor '" + name + "' has dtype " +
                          (dtype == DType::kF32 ? "f32" : "f64") + ", expected " +
                          (want == DType::kF32 ? "f32" : "f64"));
  }
  const std::size_t n = shape_numel(shape);
  if (payload.size() != n * dtype_size(dtype)) {
    throw CheckpointError("tensor '" + name + "' payload size does not match its shape");
  }
  std::vector<T> vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::kF32) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
      vals[i] = static_cast<T>(std::bit_cast<float>(u));
    } else {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(payload[8 * i + b]) << (8 * b);
      vals[i] = static_cast<T>(std::bit_cast<double>(u));
    }
  }
  return Tensor<T>(shape, std::move(vals));
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kCheckpointVersion, 2);
  put(out, ckpt.tensors.size(), 4);
  std::size_t table = out.size();
  for (const auto& t : ckpt.tensors) table += 4 + t.name.size() + 1 + 1 + 8 * t.shape.size() + 8;
  std::uint64_t offset = table;
  for (const auto& t : ckpt.tensors) {
    if (t.shape.size() > kMaxRank) throw CheckpointError("tensor '" + t.name + "' rank too large");
    if (t.payload.size() != shape_numel(t.shape) * dtype_size(t.dtype)) {
      throw CheckpointError("tensor '" + t.name + "' payload size does not match its shape");
    }
    put(out, t.name.size(), 4);
    out.insert(out.end(), t.name.begin(), t.name.end());
    put(out, static_cast<std::uint8_t>(t.dtype), 1);
    put(out, t.shape.size(), 1);
    for (std::size_t d : t.shape) put(out, d, 8);
    put(out, offset, 8);
    offset += t.payload.size();
  }
  for (const auto& t : ckpt.tensors) out.insert(out.end(), t.payload.begin(), t.payload.end());
  put(out, ckpt.metadata_json.size(), 8);
  out.insert(out.end(), ckpt.metadata_json.begin(), ckpt.metadata_json.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kMagic, 4)) {
    throw CheckpointError("bad magic: expected \"DPFL\", not a checkpoint file");
  }
  const auto version = r.get(2, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported format version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  const auto count = r.get(4, "tensor count");
  if (count > kMaxTensors) throw CheckpointError("implausible tensor count");
  Checkpoint ckpt;
  std::vector<std::uint64_t> offsets;
  std::uint64_t payload_end = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.get(4, "name length");
    t.name = r.str(name_len, "tensor name");
    const auto dtype = r.get(1, "dtype");
    if (dtype > 1) throw CheckpointError("tensor '" + t.name + "' has unknown dtype code");
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get(1, "rank");
    if (rank > kMaxRank) throw CheckpointError("tensor '" + t.name + "' rank too large");
    for (std::uint64_t d = 0; d < rank; ++d) t.shape.push_back(r.get(8, "dimension"));
    offsets.push_back(r.get(8, "payload offset"));
    ckpt.tensors.push_back(std::move(t));
  }
  const std::size_t table_end = r.pos();
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    auto& t = ckpt.tensors[i];
    const std::uint64_t n = shape_numel(t.shape) * dtype_size(t.dtype);
    if (offsets[i] < table_end || offsets[i] > bytes.size() || n > bytes.size() - offsets[i]) {
      throw CheckpointError("tensor '" + t.name + "' payload lies outside the file");
    }
    t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                     bytes.begin() + static_cast<std::ptrdiff_t>(offsets[i] + n));
    payload_end = std::max(payload_end, offsets[i] + n);
  }
  r.seek(std::max<std::size_t>(table_end, payload_end));
  const auto meta_len = r.get(8, "metadata length");
  ckpt.metadata_json = r.str(meta_len, "metadata");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + std::string(e.what()).substr(18));
  }
}

template <typename T>
void add_base(Checkpoint& ckpt, const ModelWeights<T>& weights) {
  for (const auto& [name, t] : weights.named()) {
    ckpt.tensors.push_back(CheckpointTensor::from("base/" + name, *t));
  }
}

template <typename T>
void add_adapters(Checkpoint& ckpt, const AdapterSet<T>& adapters) {
  for (const auto& [name, t] : adapters.named()) {
    ckpt.tensors.push_back(CheckpointTensor::from(name, *t));
  }
}

template <typename T>
void add_merged(Checkpoint& ckpt, const ModelWeights<T>& weights,
                const AdapterSet<T>& adapters) {
  for (const auto& [target, ad] : adapters) {
    const Tensor<T>* w0 = weights.find(target);
    if (!w0) throw ConfigError("adapter target '" + target + "' not in the model");
    ckpt.tensors.push_back(CheckpointTensor::from("merged/" + target, merge(*w0, ad)));
  }
}

template <typename T>
ModelWeights<T> read_base(const Checkpoint& ckpt, const ModelConfig& config) {
  config.validate();
  RngStream scratch(0, 0);
  ModelWeights<T> w = ModelWeights<T>::init(config, scratch);
  for (auto& [name, t] : w.named()) {
    const CheckpointTensor* c = ckpt.find("base/" + name);
    if (!c) throw CheckpointError("missing tensor 'base/" + name + "'");
    if (c->shape != t->shape()) {
      throw CheckpointError("tensor 'base/" + name + "' has shape " +
                            shape_to_string(c->shape) + ", model expects " +
                            shape_to_string(t->shape()));
    }
    *t = c->as<T>(true);
  }
  return w;
}

template <typename T>
AdapterSet<T> read_adapters(const Checkpoint& ckpt, double alpha) {
  AdapterSet<T> set;
  const std::string prefix = "lora/";
  for (const auto& c : ckpt.tensors) {
    if (c.name.rfind(prefix, 0) != 0 || c.name.size() < 7 ||
        c.name.compare(c.name.size() - 2, 2, "/A") != 0) {
      continue;
    }
    const std::string target = c.name.substr(prefix.size(), c.name.size() - prefix.size() - 2);
    const CheckpointTensor* b = ckpt.find(prefix + target + "/B");
    if (!b) throw CheckpointError("adapter '" + target + "' has A but no B");
    LoraAdapter<T> ad;
    ad.target = target;
    ad.a = c.as<T>(true);
    ad.b = b->as<T>(true);
    if (ad.a.rank() != 2 || ad.b.rank() != 2 || ad.a.rows() != ad.b.cols()) {
      throw CheckpointError("adapter '" + target + "' has inconsistent A/B shapes");
    }
    ad.rank = ad.a.rows();
    ad.alpha = alpha;
    ad.a.set_trainable(true);
    ad.b.set_trainable(true);
    set.add(std::move(ad));
  }
  return set;
}

template CheckpointTensor CheckpointTensor::from(std::string, const Tensor<float>&);
template CheckpointTensor CheckpointTensor::from(std::string, const Tensor<double>&);
template Tensor<float> CheckpointTensor::as(bool) const;
template Tensor<double> CheckpointTensor::as(bool) const;
template void add_base(Checkpoint&, const ModelWeights<float>&);
template void add_base(Checkpoint&, const ModelWeights<double>&);
template void add_adapters(Checkpoint&, const AdapterSet<float>&);
template void add_adapters(Checkpoint&, const AdapterSet<double>&);
template void add_merged(Checkpoint&, const ModelWeights<float>&, const AdapterSet<float>&);
template void add_merged(Checkpoint&, const ModelWeights<double>&, const AdapterSet<double>&);
template ModelWeights<float> read_base(const Checkpoint&, const ModelConfig&);
template ModelWeights<double> read_base(const Checkpoint&, const ModelConfig&);
template AdapterSet<float> read_adapters(const Checkpoint&, double);
template AdapterSet<double> read_adapters(const Checkpoint&, double);

}  // namespace dpfl
