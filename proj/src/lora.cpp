#include "dpfl/lora.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dpfl {

template <typename T>
void AdapterSet<T>::add(LoraAdapter<T> adapter) {
  std::string key = adapter.target;
  adapters_.insert_or_assign(std::move(key), std::move(adapter));
}

template <typename T>
const LoraAdapter<T>* AdapterSet<T>::find(const std::string& target) const {
  auto it = adapters_.find(target);
  return it == adapters_.end() ? nullptr : &it->second;
}

template <typename T>
LoraAdapter<T>* AdapterSet<T>::find(const std::string& target) {
  auto it = adapters_.find(target);
  return it == adapters_.end() ? nullptr : &it->second;
}

template <typename T>
std::size_t AdapterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, a] : adapters_) n += a.parameter_count();
  return n;
}

template <typename T>
std::vector<std::string> AdapterSet<T>::targets() const {
  std::vector<std::string> out;
  for (const auto& [name, a] : adapters_) out.push_back(name);
  return out;
}

template <typename T>
std::vector<double> AdapterSet<T>::flatten() const {
  std::vector<double> theta;
  theta.reserve(parameter_count());
  for (const auto& [name, a] : adapters_) {
    for (T v : a.a.values()) theta.push_back(static_cast<double>(v));
    for (T v : a.b.values()) theta.push_back(static_cast<double>(v));
  }
  return theta;
}

template <typename T>
void AdapterSet<T>::unflatten(std::span<const double> theta) {
  if (theta.size() != parameter_count()) {
    throw DimensionError("flat parameter vector has " + std::to_string(theta.size()) +
                         " entries, adapters hold " + std::to_string(parameter_count()));
  }
  std::size_t i = 0;
  for (auto& [name, a] : adapters_) {
    for (T& v : a.a.values()) v = static_cast<T>(theta[i++]);
    for (T& v : a.b.values()) v = static_cast<T>(theta[i++]);
  }
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> AdapterSet<T>::named() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const auto& [name, a] : adapters_) {
    out.emplace_back("lora/" + name + "/A", &a.a);
    out.emplace_back("lora/" + name + "/B", &a.b);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> AdapterSet<T>::named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& [name, a] : adapters_) {
    out.emplace_back("lora/" + name + "/A", &a.a);
    out.emplace_back("lora/" + name + "/B", &a.b);
  }
  return out;
}

template <typename T>
template <typename U>
AdapterSet<U> AdapterSet<T>::cast() const {
  AdapterSet<U> out;
  for (const auto& [name, a] : adapters_) {
    LoraAdapter<U> c;
    c.target = a.target;
    c.a = a.a.template cast<U>();
    c.b = a.b.template cast<U>();
    c.rank = a.rank;
    c.alpha = a.alpha;
    out.add(std::move(c));
  }
  return out;
}

namespace {

template <typename T>
void check_adapter_shapes(const Tensor<T>& w0, const LoraAdapter<T>& ad) {
  if (w0.rank() != 2 || ad.a.rank() != 2 || ad.b.rank() != 2 ||
      ad.a.rows() != ad.rank || ad.b.cols() != ad.rank || ad.a.cols() != w0.cols() ||
      ad.b.rows() != w0.rows()) {
    throw DimensionError("adapter A " + shape_to_string(ad.a.shape()) + ", B " +
                         shape_to_string(ad.b.shape()) + " (rank " +
                         std::to_string(ad.rank) + ") incompatible with base " +
                         shape_to_string(w0.shape()));
  }
}

const std::vector<std::string> kTargetKinds = {"wq", "wk", "wv", "wo",
                                               "w_gate", "w_up", "w_down"};

}  // namespace

template <typename T>
Tensor<T> lora_forward(const Tensor<T>& w0, const LoraAdapter<T>& adapter,
                       const Tensor<T>& x) {
  check_adapter_shapes(w0, adapter);
  if (x.size() != w0.cols()) {
    throw DimensionError("input of length " + std::to_string(x.size()) +
                         " for base matrix " + shape_to_string(w0.shape()));
  }
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Vec> xv(x.data(), x.size());
  Vec ax = adapter.a.mat() * xv;
  Tensor<T> out(Shape{w0.rows()});
  Eigen::Map<Vec> h(out.data(), out.size());
  h.noalias() = w0.mat() * xv;
  h.noalias() += static_cast<T>(adapter.scale()) * (adapter.b.mat() * ax);
  return out;
}

template <typename T>
Tensor<T> merge(const Tensor<T>& w0, const LoraAdapter<T>& adapter) {
  check_adapter_shapes(w0, adapter);
  Tensor<T> out = w0;
  out.set_trainable(false);
  out.mat().noalias() += static_cast<T>(adapter.scale()) * (adapter.b.mat() * adapter.a.mat());
  return out;
}

std::vector<std::string> resolve_targets(const ModelConfig& model,
                                         const std::vector<std::string>& targets) {
  std::set<std::string> out;
  for (const auto& t : targets) {
    if (std::find(kTargetKinds.begin(), kTargetKinds.end(), t) != kTargetKinds.end()) {
      for (std::size_t l = 0; l < model.n_layers; ++l)
        out.insert("layers." + std::to_string(l) + "." + t);
      continue;
    }
    bool ok = false;
    const std::string prefix = "layers.";
    if (t.rfind(prefix, 0) == 0) {
      auto dot = t.find('.', prefix.size());
      if (dot != std::string::npos) {
        std::string idx = t.substr(prefix.size(), dot - prefix.size());
        std::string kind = t.substr(dot + 1);
        bool numeric = !idx.empty() && std::all_of(idx.begin(), idx.end(), ::isdigit);
        ok = numeric && std::stoul(idx) < model.n_layers &&
             std::find(kTargetKinds.begin(), kTargetKinds.end(), kind) != kTargetKinds.end();
      }
    }
    if (!ok) throw ConfigError("unknown LoRA target '" + t + "'");
    out.insert(t);
  }
  if (out.empty()) throw ConfigError("no LoRA targets given");
  return {out.begin(), out.end()};
}

template <typename T>
AdapterSet<T> attach(const ModelWeights<T>& weights, const LoraConfig& config,
                     RngStream& rng) {
  if (config.rank < 1) throw ConfigError("LoRA rank must be at least 1");
  if (!(config.alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
  AdapterSet<T> set;
  for (const auto& name : resolve_targets(weights.config, config.targets)) {
    const Tensor<T>* w0 = weights.find(name);
    if (!w0) throw ConfigError("LoRA target '" + name + "' not present in model");
    const std::size_t d = w0->rows(), k = w0->cols();
    if (config.rank > std::min(d, k) / 2) {
      throw ConfigError("LoRA rank " + std::to_string(config.rank) + " exceeds min(d,k)/2 = " +
                        std::to_string(std::min(d, k) / 2) + " for " + name);
    }
    LoraAdapter<T> ad;
    ad.target = name;
    ad.rank = config.rank;
    ad.alpha = config.alpha;
    ad.a = Tensor<T>(Shape{config.rank, k});
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    for (auto& v : ad.a.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    ad.b = Tensor<T>(Shape{d, config.rank});
    ad.a.set_trainable(true);
    ad.b.set_trainable(true);
    set.add(std::move(ad));
  }
  return set;
}

template <typename T>
ModelWeights<T> merged_weights(const ModelWeights<T>& weights,
                               const AdapterSet<T>& adapters) {
  ModelWeights<T> out = weights;
  for (const auto& [name, ad] : adapters) {
    Tensor<T>* w = out.find(name);
    if (!w) throw ConfigError("adapter target '" + name + "' not present in model");
    *w = merge(*w, ad);
  }
  return out;
}

template class AdapterSet<float>;
template class AdapterSet<double>;
template AdapterSet<double> AdapterSet<float>::cast<double>() const;
template AdapterSet<float> AdapterSet<double>::cast<float>() const;
template AdapterSet<float> AdapterSet<float>::cast<float>() const;
template AdapterSet<double> AdapterSet<double>::cast<double>() const;
template Tensor<float> lora_forward(const Tensor<float>&, const LoraAdapter<float>&,
                                    const Tensor<float>&);
template Tensor<double> lora_forward(const Tensor<double>&, const LoraAdapter<double>&,
                                     const Tensor<double>&);
template Tensor<float> merge(const Tensor<float>&, const LoraAdapter<float>&);
template Tensor<double> merge(const Tensor<double>&, const LoraAdapter<double>&);
template AdapterSet<float> attach(const ModelWeights<float>&, const LoraConfig&, RngStream&);
template AdapterSet<double> attach(const ModelWeights<double>&, const LoraConfig&,
                                   RngStream&);
template ModelWeights<float> merged_weights(const ModelWeights<float>&,
                                            const AdapterSet<float>&);
template ModelWeights<double> merged_weights(const ModelWeights<double>&,
                                             const AdapterSet<double>&);

}  // namespace dpfl
