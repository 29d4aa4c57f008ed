// Network weights and running statistics to and from a checkpoint.
#pragma once

#include <map>
#include <string>

#include "gcnet/layers/network.hpp"
#include "gcnet/numerics/checkpoint.hpp"

namespace gcnet {

template <class T>
void store_model(gcnet_model<T>& model, checkpoint& ck) {
  for (const auto& [k, v] : model.config().to_kv()) ck.set_meta("net." + k, v);
  for (auto& [name, p] : model.parameters()) ck.put("param." + name, p.get());
  for (auto& [name, b] : model.buffers()) ck.put_values("buffer." + name, shape_t{b.get().size()}, b.get());
}

inline network_config stored_network_config(const checkpoint& ck) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ck.all_meta())
    if (k.rfind("net.", 0) == 0) kv[k.substr(4)] = v;
  if (kv.empty()) throw format_error("checkpoint: no network configuration");
  return network_config::from_kv(kv);
}

/// Copies weights into an existing model of the same configuration.
template <class T>
void restore_model(gcnet_model<T>& model, const checkpoint& ck) {
  if (stored_network_config(ck).to_kv() != model.config().to_kv())
    throw format_error("checkpoint: network configuration differs from the model");
  for (auto& [name, p] : model.parameters()) {
    const std::string key = "param." + name;
    if (ck.shape(key) != p.get().shape()) throw format_error("checkpoint: shape mismatch for " + key);
    auto v = ck.values<T>(key);
    std::copy(v.begin(), v.end(), p.get().mutable_data().begin());
  }
  for (auto& [name, b] : model.buffers()) {
    auto v = ck.values<T>("buffer." + name);
    if (v.size() != b.get().size()) throw format_error("checkpoint: size mismatch for buffer." + name);
    b.get() = std::move(v);
  }
}

template <class T>
gcnet_model<T> load_model(const checkpoint& ck) {
  gcnet_model<T> model{stored_network_config(ck)};
  restore_model(model, ck);
  return model;
}

}  // namespace gcnet
