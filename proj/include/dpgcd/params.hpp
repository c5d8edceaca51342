#pragma once
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/prng.hpp"
#include "dpgcd/tape.hpp"
#include "dpgcd/tensor.hpp"

namespace dpgcd {

// Named parameter collection. Creation order is recorded so initialization
// draws and optimizer sweeps are deterministic.
template <typename T>
struct ParamStore {
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  std::vector<std::string> order;
  std::map<std::string, Entry> items;

  Entry& add(const std::string& name, Tensor<T> v, bool trainable) {
    if (items.count(name)) throw contract_error("parameter already exists: " + name);
    order.push_back(name);
    Entry& e = items[name];
    e.value = std::move(v);
    e.trainable = trainable;
    return e;
  }

  Entry& at(const std::string& name) {
    auto it = items.find(name);
    if (it == items.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = items.find(name);
    if (it == items.end()) throw contract_error("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return items.count(name) != 0; }
  size_t size() const { return order.size(); }
};

// Binds store entries to tape leaves on demand (define-by-run). A parameter
// bound once is reused for every later access in the same tape, which is
// what makes weight sharing structural rather than copied.
template <typename T>
struct Binding {
  Tape<T>& tape;
  ParamStore<T>& store;
  std::map<std::string, int> bound;

  Binding(Tape<T>& t, ParamStore<T>& s) : tape(t), store(s) {}

  Var<T> operator()(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return {&tape, it->second};
    auto& e = store.at(name);
    Var<T> v = tape.leaf(e.value, e.trainable);
    bound.emplace(name, v.id);
    return v;
  }

  // Direct access for stateful entries (batch-norm running stats).
  Tensor<T>& state(const std::string& name) { return store.at(name).value; }
};

// Gradient map per the autodiff contract: every parameter reports a tensor,
// frozen or unused ones report zeros.
template <typename T>
std::map<std::string, Tensor<T>> collect_grads(Binding<T>& b) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& name : b.store.order) {
    auto& e = b.store.at(name);
    Tensor<T>* g = nullptr;
    auto it = b.bound.find(name);
    if (it != b.bound.end() && e.trainable) g = b.tape.grad_accum(it->second);
    out.emplace(name, g ? *g : Tensor<T>(e.value.shape, T(0)));
  }
  return out;
}

template <typename T>
Tensor<T> init_uniform_fanin(std::vector<int> shape, int fan_in, Prng& rng) {
  double bound = 1.0 / std::sqrt((double)fan_in);
  Tensor<T> t(std::move(shape));
  fill_uniform(t, rng, -bound, bound);
  return t;
}

// Registration helpers shared by all module builders.
template <typename T>
struct ParamFactory {
  ParamStore<T>& store;
  Prng& rng;

  void conv(const std::string& name, int co, int ci, int k) {
    int fan = ci * k * k;
    store.add(name + ".w", init_uniform_fanin<T>({co, ci, k, k}, fan, rng), true);
    store.add(name + ".b", init_uniform_fanin<T>({co}, fan, rng), true);
  }
  void lin(const std::string& name, int in, int out) {
    store.add(name + ".w", init_uniform_fanin<T>({in, out}, in, rng), true);
    store.add(name + ".b", init_uniform_fanin<T>({out}, in, rng), true);
  }
  void conv1d_dw(const std::string& name, int channels, int k) {
    store.add(name + ".w", init_uniform_fanin<T>({channels, k}, k, rng), true);
    store.add(name + ".b", init_uniform_fanin<T>({channels}, k, rng), true);
  }
  void bn(const std::string& name, int c) {
    store.add(name + ".gamma", Tensor<T>({c}, T(1)), true);
    store.add(name + ".beta", Tensor<T>({c}, T(0)), true);
    store.add(name + ".rmean", Tensor<T>({c}, T(0)), false);
    store.add(name + ".rvar", Tensor<T>({c}, T(1)), false);
  }
  void ln(const std::string& name, int c) {
    store.add(name + ".gamma", Tensor<T>({c}, T(1)), true);
    store.add(name + ".beta", Tensor<T>({c}, T(0)), true);
  }
};

}  // namespace dpgcd
