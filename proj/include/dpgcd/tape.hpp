#pragma once
#include <functional>
#include <utility>
#include <vector>

#include "dpgcd/common.hpp"
#include "dpgcd/tensor.hpp"

namespace dpgcd {

template <typename T>
class Tape;

// Handle to one node of a tape. Cheap to copy; the tape owns the storage.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& val() const { return tape->val(id); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so parent ids
// are always smaller than child ids and a descending sweep is a valid
// reverse-topological order. A tape is confined to one thread from
// construction through backward.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated during backward for nodes that take gradient
    std::vector<int> parents;
    std::function<void(Tape&, int)> back;  // accumulates into parent grads
    bool requires_grad = false;
  };

  bool grad_enabled = true;

  Var<T> leaf(Tensor<T> v, bool requires_grad_) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad_;
    nodes_.push_back(std::move(n));
    return {this, (int)nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  // New interior node; requires_grad is inherited from parents and gated by
  // grad_enabled (ops built under a disabled guard never track gradient).
  int emplace(Tensor<T> value, std::vector<int> parents) {
    Node n;
    n.value = std::move(value);
    bool rg = false;
    for (int p : parents) {
      if (p < 0 || p >= (int)nodes_.size())
        throw internal_error("tape: parent id out of range (cycle or cross-tape node)");
      rg = rg || nodes_[(size_t)p].requires_grad;
    }
    n.parents = std::move(parents);
    n.requires_grad = grad_enabled && rg;
    nodes_.push_back(std::move(n));
    return (int)nodes_.size() - 1;
  }

  bool rg(int id) const { return nodes_[(size_t)id].requires_grad; }

  void set_back(int id, std::function<void(Tape&, int)> f) {
    nodes_[(size_t)id].back = std::move(f);
  }

  const Tensor<T>& val(int id) const { return nodes_[(size_t)id].value; }
  Tensor<T>& grad_of(int id) { return nodes_[(size_t)id].grad; }

  // Accumulation target for a parent, or nullptr when that parent does not
  // take gradient in the current backward pass.
  Tensor<T>* grad_accum(int id) {
    Node& n = nodes_[(size_t)id];
    if (!n.requires_grad || n.grad.data.empty()) return nullptr;
    return &n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw contract_error("backward: loss lives on another tape");
    if (backward_done_) throw contract_error("backward: called twice without reset");
    const Tensor<T>& lv = val(loss.id);
    if (lv.numel() != 1) throw contract_error("backward: loss must be scalar");
    backward_done_ = true;
    if (!nodes_[(size_t)loss.id].requires_grad) return;  // nothing trainable upstream

    // Mark the subgraph that receives gradient.
    std::vector<char> marked(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    marked[(size_t)loss.id] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int p : nodes_[(size_t)u].parents) {
        if (nodes_[(size_t)p].requires_grad && !marked[(size_t)p]) {
          marked[(size_t)p] = 1;
          stack.push_back(p);
        }
      }
    }
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (marked[i]) nodes_[i].grad = Tensor<T>(nodes_[i].value.shape, T(0));
    nodes_[(size_t)loss.id].grad.data[0] = T(1);
    for (int i = loss.id; i >= 0; --i)
      if (marked[(size_t)i] && nodes_[(size_t)i].back) nodes_[(size_t)i].back(*this, i);
  }

  bool backward_done() const { return backward_done_; }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// RAII toggle for gradient recording; used for frozen-path forward passes
// and for cheap inference.
template <typename T>
struct GradGuard {
  Tape<T>& t;
  bool prev;
  GradGuard(Tape<T>& tape, bool enable) : t(tape), prev(tape.grad_enabled) {
    t.grad_enabled = enable;
  }
  ~GradGuard() { t.grad_enabled = prev; }
};

}  // namespace dpgcd
