#pragma once
#include <algorithm>
#include <functional>
#include <set>
#include <vector>

#include "dpgcd/ops.hpp"
#include "dpgcd/params.hpp"

namespace dpgcd {

// Central-difference check of the tape gradients. f builds a scalar loss
// from leaf vars created over the given input tensors; it must be
// deterministic (verified by evaluating the unperturbed point twice and
// comparing bitwise). At most max_coords coordinates are probed per tensor.
// Returns max over probed coordinates of |a - n| / max(|a|, |n|, 1e-8).
// Meaningful in 64-bit mode only.
template <typename T, typename F>
double grad_check(F&& f, std::vector<Tensor<T>*> inputs, double eps = 1e-4,
                  int max_coords = 512, uint64_t seed = 0) {
  auto eval = [&](bool with_grad) {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    leaves.reserve(inputs.size());
    for (auto* in : inputs) leaves.push_back(tape.leaf(*in, with_grad));
    Var<T> loss = f(tape, leaves);
    if (loss.val().numel() != 1) throw contract_error("grad_check: f must return a scalar");
    return std::pair<Tape<T>, std::vector<Var<T>>>(std::move(tape), std::move(leaves));
  };

  // determinism contract: two probe evaluations must agree bitwise
  T base1, base2;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (auto* in : inputs) leaves.push_back(tape.leaf(*in, false));
    GradGuard<T> g(tape, false);
    base1 = f(tape, leaves).val().data[0];
  }
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (auto* in : inputs) leaves.push_back(tape.leaf(*in, false));
    GradGuard<T> g(tape, false);
    base2 = f(tape, leaves).val().data[0];
  }
  if (!(base1 == base2))
    throw contract_error("grad_check: f is not deterministic across probe evaluations");

  // analytic gradients
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (auto* in : inputs) leaves.push_back(tape.leaf(*in, true));
    Var<T> loss = f(tape, leaves);
    if (loss.val().numel() != 1) throw contract_error("grad_check: f must return a scalar");
    tape.backward(loss);
    for (auto& lv : leaves) {
      Tensor<T>* g = tape.grad_accum(lv.id);
      analytic.push_back(g ? *g : Tensor<T>(tape.val(lv.id).shape, T(0)));
    }
  }

  auto value_at = [&]() -> double {
    Tape<T> tape;
    GradGuard<T> g(tape, false);
    std::vector<Var<T>> leaves;
    for (auto* in : inputs) leaves.push_back(tape.leaf(*in, false));
    return (double)f(tape, leaves).val().data[0];
  };

  Prng rng(seed ^ 0x5eedc0de);
  double max_rel = 0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    Tensor<T>& x = *inputs[t];
    size_t n = x.numel();
    std::vector<size_t> coords;
    if ((int)n <= max_coords) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::set<size_t> picked;
      while ((int)picked.size() < max_coords) picked.insert((size_t)(rng.unit() * (double)n));
      coords.assign(picked.begin(), picked.end());
    }
    for (size_t c : coords) {
      T orig = x.data[c];
      x.data[c] = orig + (T)eps;
      double fp = value_at();
      x.data[c] = orig - (T)eps;
      double fm = value_at();
      x.data[c] = orig;
      double num = (fp - fm) / (2.0 * eps);
      double ana = (double)analytic[t].data[c];
      double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  (void)eval;
  return max_rel;
}

}  // namespace dpgcd
