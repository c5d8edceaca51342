#pragma once
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dpgcd/losses.hpp"
#include "dpgcd/model.hpp"

namespace dpgcd {

struct TrainConfig {
  int steps = 2000;
  uint64_t seed = 42;
  double lr = 1e-3;
  double momentum = 0.9;
  bool freeze_encoder = false;  // keeps "enc." parameters fixed
  LossConfig loss;
};

struct CurveRow {
  int step = 0;
  double wce = 0, mse3d = 0, grad = 0, mse_dsm = 0, total = 0;
};

struct TrainResult {
  std::vector<CurveRow> curve;
  bool aborted = false;  // non-finite loss; model holds the last good state
  int abort_step = -1;
};

inline void write_curve(const std::vector<CurveRow>& curve, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("curve: cannot open for write: " + path);
  os << "step,wce,mse3d,grad,mse_dsm,total\n";
  char buf[200];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.wce, r.mse3d,
                  r.grad, r.mse_dsm, r.total);
    os << buf;
  }
}

template <typename T>
LossParts<T> compute_losses(Binding<T>& bind, const ModelForward<T>& fwd, const SampleData& s,
                            const LossConfig& lc, int num_classes) {
  LossParts<T> parts;
  parts.wce = weighted_ce(fwd.logits_2d, s.label, lc.weights_for(num_classes));
  Tensor<T> gt_dh = s.delta_h.template cast<T>();
  parts.mse3d = mse_loss(fwd.height_3d, gt_dh);
  ChangeMask mask = ChangeMask::from_labels(s.label, s.h, s.w);
  parts.grad = grad_loss(fwd.height_3d, gt_dh, mask);
  Tensor<T> gt_dsm = derive_dsm_gt(s.dsm_t1, s.delta_h).template cast<T>();
  parts.mse_dsm = mse_loss(fwd.dsm_t2, gt_dsm);
  (void)bind;
  return parts;
}

// Plain SGD with momentum over per-sample steps; sample order is drawn from
// the repository PRNG so two runs with one seed produce identical curves.
template <typename T>
TrainResult train_toy(Model<T>& model, const std::vector<SampleData>& train_set,
                      const TrainConfig& tc) {
  if (train_set.empty()) throw data_error("train: empty train split");
  tc.loss.validate();
  TrainResult res;
  res.curve.reserve((size_t)tc.steps);

  std::vector<ModelInputs<T>> inputs;
  inputs.reserve(train_set.size());
  for (const auto& s : train_set) inputs.push_back(prepare_inputs<T>(s));

  std::map<std::string, Tensor<T>> velocity;
  for (const auto& name : model.params.order) {
    const auto& e = model.params.at(name);
    if (e.trainable) velocity.emplace(name, Tensor<T>(e.value.shape, T(0)));
  }

  Prng order(Prng::mix(tc.seed ^ 0x747261696eULL));
  for (int step = 1; step <= tc.steps; ++step) {
    int idx = order.uniform_int(0, (int)train_set.size() - 1);
    const SampleData& s = train_set[(size_t)idx];

    Tape<T> tape;
    Binding<T> bind(tape, model.params);
    ModelForward<T> fwd = model_forward(bind, model.cfg, inputs[(size_t)idx], /*train=*/true);
    LossParts<T> parts = compute_losses(bind, fwd, s, tc.loss, model.cfg.dec.num_classes);
    Var<T> total;
    try {
      total = total_loss(parts, tc.loss);
    } catch (const numeric_error&) {
      res.aborted = true;  // parameters still hold the last good state
      res.abort_step = step;
      break;
    }
    CurveRow row;
    row.step = step;
    row.wce = (double)parts.wce.val().data[0];
    row.mse3d = (double)parts.mse3d.val().data[0];
    row.grad = (double)parts.grad.val().data[0];
    row.mse_dsm = (double)parts.mse_dsm.val().data[0];
    row.total = (double)total.val().data[0];
    res.curve.push_back(row);

    tape.backward(total);
    for (const auto& name : model.params.order) {
      auto& e = model.params.at(name);
      if (!e.trainable) continue;
      if (tc.freeze_encoder && name.rfind("enc.", 0) == 0) continue;
      auto it = bind.bound.find(name);
      if (it == bind.bound.end()) continue;
      Tensor<T>* g = tape.grad_accum(it->second);
      if (!g) continue;
      Tensor<T>& v = velocity.at(name);
      T mu = (T)tc.momentum, lr = (T)tc.lr;
      for (size_t i = 0; i < v.data.size(); ++i) {
        v.data[i] = mu * v.data[i] + g->data[i];
        e.value.data[i] -= lr * v.data[i];
      }
    }
  }
  return res;
}

}  // namespace dpgcd
