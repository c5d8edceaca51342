#pragma once
#include <cmath>
#include <string>
#include <vector>

#include "dpgcd/ops.hpp"

namespace dpgcd {

// Four-term objective: weighted cross entropy for 2-d semantic change, MSE
// over the whole image for 3-d height change, gradient loss restricted to
// change regions, MSE for the auxiliary T2-DSM prediction.
struct LossConfig {
  double lambda_wce = 1.0;
  double lambda_mse3d = 1.0;
  double lambda_grad = 0.2;
  double lambda_mse_dsm = 1.0;
  std::vector<double> class_weights;  // empty -> defaults per class count

  static std::vector<double> default_class_weights(int num_classes) {
    // 0.95 for changed classes, 0.05 for unchanged
    std::vector<double> w((size_t)num_classes, 0.95);
    w[0] = 0.05;
    return w;
  }

  std::vector<double> weights_for(int num_classes) const {
    if (class_weights.empty()) return default_class_weights(num_classes);
    if (class_weights.size() != (size_t)num_classes)
      throw config_error("loss: class weight count != classes");
    return class_weights;
  }

  void validate() const {
    if (lambda_wce < 0 || lambda_mse3d < 0 || lambda_grad < 0 || lambda_mse_dsm < 0)
      throw config_error("loss: lambdas must be nonnegative");
    if (lambda_wce == 0 && lambda_mse3d == 0 && lambda_grad == 0 && lambda_mse_dsm == 0)
      throw config_error("loss: at least one lambda must be positive");
    for (double w : class_weights)
      if (w < 0) throw config_error("loss: class weights must be nonnegative");
  }
};

template <typename T>
struct LossParts {
  Var<T> wce, mse3d, grad, mse_dsm;
};

template <typename T>
Var<T> total_loss(const LossParts<T>& parts, const LossConfig& cfg) {
  cfg.validate();
  auto check = [](Var<T> v, const char* name) {
    if (!std::isfinite((double)v.val().data[0]))
      throw numeric_error(std::string("total_loss: non-finite term ") + name);
  };
  check(parts.wce, "wce");
  check(parts.mse3d, "mse3d");
  check(parts.grad, "grad");
  check(parts.mse_dsm, "mse_dsm");
  Var<T> t = mul_scalar(parts.wce, cfg.lambda_wce);
  t = add(t, mul_scalar(parts.mse3d, cfg.lambda_mse3d));
  t = add(t, mul_scalar(parts.grad, cfg.lambda_grad));
  t = add(t, mul_scalar(parts.mse_dsm, cfg.lambda_mse_dsm));
  return t;
}

}  // namespace dpgcd
