#pragma once

#include <cstdint>
#include <vector>

#include "karma/tensor.h"

namespace karma {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for every parameter of one store, in store order.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t t = 0;

  static AdamWState for_store(const ParameterStore& store);
};

// One bias-corrected Adam step with decoupled weight decay,
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta),
// reading gradients from Parameter::grad. Every gradient is checked before
// any parameter moves; a non-finite one throws Error(kAbortTraining) naming
// the parameter.
void adamw_step(ParameterStore& store, AdamWState& state, const AdamWConfig& cfg);

}  // namespace karma
