#include "karma/optim.h"

#include <cmath>

#include "karma/error.h"

namespace karma {

AdamWState AdamWState::for_store(const ParameterStore& store) {
  AdamWState s;
  for (const auto& p : store) {
    s.m.push_back(Tensor::zeros(p.value.dims));
    s.v.push_back(Tensor::zeros(p.value.dims));
  }
  return s;
}

void adamw_step(ParameterStore& store, AdamWState& state, const AdamWConfig& cfg) {
  if (state.m.size() != store.size() || state.v.size() != store.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adamw_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Parameter& p = store[i];
    if (p.grad.dims != p.value.dims || state.m[i].dims != p.value.dims) {
      throw Error(ErrorCode::kShapeMismatch, "adamw_step: " + p.name + " grad " +
                                                 p.grad.shape_str() + " vs value " +
                                                 p.value.shape_str());
    }
    if (!p.grad.all_finite()) {
      throw Error(ErrorCode::kAbortTraining, "non-finite gradient for parameter '" + p.name + "'");
    }
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto& m = state.m[i].values;
    auto& v = state.v[i].values;
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double theta = p.value[j];
      const double step = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps) + cfg.weight_decay * theta;
      p.value[j] = static_cast<float>(theta - cfg.lr * step);
    }
    if (!p.value.all_finite()) {
      throw Error(ErrorCode::kAbortTraining, "parameter '" + p.name + "' became non-finite");
    }
  }
}

}  // namespace karma
