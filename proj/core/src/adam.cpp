#include "imudiff/ad/adam.hpp"

#include <cmath>

#include "imudiff/error.hpp"

namespace imudiff::ad {

void AdamState::validate() const {
  if (!(lr > 0.0)) fail(ErrorKind::config, "adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::config, "adam: beta1 and beta2 must lie in [0, 1)");
  }
  if (!(epsilon >= 0.0)) fail(ErrorKind::config, "adam: epsilon must be >= 0");
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  state.validate();
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    fail(ErrorKind::contract, "adam: parameter list changed between steps");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != values.size()) fail(ErrorKind::contract, "adam: parameter shape changed");
    const auto grad = params[i].grad();
    const bool has = !grad.empty();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = has ? grad[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      values[k] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace imudiff::ad
