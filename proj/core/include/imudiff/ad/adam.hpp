#pragma once

#include <cstdint>
#include <vector>

#include "imudiff/ad/tensor.hpp"

namespace imudiff::ad {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;  // one accumulator per parameter
  std::vector<std::vector<double>> v;

  void validate() const;
};

// Bias-corrected Adam update of every parameter from its accumulated grad.
// Parameters without a grad are treated as having a zero gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace imudiff::ad
