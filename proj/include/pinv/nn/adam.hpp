#pragma once

#include "pinv/core.hpp"

#include <span>
#include <vector>

namespace pinv::nn {

/// Bias-corrected Adam. Moment buffers are sized on the first step and
/// shape-checked on every later one.
struct AdamState {
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads);

}  // namespace pinv::nn
