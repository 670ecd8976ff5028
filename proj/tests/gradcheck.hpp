// Central finite-difference oracle for tape gradients (test-only).
#pragma once

#include "pinv/nn/tape.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace pinv::testing {

struct GradCheck {
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

/// `loss` builds a scalar loss on the given tape, registering every matrix in
/// `params` via Tape::parameter. Returns the norm-wise relative error between
/// the tape gradient and the central difference at step `h`.
inline GradCheck check_gradient(const std::function<nn::Var(nn::Tape&)>& loss,
                                const std::vector<Matrix*>& params, double h = 1e-5) {
  std::vector<Matrix> analytic;
  {
    nn::Tape tape;
    nn::Var l = loss(tape);
    tape.backward(l);
    for (Matrix* p : params) analytic.push_back(tape.grad(*p));
  }
  auto value = [&]() {
    nn::Tape tape;
    return loss(tape).value()(0, 0);
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    for (Index i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double up = value();
      p.data()[i] = orig - h;
      const double down = value();
      p.data()[i] = orig;
      const double num = (up - down) / (2.0 * h);
      const double ana = analytic[k].data()[i];
      diff2 += (num - ana) * (num - ana);
      a2 += ana * ana;
      n2 += num * num;
    }
  }
  GradCheck out;
  out.analytic_norm = std::sqrt(a2);
  out.numeric_norm = std::sqrt(n2);
  out.relative_error = std::sqrt(diff2) / std::max({out.analytic_norm, out.numeric_norm, 1e-6});
  return out;
}

}  // namespace pinv::testing
