#include "pinv/nn/adam.hpp"

#include <cmath>
#include <string>

namespace pinv::nn {

void adam_step(AdamState& s, std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter/gradient count mismatch");
  if (s.first_moment.empty()) {
    for (Matrix* p : params) {
      s.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      s.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (s.first_moment.size() != params.size()) throw DimensionError("adam: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = *params[i];
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        s.first_moment[i].rows() != p.rows() || s.first_moment[i].cols() != p.cols()) {
      throw DimensionError("adam: shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = s.first_moment[i];
    Matrix& v = s.second_moment[i];
    m = s.beta1 * m + (1.0 - s.beta1) * grads[i];
    v = s.beta2 * v + (1.0 - s.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= s.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
  }
}

}  // namespace pinv::nn
