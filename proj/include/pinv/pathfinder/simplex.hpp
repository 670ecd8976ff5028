// Euclidean projection onto the scaled simplex {w >= 0, sum w = total}.
#pragma once

#include "pinv/core.hpp"
#include "pinv/nn/tape.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace pinv {

/// Threshold lambda of the sort-and-threshold rule: the projection of `v` is
/// max(v - lambda, 0). Sort descending, take the largest prefix length rho
/// with u_rho - (sum_{k<=rho} u_k - total) / rho > 0.
template <typename Derived>
typename Derived::Scalar simplex_threshold(const Eigen::MatrixBase<Derived>& v,
                                           typename Derived::Scalar total) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw DimensionError("simplex projection of an empty vector");
  if (!(total > Scalar(0))) throw ConfigError("simplex total must be positive");
  const typename Derived::PlainObject plain = v;
  std::vector<Scalar> u(plain.data(), plain.data() + plain.size());
  std::sort(u.begin(), u.end(), std::greater<Scalar>());
  Scalar prefix(0), lambda(0);
  for (std::size_t j = 0; j < u.size(); ++j) {
    prefix += u[j];
    const Scalar candidate = (prefix - total) / static_cast<Scalar>(j + 1);
    if (u[j] - candidate > Scalar(0)) lambda = candidate;
  }
  return lambda;
}

/// Projection of `v` onto {w >= 0, sum w = total}.
template <typename Derived>
typename Derived::PlainObject simplex_project(const Eigen::MatrixBase<Derived>& v,
                                              typename Derived::Scalar total) {
  const auto lambda = simplex_threshold(v, total);
  return (v.array() - lambda).cwiseMax(typename Derived::Scalar(0)).matrix();
}

/// Projection with total = size, i.e. mean weight 1.
template <typename Derived>
typename Derived::PlainObject simplex_project(const Eigen::MatrixBase<Derived>& v) {
  return simplex_project(v, static_cast<typename Derived::Scalar>(v.size()));
}

/// How gradients pass back through the projection.
enum class ProjectionGradient {
  ActiveSet,     // exact Jacobian: I_A - (1/|A|) 1_A 1_A^T on the active set A
  StraightThrough  // identity
};

namespace nn {
/// Recorded projection of a column vector onto {w >= 0, mean w = 1}.
Var simplex_project(Var v, ProjectionGradient mode = ProjectionGradient::ActiveSet);
}  // namespace nn

}  // namespace pinv
