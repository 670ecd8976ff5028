#include "pinv/pathfinder/simplex.hpp"

namespace pinv::nn {

Var simplex_project(Var v, ProjectionGradient mode) {
  if (v.cols() != 1) throw DimensionError("simplex_project expects a column vector");
  const Matrix w = pinv::simplex_project(v.value());
  return v.tape().record(w, {v}, [v, mode](Tape& t, const Matrix& out, const Matrix& g) {
    if (mode == ProjectionGradient::StraightThrough) {
      t.accumulate(v.id(), g);
      return;
    }
    const Eigen::Array<bool, Eigen::Dynamic, 1> active = out.col(0).array() > 0.0;
    const Index count = active.count();
    Matrix gv = Matrix::Zero(out.rows(), 1);
    if (count > 0) {
      const double mean = active.select(g.col(0).array(), 0.0).sum() / static_cast<double>(count);
      gv.col(0) = active.select(g.col(0).array() - mean, 0.0).matrix();
    }
    t.accumulate(v.id(), gv);
  });
}

}  // namespace pinv::nn
