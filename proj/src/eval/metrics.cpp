#include "pinv/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pinv::eval {

nlohmann::json NMAEResult::to_json() const {
  return {{"per_dim", per_dim}, {"mean", mean}, {"max", max}, {"clipped", clipped}, {"count", count}};
}

Matrix clip_rows(const models::Domain& domain, const Matrix& thetas, Index* clipped) {
  Matrix out = thetas;
  Index moved = 0;
  for (Index i = 0; i < thetas.rows(); ++i) {
    const Vector row = thetas.row(i).transpose();
    if (!domain.contains(row)) {
      out.row(i) = domain.clip(row).transpose();
      ++moved;
    }
  }
  if (clipped) *clipped = moved;
  return out;
}

NMAEResult nmae_from_predictions(const Matrix& predicted_thetas, const Matrix& desired,
                                 const models::ForwardModel& model) {
  if (desired.rows() == 0) throw DimensionError("NMAE of an empty response list");
  if (predicted_thetas.rows() != desired.rows() || predicted_thetas.cols() != model.theta_dim() ||
      desired.cols() != model.response_dim()) {
    throw DimensionError("NMAE: prediction/response shapes do not match the forward model");
  }
  require_finite(predicted_thetas, "predicted stimuli");
  NMAEResult out;
  const Matrix clipped = clip_rows(model.domain(), predicted_thetas, &out.clipped);
  const Matrix actual = model.eval_rows(clipped);
  const auto ranges = model.response_range();
  out.count = desired.rows();
  for (Index j = 0; j < desired.cols(); ++j) {
    const double abs_sum = (actual.col(j) - desired.col(j)).cwiseAbs().sum();
    out.per_dim.push_back(100.0 * abs_sum / (static_cast<double>(desired.rows()) * ranges[static_cast<std::size_t>(j)].width()));
  }
  out.mean = std::accumulate(out.per_dim.begin(), out.per_dim.end(), 0.0) / static_cast<double>(out.per_dim.size());
  out.max = *std::max_element(out.per_dim.begin(), out.per_dim.end());
  return out;
}

NMAEResult nmae(const Inverter& inverter, const Matrix& desired, const models::ForwardModel& model) {
  return nmae_from_predictions(inverter.predict(desired), desired, model);
}

double pseudoinverse_residual(const Matrix& predicted_thetas, const Matrix& desired,
                              const models::ForwardModel& model) {
  if (desired.rows() == 0) throw DimensionError("residual of an empty response list");
  const Matrix actual = model.eval_rows(clip_rows(model.domain(), predicted_thetas));
  return (actual - desired).rowwise().squaredNorm().mean();
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.ci99 = kZ99 * s.sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DimensionError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

}  // namespace pinv::eval
