// Scoring predicted stimuli against the noiseless forward model.
#pragma once

#include "pinv/models/forward_model.hpp"
#include "pinv/training.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace pinv::eval {

struct NMAEResult {
  std::vector<double> per_dim;  // percentages of each response range
  double mean = 0.0;
  double max = 0.0;
  Index clipped = 0;  // predictions moved onto the domain before evaluation
  Index count = 0;

  nlohmann::json to_json() const;
};

/// Nearest in-domain point for every row.
Matrix clip_rows(const models::Domain& domain, const Matrix& thetas, Index* clipped = nullptr);

/// NMAE_j = 100 / (|R| (rmax_j - rmin_j)) * sum_r |g_j(clip(theta_hat)) - r_j|.
NMAEResult nmae_from_predictions(const Matrix& predicted_thetas, const Matrix& desired,
                                 const models::ForwardModel& model);
NMAEResult nmae(const Inverter& inverter, const Matrix& desired, const models::ForwardModel& model);

/// Mean of E||g(clip(theta_hat(r))) - r||^2 over the rows of `desired`.
double pseudoinverse_residual(const Matrix& predicted_thetas, const Matrix& desired,
                              const models::ForwardModel& model);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;         // sample standard deviation
  double ci99 = 0.0;       // normal-approximation half-width
  std::size_t n = 0;
};

inline constexpr double kZ99 = 2.5758293035489004;

Summary summarize(const std::vector<double>& values);
double median(std::vector<double> values);

}  // namespace pinv::eval
