// Studies beyond the benchmark: the beta sweep of the pseudoinverse residual,
// the maximization-bias Monte Carlo and NI with estimated vs. true forward map.
#pragma once

#include "pinv/models/forward_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pinv::eval {

/// Monte-Carlo mean of the largest bin count when n points fall uniformly
/// into `bins` equiprobable bins.
double maximization_bias_mc(Index n, int bins, int reps, std::uint64_t seed);

struct BiasPoint {
  Index n = 0;
  double expected_max = 0.0;
  double excess_per_sqrt_n = 0.0;  // (E[max] - n / bins) / sqrt(n)
};

std::vector<BiasPoint> maximization_bias_curve(const std::vector<Index>& ns, int bins, int reps,
                                               std::uint64_t seed);
std::string bias_csv(const std::vector<BiasPoint>& curve, int bins, int reps, std::uint64_t seed);

/// Evenly spaced responses covering the image of the domain: a grid over 1-d
/// domains, uniform samples otherwise.
Matrix response_grid(const models::ForwardModel& model, Index points, std::uint64_t seed);

struct SweepPoint {
  double beta = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::optional<double>> residuals;  // per seed; empty on divergence
  std::vector<std::string> errors;
  double median = 0.0;  // over finished seeds; NaN if none finished
};

/// Trains PF at each beta on noiseless data of training size `n` and reports
/// E_r ||g(f(r)) - r||^2 over response_grid. `pf_overrides` is merged over
/// the model's PF defaults.
std::vector<SweepPoint> beta_sweep(const models::ForwardModel& model, const std::vector<double>& betas, Index n,
                                       const std::vector<std::uint64_t>& seeds,
                                       const nlohmann::json& pf_overrides = nlohmann::json::object(), int jobs = 1);
std::string sweep_csv(const std::vector<SweepPoint>& sweep);

struct NIDiagnosticPoint {
  Index size = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> estimated;  // test NMAE with the learned forward net, per seed
  std::vector<double> oracle;     // with the true forward mapping
  double estimated_median = 0.0;
  double oracle_median = 0.0;
  int failed = 0;
};

/// Same data, split and seed for both variants at each size.
std::vector<NIDiagnosticPoint> ni_diagnostic(const models::ForwardModel& model, const std::vector<Index>& sizes,
                                             const std::vector<std::uint64_t>& seeds,
                                             const nlohmann::json& ni_overrides = nlohmann::json::object(),
                                             int jobs = 1);
std::string ni_diagnostic_csv(const std::vector<NIDiagnosticPoint>& points);

}  // namespace pinv::eval
