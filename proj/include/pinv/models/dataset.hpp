#pragma once

#include "pinv/core.hpp"
#include "pinv/models/forward_model.hpp"

#include <cstdint>
#include <string>

namespace pinv::models {

/// Paired stimuli (rows of `thetas`) and responses (rows of `responses`).
struct Dataset {
  Matrix thetas;
  Matrix responses;
  std::string model_name;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;

  Index size() const { return thetas.rows(); }
  Index theta_dim() const { return thetas.cols(); }
  Index response_dim() const { return responses.cols(); }

  /// Rows selected by index, in the given order.
  Dataset subset(const std::vector<Index>& rows) const;
  void validate() const;
};

/// Draws N stimuli uniformly over the model domain and returns
/// r = g(theta) + N(0, noise_sigma^2) per response coordinate.
Dataset sample_dataset(const ForwardModel& model, Index n, std::uint64_t seed);

/// Writes `<stem>.csv` (header theta_0..theta_{n-1},r_0..r_{m-1}) and the
/// `<stem>.json` sidecar. Values are written with 17 significant digits.
void write_dataset(const Dataset& data, const std::string& csv_path, const Domain* domain = nullptr);
/// Reads a CSV written by write_dataset; the sidecar is optional. Parse
/// errors name the offending line.
Dataset read_dataset(const std::string& csv_path);
/// Reads a CSV of responses only (header r_0..r_{m-1}) or a dataset CSV, in
/// which case the r_* columns are used.
Matrix read_responses(const std::string& csv_path);

std::string sidecar_path(const std::string& csv_path);

}  // namespace pinv::models
