// Mixture density network for p(theta | r): diagonal Gaussian components on a
// shared trunk with separate weight, mean and variance heads.
#pragma once

#include "pinv/models/dataset.hpp"
#include "pinv/nn/dense_net.hpp"
#include "pinv/training.hpp"

#include <cstdint>
#include <string>

namespace pinv {

struct MDNConfig {
  int components = 15;
  int trunk_layers = 5;
  int hidden_units = 10;
  bool batch_norm = false;
  bool recalibrate_batch_norm = true;
  double variance_floor = 1e-4;
  TrainingSchedule schedule;

  void validate() const;
  nlohmann::json to_json() const;
  static MDNConfig from_json(const nlohmann::json& j);
};

/// Mixture sizes used for the toy mappings: 15 (cos), 2 (bump), 10 (quartic).
int default_mdn_components(const std::string& model_name);

/// Mixture parameters for a batch, theta in original units.
struct MixtureParams {
  Matrix weights;    // B x K, rows sum to 1
  Matrix means;      // B x (K*n), component k in columns [k*n, (k+1)*n)
  Matrix variances;  // B x (K*n)
};

class MDNModel final : public Inverter {
 public:
  MDNModel() = default;
  MDNModel(const MDNConfig& cfg, Index theta_dim, Index response_dim, std::uint64_t seed);

  Method method() const override { return Method::MDN; }
  /// Conditional mode approximation: mean of the most likely component.
  Matrix predict(const Matrix& responses) const override;
  nlohmann::json to_json() const override;
  static MDNModel from_json(const nlohmann::json& j);

  MixtureParams mixture(const Matrix& responses) const;
  std::vector<Matrix*> parameters();
  Index theta_dim() const { return mean_head.output_dim() / config.components; }

  nn::DenseNet trunk;        // standardized r -> hidden features
  nn::DenseNet weight_head;  // softmax over K
  nn::DenseNet mean_head;    // K*n standardized means
  nn::DenseNet var_head;     // K*n variances (ELU+1, then floored)
  Standardizer response_scaler;
  Standardizer theta_scaler;
  MDNConfig config;
};

/// Mean of the highest-weight component per row; ties go to the lowest index.
Matrix mixture_mode(const Matrix& weights, const Matrix& means, Index theta_dim);

/// Mean negative log-likelihood of standardized thetas under the mixture.
nn::Var mdn_nll(nn::Tape& tape, MDNModel& model, const Matrix& responses, const Matrix& thetas, bool training);

struct MDNResult {
  MDNModel model;
  TrainingLog log;
};

MDNResult train_mdn(const models::Dataset& train, const MDNConfig& cfg, const models::Dataset& val,
                    std::uint64_t seed);

}  // namespace pinv
