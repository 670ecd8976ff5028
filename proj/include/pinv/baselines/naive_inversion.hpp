// Naive inversion: regress the forward map g-hat, then fit an inverse network
// f through the frozen g-hat by minimizing ||g-hat(f(r)) - r||^2.
#pragma once

#include "pinv/models/dataset.hpp"
#include "pinv/models/forward_model.hpp"
#include "pinv/nn/dense_net.hpp"
#include "pinv/training.hpp"

#include <cstdint>

namespace pinv {

struct NIConfig {
  int forward_layers = 5;
  int inverse_layers = 5;
  int hidden_units = 10;
  bool batch_norm = false;
  bool recalibrate_batch_norm = true;
  // Phase two composes with the true forward model instead of g-hat.
  bool oracle_forward = false;
  TrainingSchedule schedule;

  void validate() const;
  nlohmann::json to_json() const;
  static NIConfig from_json(const nlohmann::json& j);
};

class NIModel final : public Inverter {
 public:
  Method method() const override { return Method::NaiveInversion; }
  Matrix predict(const Matrix& responses) const override;
  nlohmann::json to_json() const override;
  static NIModel from_json(const nlohmann::json& j);

  nn::DenseNet forward_net;  // standardized theta -> standardized r
  nn::DenseNet inverse_net;  // standardized r -> standardized theta
  Standardizer theta_scaler;
  Standardizer response_scaler;
  NIConfig config;
};

/// Rows of `thetas` mapped through `model` (no domain check), with the
/// vector-Jacobian product taken from model.jacobian.
nn::Var forward_model_op(nn::Var thetas, const models::ForwardModel& model);

/// Mean squared norm of the standardized composite residual over the rows.
nn::Var ni_composite_loss(nn::Tape& tape, NIModel& model, const Matrix& responses, bool training,
                          const models::ForwardModel* oracle);

struct NIResult {
  NIModel model;
  TrainingLog forward_log;
  TrainingLog inverse_log;
};

/// Phase one only: fits forward_net and the scalers, leaves inverse_net untrained.
NIResult train_ni_forward(const models::Dataset& train, const NIConfig& cfg, const models::Dataset& val,
                          std::uint64_t seed);
/// Phase two on an existing result; forward_net is never modified.
void train_ni_inverse(NIResult& result, const models::Dataset& train, const models::Dataset& val,
                      std::uint64_t seed, const models::ForwardModel* oracle = nullptr);
/// Both phases. `oracle` is required when cfg.oracle_forward is set.
NIResult train_ni(const models::Dataset& train, const NIConfig& cfg, const models::Dataset& val,
                  std::uint64_t seed, const models::ForwardModel* oracle = nullptr);

}  // namespace pinv
