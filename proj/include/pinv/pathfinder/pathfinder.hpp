// PATHFINDER: joint estimation of a pseudoinverse regressor f(r) and a
// per-sample weight network w(theta) under
//
//   (1/B) sum_i w_i ||f(r_i) - theta_i||^2 + beta (B/N) sum_i w_i^2,
//   w = simplex projection of the weight-net outputs over the batch (mean 1).
#pragma once

#include "pinv/models/dataset.hpp"
#include "pinv/nn/dense_net.hpp"
#include "pinv/nn/tape.hpp"
#include "pinv/pathfinder/simplex.hpp"
#include "pinv/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>

namespace pinv {

struct PathfinderConfig {
  double beta = 1e-4;
  int regressor_layers = 5;
  int weight_layers = 5;
  int hidden_units = 10;
  bool batch_norm = false;         // regressor
  bool weight_batch_norm = false;  // weight network
  // Zero output layer in the weight network, so training starts from w = 1.
  bool uniform_initial_weights = true;
  // Reset running batch-norm statistics to the full training set each epoch.
  bool recalibrate_batch_norm = true;
  ProjectionGradient projection_gradient = ProjectionGradient::ActiveSet;
  TrainingSchedule schedule;

  void validate() const;
  nlohmann::json to_json() const;
  static PathfinderConfig from_json(const nlohmann::json& j);
};

class PathfinderModel final : public Inverter {
 public:
  PathfinderModel() = default;
  PathfinderModel(const PathfinderConfig& cfg, Index theta_dim, Index response_dim, std::uint64_t seed);

  Method method() const override { return Method::Pathfinder; }
  Matrix predict(const Matrix& responses) const override;
  nlohmann::json to_json() const override;
  static PathfinderModel from_json(const nlohmann::json& j);

  /// Raw (unprojected) weight-net outputs in inference mode, one per row.
  Vector raw_weights(const Matrix& thetas) const;

  std::vector<Matrix*> parameters();

  nn::DenseNet regressor;   // standardized r -> standardized theta
  nn::DenseNet weight_net;  // standardized theta -> scalar weight (linear output)
  Standardizer response_scaler;
  Standardizer theta_scaler;
  PathfinderConfig config;
};

struct PathfinderLoss {
  nn::Var total;
  nn::Var data_term;
  nn::Var regularizer;
  Vector weights;  // projected batch weights
};

/// Objective from per-row squared residuals (B x 1) and projected weights (B x 1).
nn::Var pathfinder_objective(nn::Var residual_sq, nn::Var weights, double beta, double reg_scale,
                             nn::Var* data_term = nullptr, nn::Var* regularizer = nullptr);

/// Full batch loss: regressor and weight-net forward passes, projection and
/// objective. `reg_scale` is B/N for mini-batches, 1 for full-set evaluation.
PathfinderLoss pathfinder_batch_loss(nn::Tape& tape, PathfinderModel& model, const Matrix& thetas,
                                     const Matrix& responses, double beta, double reg_scale, bool training);

struct PathfinderResult {
  PathfinderModel model;
  TrainingLog log;
};

/// Adam on shuffled batches until the validation objective converges or
/// max_epochs. Throws DivergenceError on a non-finite loss.
PathfinderResult train_pathfinder(const models::Dataset& train, const PathfinderConfig& cfg,
                                  const models::Dataset& val, std::uint64_t seed);

}  // namespace pinv
