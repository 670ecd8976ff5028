// Masked autoregressive flow over the joint (theta, r), with the stimulus
// recovered by gradient ascent on log p(theta, r) at fixed r.
#pragma once

#include "pinv/models/dataset.hpp"
#include "pinv/models/forward_model.hpp"
#include "pinv/nn/tape.hpp"
#include "pinv/training.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace pinv {

struct MAFConfig {
  int flows = 3;
  int hidden_units = 10;
  bool batch_norm_flow = true;
  bool recalibrate_batch_norm = true;
  int mode_steps = 500;
  int mode_restarts = 16;
  double mode_lr = 1e-3;
  TrainingSchedule schedule;

  void validate() const;
  nlohmann::json to_json() const;
  static MAFConfig from_json(const nlohmann::json& j);
};

/// One autoregressive block: u = (x - mu(x)) * exp(-alpha(x)), with mu_d and
/// alpha_d depending only on inputs of lower degree.
struct MadeBlock {
  std::vector<int> degrees;  // input degree per column, a permutation of 1..D
  Matrix w1, b1, m1;         // D x H
  Matrix w2, b2, m2;         // H x H
  Matrix wm, bm, wa, ba, mo; // H x D

  static MadeBlock make(const std::vector<int>& degrees, int hidden, std::mt19937_64& rng);
  /// mu and alpha for every row of x.
  void conditioner(const Matrix& x, Matrix& mu, Matrix& alpha) const;
  void conditioner(nn::Tape& tape, nn::Var x, nn::Var& mu, nn::Var& alpha);
  std::vector<Matrix*> parameters();
};

/// y = (x - mean) / sqrt(var + eps) * exp(log_gamma) + beta.
struct BatchNormFlow {
  Matrix log_gamma, beta;             // 1 x D
  Matrix running_mean, running_var;   // 1 x D
  double momentum = 0.99;
  double epsilon = 1e-5;

  static BatchNormFlow identity(Index dim);
  std::vector<Matrix*> parameters() { return {&log_gamma, &beta}; }
};

class MAFModel final : public Inverter {
 public:
  Method method() const override { return Method::MAF; }
  /// Mode search with the configured steps and restarts.
  Matrix predict(const Matrix& responses) const override;
  nlohmann::json to_json() const override;
  static MAFModel from_json(const nlohmann::json& j);

  Index theta_dim() const { return theta_dim_; }
  Index dim() const { return static_cast<Index>(scaler.mean.size()); }

  /// log p(x) for joint rows x = [theta, r] in original units (inference mode).
  Vector log_prob(const Matrix& x) const;
  /// Maps joint rows to the base space; adds log|det dz/dx| (standardized coordinates) to `logdet`.
  Matrix to_base(const Matrix& x_std, Vector* logdet = nullptr) const;
  /// Inverse of to_base.
  Matrix from_base(const Matrix& z) const;
  Matrix sample(Index n, std::mt19937_64& rng) const;

  /// Recorded log-density of standardized rows (without the standardizer's constant).
  nn::Var log_prob_std(nn::Tape& tape, nn::Var x_std, bool training);
  std::vector<Matrix*> parameters();
  void recalibrate(const Matrix& x_std);

  std::vector<MadeBlock> blocks;
  std::vector<BatchNormFlow> norms;  // empty when batch_norm_flow is off
  Standardizer scaler;               // joint standardization
  models::Domain domain;             // stimulus domain searched by predict
  MAFConfig config;
  std::uint64_t search_seed = 0;
  Index theta_dim_ = 0;
};

struct ModeSearchResult {
  Matrix thetas;        // best restart per response
  Vector log_density;   // log p(theta, r) at the returned theta
  Matrix all_thetas;    // rows t * restarts + k
  Vector all_log_density;
};

/// Adam ascent on log p(theta, r) over theta from `restarts` uniform starts per
/// response; theta is clipped to the domain after every step.
ModeSearchResult maf_mode_search(const MAFModel& model, const Matrix& responses, int restarts, int steps,
                                 double lr, std::uint64_t seed);

struct MAFResult {
  MAFModel model;
  TrainingLog log;
};

MAFResult train_maf(const models::Dataset& train, const MAFConfig& cfg, const models::Dataset& val,
                    const models::Domain& domain, std::uint64_t seed);

}  // namespace pinv
