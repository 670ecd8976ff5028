// Fully connected networks with optional per-layer batch normalization.
#pragma once

#include "pinv/core.hpp"
#include "pinv/nn/tape.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pinv::nn {

enum class Activation { ReLU, Linear, Softmax, ELUplus1 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Applies an activation to a plain matrix (rows are samples).
Matrix activate(Activation a, const Matrix& x);
Var activate(Activation a, Var x);

struct BatchNormState {
  Matrix gamma;         // 1 x features
  Matrix beta;          // 1 x features
  Matrix running_mean;  // 1 x features
  Matrix running_var;   // 1 x features
  double momentum = 0.99;
  double epsilon = 1e-5;

  static BatchNormState identity(Index features, double momentum = 0.99, double epsilon = 1e-5);
  Index features() const { return gamma.cols(); }
};

/// Normalizes `x` per column. Training mode uses batch statistics (biased
/// variance) and folds them into the running averages with
/// running <- momentum * running + (1 - momentum) * batch.
Matrix batchnorm_apply(BatchNormState& state, const Matrix& x, bool training);
Var batchnorm_apply(BatchNormState& state, Var x, bool training);

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
  Activation activation = Activation::Linear;
  std::optional<BatchNormState> batch_norm;  // applied between affine map and activation

  Index input_dim() const { return weight.rows(); }
  Index output_dim() const { return weight.cols(); }
};

/// Layout of a hidden-layer stack: `hidden_layers` ReLU layers of
/// `hidden_units` each, then a single output layer.
struct NetSpec {
  int hidden_layers = 5;
  int hidden_units = 10;
  bool batch_norm = true;
  // Biases start at U(-1/sqrt(fan_in), 1/sqrt(fan_in)) instead of zero, which
  // keeps narrow deep ReLU stacks from starting with a dead layer.
  bool fan_in_bias = true;
};

class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// He-uniform initialized weights: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  static DenseNet make(Index input_dim, Index output_dim, const NetSpec& spec, Activation output,
                       std::mt19937_64& rng);

  /// Same, with the output layer omitted: the net ends at the last hidden layer.
  static DenseNet make_trunk(Index input_dim, const NetSpec& spec, std::mt19937_64& rng);

  Index input_dim() const;
  Index output_dim() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Trainable matrices (weights, biases, batch-norm gamma/beta) in a fixed order.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::size_t parameter_count() const;

  /// Plain forward pass. Training mode updates batch-norm running statistics.
  Matrix forward(const Matrix& x, bool training);
  /// Replaces every batch-norm running mean/variance with the exact
  /// statistics of `x` propagated through the net (needs >= 2 rows).
  void recalibrate_batch_norm(const Matrix& x);
  bool has_batch_norm() const;

  /// Inference-mode forward pass (running statistics), no side effects.
  Matrix predict(const Matrix& x) const;

  /// Recorded forward pass. With `skip_output_activation` the final layer's
  /// activation is not applied (used for log-softmax heads).
  Var forward(Tape& tape, Var x, bool training, bool skip_output_activation = false);

  nlohmann::json to_json() const;
  static DenseNet from_json(const nlohmann::json& j);

 private:
  void check_input(Index rows, Index cols) const;
  std::vector<DenseLayer> layers_;
};

/// Draws a He-uniform in x out matrix.
Matrix he_uniform(Index in, Index out, std::mt19937_64& rng);
Matrix init_bias(Index in, Index out, bool fan_in, std::mt19937_64& rng);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols);

}  // namespace pinv::nn
