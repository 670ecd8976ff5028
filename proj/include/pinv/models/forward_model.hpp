// Forward mappings g: theta -> r used both to generate data and as the
// evaluation oracle.
#pragma once

#include "pinv/core.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace pinv::models {

/// Stimulus region. Boxes are sampled uniformly; balls either uniformly in
/// the solid ball or uniformly on its surface.
struct Domain {
  enum class Kind { Box, Ball, Sphere };

  Kind kind = Kind::Box;
  Vector lower;  // Box only
  Vector upper;  // Box only
  double radius = 0.0;
  Index dim = 0;

  static Domain box(Vector lower, Vector upper);
  static Domain interval(double lo, double hi);
  static Domain ball(Index dim, double radius, bool surface_only = false);

  bool contains(const Eigen::Ref<const Vector>& theta, double tol = 1e-12) const;
  /// Nearest point of the domain (Euclidean).
  Vector clip(const Eigen::Ref<const Vector>& theta) const;
  Vector sample(std::mt19937_64& rng) const;

  nlohmann::json to_json() const;
  static Domain from_json(const nlohmann::json& j);
};

struct ResponseRange {
  double min = 0.0;
  double max = 1.0;
  double width() const { return max - min; }
};

class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual std::string name() const = 0;
  virtual Index theta_dim() const = 0;
  virtual Index response_dim() const = 0;
  virtual const Domain& domain() const = 0;
  virtual std::vector<ResponseRange> response_range() const = 0;

  /// Noiseless response, defined for any theta (no domain check).
  virtual Vector eval_unchecked(const Eigen::Ref<const Vector>& theta) const = 0;
  /// d r / d theta, response_dim x theta_dim.
  virtual Matrix jacobian(const Eigen::Ref<const Vector>& theta) const = 0;

  /// Noiseless response; throws DomainError outside the domain.
  Vector eval(const Eigen::Ref<const Vector>& theta) const;
  /// Row-wise eval_unchecked over a batch.
  Matrix eval_rows(const Matrix& thetas) const;

  double noise_sigma() const { return noise_sigma_; }
  void set_noise_sigma(double sigma);

  std::unique_ptr<ForwardModel> clone_noiseless() const;
  virtual std::unique_ptr<ForwardModel> clone() const = 0;

 protected:
  double noise_sigma_ = 0.0;
};

enum class ToyKind { Cosine, Quartic, GaussianBump };

/// r = cos(2 pi theta) on [0,3]; r = (theta^2 - 4)^2 on [-3,3];
/// r = exp(-theta^2 / 2) on [-3,3]. Default noise std 0.1 (variance 0.01).
class ToyModel final : public ForwardModel {
 public:
  explicit ToyModel(ToyKind kind, double noise_sigma = 0.1);

  ToyKind kind() const { return kind_; }
  std::string name() const override;
  Index theta_dim() const override { return 1; }
  Index response_dim() const override { return 1; }
  const Domain& domain() const override { return domain_; }
  std::vector<ResponseRange> response_range() const override;

  double eval_scalar(double theta) const;  // throws outside the domain
  double eval_scalar_unchecked(double theta) const;
  Vector eval_unchecked(const Eigen::Ref<const Vector>& theta) const override;
  Matrix jacobian(const Eigen::Ref<const Vector>& theta) const override;
  std::unique_ptr<ForwardModel> clone() const override { return std::make_unique<ToyModel>(*this); }

 private:
  ToyKind kind_;
  Domain domain_;
};

/// r = M theta on a box; invertible when M is square and nonsingular.
class LinearModel final : public ForwardModel {
 public:
  LinearModel(Matrix map, Domain domain, double noise_sigma = 0.0);

  std::string name() const override { return "linear"; }
  Index theta_dim() const override { return map_.cols(); }
  Index response_dim() const override { return map_.rows(); }
  const Domain& domain() const override { return domain_; }
  std::vector<ResponseRange> response_range() const override;
  Vector eval_unchecked(const Eigen::Ref<const Vector>& theta) const override { return map_ * theta; }
  Matrix jacobian(const Eigen::Ref<const Vector>&) const override { return map_; }
  std::unique_ptr<ForwardModel> clone() const override { return std::make_unique<LinearModel>(*this); }

  const Matrix& map() const { return map_; }

 private:
  Matrix map_;
  Domain domain_;
};

/// Constants of the synthetic neuron surrogate, loaded from a versioned JSON
/// file (config/surrogate_v1.json).
struct SurrogateConstants {
  int version = 1;
  double radius = 2.0;
  double rate_max = 200.0;
  std::vector<Matrix> projections;  // each 5 x 50
  std::vector<double> alpha;
  std::vector<double> bias;

  static SurrogateConstants load(const std::string& path);
  static SurrogateConstants from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Firing-rate surrogate: r_j = rate_max * logistic(alpha_j ||A_j theta|| - b_j).
/// Depends on theta only through two 5-d projections, so it is many-to-one
/// in a 40-d null space and saturating in amplitude.
class SurrogateNeuronModel final : public ForwardModel {
 public:
  explicit SurrogateNeuronModel(SurrogateConstants constants, bool surface_sampling = false,
                                double noise_sigma = 0.0);

  std::string name() const override { return "surrogate"; }
  Index theta_dim() const override { return constants_.projections.front().cols(); }
  Index response_dim() const override { return static_cast<Index>(constants_.projections.size()); }
  const Domain& domain() const override { return domain_; }
  std::vector<ResponseRange> response_range() const override;
  Vector eval_unchecked(const Eigen::Ref<const Vector>& theta) const override;
  Matrix jacobian(const Eigen::Ref<const Vector>& theta) const override;
  std::unique_ptr<ForwardModel> clone() const override {
    return std::make_unique<SurrogateNeuronModel>(*this);
  }

  const SurrogateConstants& constants() const { return constants_; }

 private:
  SurrogateConstants constants_;
  Domain domain_;
};

/// Options accepted by make_forward_model.
struct ModelOptions {
  double noise_multiplier = 1.0;     // scales the model's default noise std
  std::optional<double> noise_sigma;  // absolute override, applied before the multiplier
  bool sphere_surface = false;    // surrogate only: sample on the sphere
  std::string surrogate_config;   // empty -> bundled config/surrogate_v1.json
};

/// "cos", "quartic", "bump" or "surrogate".
std::unique_ptr<ForwardModel> make_forward_model(const std::string& name, const ModelOptions& options = {});
std::vector<std::string> forward_model_names();
std::string default_surrogate_config_path();

}  // namespace pinv::models
