// Pieces shared by every estimator: schedules, batching, the validation-loss
// stopping rule, feature standardization and the trained-inverter interface.
#pragma once

#include "pinv/core.hpp"
#include "pinv/nn/dense_net.hpp"
#include "pinv/nn/tape.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pinv {

struct TrainingSchedule {
  double lr = 1e-3;
  int batch_size = 0;                 // 0 -> min(N, 32), full batch when N <= 50
  double convergence_rel_tol = 1e-3;  // stop when |dL_val| / |L_val| < tol ...
  int patience = 1;                   // ... for this many consecutive epochs
  int min_epochs = 2000;
  int max_epochs = 5000;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingSchedule& s);
/// Reads known schedule keys from `j`, leaving others to the caller.
void read_schedule(const nlohmann::json& j, TrainingSchedule& s);
const std::vector<std::string>& schedule_keys();

/// Throws ConfigError naming the first key of `j` not listed in `allowed`.
void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where);

int resolve_batch_size(int requested, Index n);

/// Shuffled mini-batches of row indices. A trailing batch of one row is merged
/// into its predecessor so batch-norm always sees at least two rows.
std::vector<std::vector<Index>> make_batches(Index n, int batch_size, std::mt19937_64& rng);

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows);

/// Relative-change stopping rule on the validation loss.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(const TrainingSchedule& s) : schedule_(s) {}
  /// Records the loss after `epoch` (1-based); true once converged.
  bool update(int epoch, double val_loss);

 private:
  TrainingSchedule schedule_;
  std::optional<double> previous_;
  int streak_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  // Projected weight statistics (PATHFINDER only).
  double w_min = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
  double w_dataset_mean = 0.0;  // mean raw weight-net output over the full training set
};

struct TrainingLog {
  std::string phase;
  std::vector<EpochRecord> epochs;
  bool converged = false;

  nlohmann::json to_json() const;
};

/// Training run whose loss went non-finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, int epoch);
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Callbacks for run_training. `batch_loss` builds the training loss of the
/// given rows on a fresh tape; `val_loss` is evaluated in inference mode after
/// `end_epoch` has run.
struct TrainingHooks {
  std::function<nn::Var(nn::Tape&, const std::vector<Index>& rows)> batch_loss;
  std::function<std::vector<Matrix*>()> parameters;
  std::function<void()> end_epoch;
  std::function<double()> val_loss;
};

/// Adam over shuffled mini-batches of `rows` training rows until the
/// validation loss converges or max_epochs. Non-finite losses raise
/// DivergenceError carrying the epoch.
TrainingLog run_training(const TrainingSchedule& schedule, Index rows, std::uint64_t seed, const std::string& phase,
                         const TrainingHooks& hooks);

/// Per-column affine standardization (x - mean) / scale, fitted on training rows.
struct Standardizer {
  RowVector mean;
  RowVector scale;

  static Standardizer fit(const Matrix& x);
  static Standardizer identity(Index cols);
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& z) const;

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

enum class Method { Pathfinder, NaiveInversion, MDN, MAF };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// A trained pseudoinverse estimate: maps desired responses to stimuli.
class Inverter {
 public:
  virtual ~Inverter() = default;
  virtual Method method() const = 0;
  /// Rows of `responses` -> rows of predicted stimuli (not yet clipped).
  virtual Matrix predict(const Matrix& responses) const = 0;
  /// Method-specific payload; see save_inverter for the file envelope.
  virtual nlohmann::json to_json() const = 0;
};

}  // namespace pinv
