// Hyperparameter selection and the multi-trial benchmark.
#pragma once

#include "pinv/eval/methods.hpp"
#include "pinv/eval/metrics.hpp"
#include "pinv/eval/split.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pinv::eval {

struct GridSearchResult {
  std::size_t best_index = 0;
  double best_val_nmae = 0.0;
  std::vector<std::optional<double>> val_nmae;  // empty where the config failed
  std::vector<std::string> warnings;
  TrainedInverter trained;
};

/// Trains one model per lattice point (seeds derived from `seed` and the
/// point's index) and keeps the lowest validation NMAE; ties keep the earlier
/// point. Failed points are skipped with a warning; NumericalError if all fail.
GridSearchResult grid_search(Method method, const std::vector<nlohmann::json>& grid, const models::Dataset& train,
                             const models::Dataset& val, const Matrix& val_responses,
                             const models::ForwardModel& model, std::uint64_t seed);

struct BenchmarkSpec {
  std::vector<std::string> models;
  models::ModelOptions model_options;
  std::vector<Method> methods;
  std::vector<Index> sizes;  // training-set sizes; round(N / train fraction) samples are drawn
  int trials = 10;
  std::uint64_t seed = 0;
  SplitSpec split;                          // seed unused, each trial derives its own
  std::optional<double> response_tolerance;  // default: 0 for toys, 0.5 for the surrogate
  // Per method name, overrides merged over the model defaults; several entries form a grid.
  std::map<std::string, std::vector<nlohmann::json>> grids;
  int jobs = 1;

  void validate() const;
  double tolerance_for(const std::string& model_name) const;
  /// Resolved lattice for one (method, model) pair.
  std::vector<nlohmann::json> grid_for(Method method, const std::string& model_name) const;
  nlohmann::json to_json() const;  // fully resolved echo
};

struct TrialRecord {
  std::string model;
  Method method = Method::Pathfinder;
  Index size = 0;
  int trial = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  bool ok = false;
  std::string error;
  NMAEResult test;
  double val_nmae = 0.0;
  std::size_t chosen_index = 0;
  nlohmann::json chosen;
  std::vector<std::string> warnings;
  Index train_rows = 0;
  Index val_rows = 0;
  Index test_responses = 0;
  int epochs = 0;  // summed over training phases of the chosen model
  double seconds = 0.0;
};

struct CellSummary {
  std::string model;
  Method method = Method::Pathfinder;
  Index size = 0;
  Summary nmae;  // over successful trials
  int failed = 0;
  std::map<std::string, int> chosen_counts;  // compact config dump -> trials
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
};

struct BenchmarkReport {
  nlohmann::json spec;
  std::vector<TrialRecord> trials;  // model, size, trial, method order
  std::vector<CellSummary> cells;   // model, size, method order

  const CellSummary* cell(const std::string& model, Method method, Index size) const;
  /// Everything except wall-clock times, so reruns compare byte for byte.
  nlohmann::json to_json() const;
  std::string cells_csv() const;   // one row per cell
  std::string trials_csv() const;  // one row per trial
  std::string to_markdown() const;  // methods as rows, model x N as columns
  nlohmann::json timing_json() const;
};

/// Samples to draw so that about `train_size` land in the training split.
Index dataset_size_for(Index train_size, double train_fraction);

/// Called after each finished trial (from worker threads, serialized).
using ProgressFn = std::function<void(const TrialRecord&)>;

BenchmarkReport run_benchmark(const BenchmarkSpec& spec, const ProgressFn& progress = {});

/// Runs fn(i) for i in [0, count) on up to `jobs` threads.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace pinv::eval
