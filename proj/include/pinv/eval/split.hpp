// Splitting a dataset by distinct responses, so that every stimulus producing
// a held-out response is removed from training.
#pragma once

#include "pinv/models/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace pinv::eval {

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  double response_tolerance = 0.0;  // sup-norm; 0 groups exactly equal responses only
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SplitSpec from_json(const nlohmann::json& j);
};

enum class Part { Train = 0, Val = 1, Test = 2 };

struct SplitResult {
  models::Dataset train;
  models::Dataset val;
  Matrix test_responses;      // one representative per test cluster
  Matrix val_responses;       // one representative per validation cluster
  std::vector<int> cluster;   // cluster id per input row
  std::vector<Part> cluster_part;  // split of each cluster
};

/// Single-linkage clusters of response rows: two rows share a cluster when a
/// chain of rows joins them with consecutive sup-norm distances <= tol.
std::vector<int> response_clusters(const Matrix& responses, double tol);

/// Partitions the response clusters by the requested fractions (rounded, test and
/// val first). Throws ConfigError when a split with positive fraction would
/// be empty.
SplitResult split_by_response(const models::Dataset& data, const SplitSpec& spec);

}  // namespace pinv::eval
