#include "pinv/eval/split.hpp"

#include "pinv/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pinv::eval {

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    i = parent[static_cast<std::size_t>(i)];
  }
  return i;
}

}  // namespace

void SplitSpec::validate() const {
  if (train < 0.0 || val < 0.0 || test < 0.0) throw ConfigError("split fractions must be >= 0");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(train > 0.0)) throw ConfigError("train fraction must be > 0");
  if (!(response_tolerance >= 0.0)) throw ConfigError("response_tolerance must be >= 0");
}

nlohmann::json SplitSpec::to_json() const {
  return {{"train", train}, {"val", val}, {"test", test}, {"response_tolerance", response_tolerance}};
}

SplitSpec SplitSpec::from_json(const nlohmann::json& j) {
  require_known_keys(j, {"train", "val", "test", "response_tolerance"}, "split");
  SplitSpec s;
  try {
    s.train = j.value("train", s.train);
    s.val = j.value("val", s.val);
    s.test = j.value("test", s.test);
    s.response_tolerance = j.value("response_tolerance", s.response_tolerance);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("split: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<int> response_clusters(const Matrix& responses, double tol) {
  const Index n = responses.rows();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Lexicographic order; rows within tol in sup-norm are within tol on column 0,
  // so only a window of the sorted order needs comparing.
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (Index j = 0; j < responses.cols(); ++j) {
      if (responses(a, j) != responses(b, j)) return responses(a, j) < responses(b, j);
    }
    return a < b;
  });
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  for (std::size_t p = 0; p < order.size(); ++p) {
    const int a = order[p];
    for (std::size_t q = p + 1; q < order.size(); ++q) {
      const int b = order[q];
      if (responses.cols() > 0 && responses(b, 0) - responses(a, 0) > tol) break;
      if ((responses.row(a) - responses.row(b)).cwiseAbs().maxCoeff() <= tol) {
        parent[static_cast<std::size_t>(find_root(parent, a))] = find_root(parent, b);
      }
    }
  }
  // Relabel so cluster ids follow the first row index that belongs to them.
  std::vector<int> label(static_cast<std::size_t>(n), -1), out(static_cast<std::size_t>(n));
  int next = 0;
  for (Index i = 0; i < n; ++i) {
    const int root = find_root(parent, static_cast<int>(i));
    if (label[static_cast<std::size_t>(root)] < 0) label[static_cast<std::size_t>(root)] = next++;
    out[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(root)];
  }
  return out;
}

SplitResult split_by_response(const models::Dataset& data, const SplitSpec& spec) {
  spec.validate();
  data.validate();
  if (data.size() == 0) throw DimensionError("cannot split an empty dataset");

  SplitResult out;
  out.cluster = response_clusters(data.responses, spec.response_tolerance);
  const int clusters = *std::max_element(out.cluster.begin(), out.cluster.end()) + 1;

  std::vector<int> perm(static_cast<std::size_t>(clusters));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n_test = static_cast<int>(std::lround(spec.test * clusters));
  const auto n_val = static_cast<int>(std::lround(spec.val * clusters));
  if ((spec.test > 0.0 && n_test == 0) || (spec.val > 0.0 && n_val == 0) || n_test + n_val >= clusters) {
    throw ConfigError("split: " + std::to_string(clusters) + " distinct responses are too few for the requested fractions");
  }
  out.cluster_part.assign(static_cast<std::size_t>(clusters), Part::Train);
  for (int k = 0; k < n_test; ++k) out.cluster_part[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = Part::Test;
  for (int k = n_test; k < n_test + n_val; ++k) {
    out.cluster_part[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = Part::Val;
  }

  std::vector<Index> train_rows, val_rows, test_reps, val_reps;
  std::vector<bool> seen(static_cast<std::size_t>(clusters), false);
  for (Index i = 0; i < data.size(); ++i) {
    const int c = out.cluster[static_cast<std::size_t>(i)];
    switch (out.cluster_part[static_cast<std::size_t>(c)]) {
      case Part::Train: train_rows.push_back(i); break;
      case Part::Val:
        val_rows.push_back(i);
        if (!seen[static_cast<std::size_t>(c)]) val_reps.push_back(i);
        break;
      case Part::Test:
        if (!seen[static_cast<std::size_t>(c)]) test_reps.push_back(i);
        break;
    }
    seen[static_cast<std::size_t>(c)] = true;
  }
  out.train = data.subset(train_rows);
  out.val = data.subset(val_rows);
  out.test_responses = gather_rows(data.responses, test_reps);
  out.val_responses = gather_rows(data.responses, val_reps);
  return out;
}

}  // namespace pinv::eval
