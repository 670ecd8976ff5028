#include "pinv/training.hpp"

#include "pinv/nn/adam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pinv {

void TrainingSchedule::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 0 || batch_size == 1) throw ConfigError("batch_size must be 0 (auto) or >= 2");
  if (!(convergence_rel_tol > 0.0 && convergence_rel_tol < 1.0)) {
    throw ConfigError("convergence_rel_tol must lie in (0, 1)");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (min_epochs < 1 || max_epochs < min_epochs) throw ConfigError("need 1 <= min_epochs <= max_epochs");
}

const std::vector<std::string>& schedule_keys() {
  static const std::vector<std::string> keys{"lr", "batch_size", "convergence_rel_tol", "patience",
                                             "min_epochs", "max_epochs"};
  return keys;
}

void to_json(nlohmann::json& j, const TrainingSchedule& s) {
  j["lr"] = s.lr;
  j["batch_size"] = s.batch_size;
  j["convergence_rel_tol"] = s.convergence_rel_tol;
  j["patience"] = s.patience;
  j["min_epochs"] = s.min_epochs;
  j["max_epochs"] = s.max_epochs;
}

void read_schedule(const nlohmann::json& j, TrainingSchedule& s) {
  s.lr = j.value("lr", s.lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.convergence_rel_tol = j.value("convergence_rel_tol", s.convergence_rel_tol);
  s.patience = j.value("patience", s.patience);
  s.min_epochs = j.value("min_epochs", s.min_epochs);
  s.max_epochs = j.value("max_epochs", s.max_epochs);
  s.validate();
}

void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

int resolve_batch_size(int requested, Index n) {
  if (requested > 0) return static_cast<int>(std::min<Index>(requested, n));
  if (n <= 50) return static_cast<int>(n);
  return 32;
}

std::vector<std::vector<Index>> make_batches(Index n, int batch_size, std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min<Index>(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

bool ConvergenceMonitor::update(int epoch, double val_loss) {
  bool small = false;
  if (previous_) {
    const double denom = std::max(std::abs(*previous_), 1e-300);
    small = std::abs(val_loss - *previous_) / denom < schedule_.convergence_rel_tol;
  }
  previous_ = val_loss;
  streak_ = small ? streak_ + 1 : 0;
  return epoch >= schedule_.min_epochs && streak_ >= schedule_.patience;
}

nlohmann::json TrainingLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const EpochRecord& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"w_min", e.w_min},
                    {"w_mean", e.w_mean},
                    {"w_max", e.w_max},
                    {"w_dataset_mean", e.w_dataset_mean}});
  }
  return {{"phase", phase}, {"converged", converged}, {"epochs", rows}};
}

DivergenceError::DivergenceError(const std::string& what, int epoch)
    : NumericalError(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

TrainingLog run_training(const TrainingSchedule& schedule, Index rows, std::uint64_t seed, const std::string& phase,
                         const TrainingHooks& hooks) {
  schedule.validate();
  if (rows < 2) throw DimensionError(phase + ": need at least 2 training rows");
  std::mt19937_64 rng(seed);
  nn::AdamState adam;
  adam.lr = schedule.lr;
  const int batch = resolve_batch_size(schedule.batch_size, rows);
  ConvergenceMonitor monitor(schedule);
  TrainingLog log;
  log.phase = phase;
  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      double loss_sum = 0.0;
      for (const auto& idx : make_batches(rows, batch, rng)) {
        nn::Tape tape;
        nn::Var loss = hooks.batch_loss(tape, idx);
        tape.backward(loss);
        std::vector<Matrix*> params = hooks.parameters();
        std::vector<Matrix> grads;
        grads.reserve(params.size());
        for (Matrix* p : params) grads.push_back(tape.grad(*p));
        nn::adam_step(adam, params, grads);
        loss_sum += loss.value()(0, 0) * static_cast<double>(idx.size());
      }
      rec.train_loss = loss_sum / static_cast<double>(rows);
      if (hooks.end_epoch) hooks.end_epoch();
      rec.val_loss = hooks.val_loss();
      if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
        throw NumericalError(phase + ": non-finite loss");
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericalError& e) {
      throw DivergenceError(e.what(), epoch);
    }
    log.epochs.push_back(rec);
    if (monitor.update(epoch, rec.val_loss)) {
      log.converged = true;
      break;
    }
  }
  return log;
}

Standardizer Standardizer::fit(const Matrix& x) {
  if (x.rows() == 0) throw DimensionError("cannot standardize an empty matrix");
  Standardizer s;
  s.mean = x.colwise().mean();
  s.scale = ((x.rowwise() - s.mean).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(Index cols) {
  return Standardizer{RowVector::Zero(cols), RowVector::Ones(cols)};
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DimensionError("standardizer: column count mismatch");
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

Matrix Standardizer::invert(const Matrix& z) const {
  if (z.cols() != mean.size()) throw DimensionError("standardizer: column count mismatch");
  Matrix out = z.array().rowwise() * scale.array();
  return out.rowwise() + mean;
}

nlohmann::json Standardizer::to_json() const {
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  auto m = j.at("mean").get<std::vector<double>>();
  auto s = j.at("scale").get<std::vector<double>>();
  if (m.size() != s.size()) throw IoError("standardizer: mean/scale length mismatch");
  Standardizer out;
  out.mean = Eigen::Map<RowVector>(m.data(), static_cast<Index>(m.size()));
  out.scale = Eigen::Map<RowVector>(s.data(), static_cast<Index>(s.size()));
  return out;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Pathfinder: return "PF";
    case Method::NaiveInversion: return "NI";
    case Method::MDN: return "MDN";
    case Method::MAF: return "MAF";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "PF" || s == "pf" || s == "pathfinder") return Method::Pathfinder;
  if (s == "NI" || s == "ni") return Method::NaiveInversion;
  if (s == "MDN" || s == "mdn") return Method::MDN;
  if (s == "MAF" || s == "maf") return Method::MAF;
  throw ConfigError("unknown method '" + s + "' (expected PF, NI, MDN or MAF)");
}

}  // namespace pinv
