#include "pinv/pathfinder/pathfinder.hpp"

#include "pinv/nn/adam.hpp"
#include "pinv/nn/ops.hpp"

#include <algorithm>
#include <limits>

namespace pinv {

namespace {

std::string gradient_name(ProjectionGradient g) {
  return g == ProjectionGradient::ActiveSet ? "active_set" : "straight_through";
}

ProjectionGradient gradient_from_name(const std::string& s) {
  if (s == "active_set") return ProjectionGradient::ActiveSet;
  if (s == "straight_through") return ProjectionGradient::StraightThrough;
  throw ConfigError("projection_gradient must be 'active_set' or 'straight_through', got '" + s + "'");
}

nn::NetSpec spec_for(const PathfinderConfig& cfg, int layers, bool batch_norm) {
  return nn::NetSpec{layers, cfg.hidden_units, batch_norm};
}

// Objective on plain matrices over one full set (reg_scale 1), inference mode.
double evaluate_objective(const PathfinderModel& model, const Matrix& thetas, const Matrix& responses,
                          double beta) {
  const Matrix pred = model.predict(responses);
  const Vector res = (pred - thetas).rowwise().squaredNorm();
  const Vector w = simplex_project(model.raw_weights(thetas));
  const double b = static_cast<double>(thetas.rows());
  return w.dot(res) / b + beta * w.squaredNorm();
}

}  // namespace

void PathfinderConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (regressor_layers < 1 || weight_layers < 1) throw ConfigError("layer counts must be >= 1");
  if (hidden_units < 1) throw ConfigError("hidden_units must be >= 1");
  schedule.validate();
}

nlohmann::json PathfinderConfig::to_json() const {
  nlohmann::json j;
  j["beta"] = beta;
  j["regressor_layers"] = regressor_layers;
  j["weight_layers"] = weight_layers;
  j["hidden_units"] = hidden_units;
  j["batch_norm"] = batch_norm;
  j["weight_batch_norm"] = weight_batch_norm;
  j["uniform_initial_weights"] = uniform_initial_weights;
  j["projection_gradient"] = gradient_name(projection_gradient);
  j["recalibrate_batch_norm"] = recalibrate_batch_norm;
  pinv::to_json(j, schedule);
  return j;
}

PathfinderConfig PathfinderConfig::from_json(const nlohmann::json& j) {
  std::vector<std::string> allowed{"beta",       "regressor_layers", "weight_layers",
                                   "hidden_units", "batch_norm",     "projection_gradient",
                                   "recalibrate_batch_norm", "weight_batch_norm",
                                   "uniform_initial_weights"};
  allowed.insert(allowed.end(), schedule_keys().begin(), schedule_keys().end());
  require_known_keys(j, allowed, "PF config");
  PathfinderConfig c;
  try {
    c.beta = j.value("beta", c.beta);
    c.regressor_layers = j.value("regressor_layers", c.regressor_layers);
    c.weight_layers = j.value("weight_layers", c.weight_layers);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.weight_batch_norm = j.value("weight_batch_norm", c.weight_batch_norm);
    c.uniform_initial_weights = j.value("uniform_initial_weights", c.uniform_initial_weights);
    c.recalibrate_batch_norm = j.value("recalibrate_batch_norm", c.recalibrate_batch_norm);
    if (j.contains("projection_gradient")) {
      c.projection_gradient = gradient_from_name(j.at("projection_gradient").get<std::string>());
    }
    read_schedule(j, c.schedule);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("PF config: ") + e.what());
  }
  c.validate();
  return c;
}

PathfinderModel::PathfinderModel(const PathfinderConfig& cfg, Index theta_dim, Index response_dim,
                                 std::uint64_t seed)
    : response_scaler(Standardizer::identity(response_dim)),
      theta_scaler(Standardizer::identity(theta_dim)),
      config(cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  regressor = nn::DenseNet::make(response_dim, theta_dim, spec_for(cfg, cfg.regressor_layers, cfg.batch_norm),
                                 nn::Activation::Linear, rng);
  weight_net = nn::DenseNet::make(theta_dim, 1, spec_for(cfg, cfg.weight_layers, cfg.weight_batch_norm),
                                  nn::Activation::Linear, rng);
  if (cfg.uniform_initial_weights) {
    weight_net.layers().back().weight.setZero();
    weight_net.layers().back().bias.setZero();
  }
}

Matrix PathfinderModel::predict(const Matrix& responses) const {
  return theta_scaler.invert(regressor.predict(response_scaler.apply(responses)));
}

Vector PathfinderModel::raw_weights(const Matrix& thetas) const {
  return weight_net.predict(theta_scaler.apply(thetas)).col(0);
}

std::vector<Matrix*> PathfinderModel::parameters() {
  std::vector<Matrix*> out = regressor.parameters();
  for (Matrix* p : weight_net.parameters()) out.push_back(p);
  return out;
}

nlohmann::json PathfinderModel::to_json() const {
  return {{"config", config.to_json()},
          {"regressor", regressor.to_json()},
          {"weight_net", weight_net.to_json()},
          {"response_scaler", response_scaler.to_json()},
          {"theta_scaler", theta_scaler.to_json()}};
}

PathfinderModel PathfinderModel::from_json(const nlohmann::json& j) {
  PathfinderModel m;
  m.config = PathfinderConfig::from_json(j.at("config"));
  m.regressor = nn::DenseNet::from_json(j.at("regressor"));
  m.weight_net = nn::DenseNet::from_json(j.at("weight_net"));
  m.response_scaler = Standardizer::from_json(j.at("response_scaler"));
  m.theta_scaler = Standardizer::from_json(j.at("theta_scaler"));
  if (m.weight_net.output_dim() != 1 || m.weight_net.input_dim() != m.regressor.output_dim()) {
    throw IoError("PF model: regressor and weight net dimensions disagree");
  }
  return m;
}

nn::Var pathfinder_objective(nn::Var residual_sq, nn::Var weights, double beta, double reg_scale,
                             nn::Var* data_term, nn::Var* regularizer) {
  if (residual_sq.cols() != 1 || weights.cols() != 1 || residual_sq.rows() != weights.rows()) {
    throw DimensionError("pathfinder_objective: residuals and weights must be matching columns");
  }
  const double b = static_cast<double>(weights.rows());
  nn::Var data = nn::scale(nn::sum(nn::mul(weights, residual_sq)), 1.0 / b);
  nn::Var reg = nn::scale(nn::sum(nn::square(weights)), beta * reg_scale);
  if (data_term) *data_term = data;
  if (regularizer) *regularizer = reg;
  return data + reg;
}

PathfinderLoss pathfinder_batch_loss(nn::Tape& tape, PathfinderModel& model, const Matrix& thetas,
                                     const Matrix& responses, double beta, double reg_scale, bool training) {
  if (thetas.rows() != responses.rows()) throw DimensionError("PF batch: theta/response row mismatch");
  if (training && thetas.rows() < 2) throw DimensionError("PF batch: training needs at least 2 rows");
  nn::Var r = tape.constant(model.response_scaler.apply(responses));
  nn::Var th = tape.constant(model.theta_scaler.apply(thetas));
  nn::Var pred = nn::add_row(nn::mul_row(model.regressor.forward(tape, r, training),
                                         tape.constant(model.theta_scaler.scale)),
                             tape.constant(model.theta_scaler.mean));
  nn::Var res = nn::row_sums(nn::square(pred - tape.constant(thetas)));
  nn::Var raw = model.weight_net.forward(tape, th, training);
  nn::Var w = nn::simplex_project(raw, model.config.projection_gradient);
  PathfinderLoss out;
  out.total = pathfinder_objective(res, w, beta, reg_scale, &out.data_term, &out.regularizer);
  out.weights = w.value().col(0);
  return out;
}

PathfinderResult train_pathfinder(const models::Dataset& train, const PathfinderConfig& cfg,
                                  const models::Dataset& val, std::uint64_t seed) {
  cfg.validate();
  train.validate();
  if (train.size() < 2) throw DimensionError("train_pathfinder: need at least 2 training rows");
  const bool has_val = val.size() > 0;
  if (has_val && (val.theta_dim() != train.theta_dim() || val.response_dim() != train.response_dim())) {
    throw DimensionError("train_pathfinder: validation set dimensions differ from training set");
  }

  PathfinderResult result;
  PathfinderModel& model = result.model;
  model = PathfinderModel(cfg, train.theta_dim(), train.response_dim(), derive_seed(seed, 1));
  model.response_scaler = Standardizer::fit(train.responses);
  model.theta_scaler = Standardizer::fit(train.thetas);

  std::mt19937_64 rng(derive_seed(seed, 2));
  nn::AdamState adam;
  adam.lr = cfg.schedule.lr;
  const int batch = resolve_batch_size(cfg.schedule.batch_size, train.size());
  const double n = static_cast<double>(train.size());
  ConvergenceMonitor monitor(cfg.schedule);
  result.log.phase = "pathfinder";

  for (int epoch = 1; epoch <= cfg.schedule.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.w_min = std::numeric_limits<double>::infinity();
    rec.w_max = -std::numeric_limits<double>::infinity();
    double w_sum = 0.0, loss_sum = 0.0;
    Index w_count = 0;
    try {
      const auto batches = make_batches(train.size(), batch, rng);
      for (const auto& rows : batches) {
        const Matrix th = gather_rows(train.thetas, rows);
        const Matrix r = gather_rows(train.responses, rows);
        nn::Tape tape;
        PathfinderLoss loss =
            pathfinder_batch_loss(tape, model, th, r, cfg.beta, static_cast<double>(rows.size()) / n, true);
        tape.backward(loss.total);
        std::vector<Matrix*> params = model.parameters();
        std::vector<Matrix> grads;
        grads.reserve(params.size());
        for (Matrix* p : params) grads.push_back(tape.grad(*p));
        nn::adam_step(adam, params, grads);
        loss_sum += loss.total.value()(0, 0) * static_cast<double>(rows.size());
        rec.w_min = std::min(rec.w_min, loss.weights.minCoeff());
        rec.w_max = std::max(rec.w_max, loss.weights.maxCoeff());
        w_sum += loss.weights.sum();
        w_count += loss.weights.size();
      }
      rec.train_loss = loss_sum / n;
      rec.w_mean = w_sum / static_cast<double>(w_count);
      if (cfg.recalibrate_batch_norm) {
        model.regressor.recalibrate_batch_norm(model.response_scaler.apply(train.responses));
        model.weight_net.recalibrate_batch_norm(model.theta_scaler.apply(train.thetas));
      }
      rec.w_dataset_mean = model.raw_weights(train.thetas).mean();
      rec.val_loss = has_val ? evaluate_objective(model, val.thetas, val.responses, cfg.beta)
                             : evaluate_objective(model, train.thetas, train.responses, cfg.beta);
      if (!std::isfinite(rec.val_loss) || !std::isfinite(rec.train_loss)) {
        throw NumericalError("non-finite PF loss");
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericalError& e) {
      throw DivergenceError(e.what(), epoch);
    }
    result.log.epochs.push_back(rec);
    if (monitor.update(epoch, rec.val_loss)) {
      result.log.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace pinv
