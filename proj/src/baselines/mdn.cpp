#include "pinv/baselines/mdn.hpp"

#include "pinv/nn/ops.hpp"

#include <cmath>
#include <numbers>

namespace pinv {

void MDNConfig::validate() const {
  if (components < 1) throw ConfigError("MDN components must be >= 1");
  if (trunk_layers < 1 || hidden_units < 1) throw ConfigError("MDN trunk needs at least one hidden layer/unit");
  if (!(variance_floor > 0.0)) throw ConfigError("MDN variance_floor must be > 0");
  schedule.validate();
}

nlohmann::json MDNConfig::to_json() const {
  nlohmann::json j;
  j["components"] = components;
  j["trunk_layers"] = trunk_layers;
  j["hidden_units"] = hidden_units;
  j["batch_norm"] = batch_norm;
  j["recalibrate_batch_norm"] = recalibrate_batch_norm;
  j["variance_floor"] = variance_floor;
  pinv::to_json(j, schedule);
  return j;
}

MDNConfig MDNConfig::from_json(const nlohmann::json& j) {
  std::vector<std::string> allowed{"components", "trunk_layers",           "hidden_units",
                                   "batch_norm", "recalibrate_batch_norm", "variance_floor"};
  allowed.insert(allowed.end(), schedule_keys().begin(), schedule_keys().end());
  require_known_keys(j, allowed, "MDN config");
  MDNConfig c;
  try {
    c.components = j.value("components", c.components);
    c.trunk_layers = j.value("trunk_layers", c.trunk_layers);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.recalibrate_batch_norm = j.value("recalibrate_batch_norm", c.recalibrate_batch_norm);
    c.variance_floor = j.value("variance_floor", c.variance_floor);
    read_schedule(j, c.schedule);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MDN config: ") + e.what());
  }
  c.validate();
  return c;
}

int default_mdn_components(const std::string& model_name) {
  if (model_name == "cos") return 15;
  if (model_name == "bump") return 2;
  if (model_name == "quartic") return 10;
  return 10;
}

MDNModel::MDNModel(const MDNConfig& cfg, Index theta_dim, Index response_dim, std::uint64_t seed)
    : response_scaler(Standardizer::identity(response_dim)),
      theta_scaler(Standardizer::identity(theta_dim)),
      config(cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  trunk = nn::DenseNet::make_trunk(response_dim, nn::NetSpec{cfg.trunk_layers, cfg.hidden_units, cfg.batch_norm},
                                   rng);
  const nn::NetSpec head{0, cfg.hidden_units, false};
  const Index k = cfg.components;
  weight_head = nn::DenseNet::make(cfg.hidden_units, k, head, nn::Activation::Softmax, rng);
  mean_head = nn::DenseNet::make(cfg.hidden_units, k * theta_dim, head, nn::Activation::Linear, rng);
  var_head = nn::DenseNet::make(cfg.hidden_units, k * theta_dim, head, nn::Activation::ELUplus1, rng);
}

std::vector<Matrix*> MDNModel::parameters() {
  std::vector<Matrix*> out = trunk.parameters();
  for (nn::DenseNet* h : {&weight_head, &mean_head, &var_head}) {
    for (Matrix* p : h->parameters()) out.push_back(p);
  }
  return out;
}

MixtureParams MDNModel::mixture(const Matrix& responses) const {
  const Matrix h = trunk.predict(response_scaler.apply(responses));
  const Index k = config.components;
  const Index n = theta_dim();
  MixtureParams out;
  out.weights = weight_head.predict(h);
  out.means = mean_head.predict(h);
  out.variances = var_head.predict(h).cwiseMax(config.variance_floor);
  for (Index c = 0; c < k; ++c) {
    out.means.middleCols(c * n, n) = theta_scaler.invert(out.means.middleCols(c * n, n));
    out.variances.middleCols(c * n, n).array().rowwise() *= theta_scaler.scale.array().square();
  }
  return out;
}

Matrix mixture_mode(const Matrix& weights, const Matrix& means, Index theta_dim) {
  if (means.cols() != weights.cols() * theta_dim || means.rows() != weights.rows()) {
    throw DimensionError("mixture_mode: weight/mean shapes disagree");
  }
  Matrix out(weights.rows(), theta_dim);
  for (Index i = 0; i < weights.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < weights.cols(); ++c) {
      if (weights(i, c) > weights(i, best)) best = c;
    }
    out.row(i) = means.block(i, best * theta_dim, 1, theta_dim);
  }
  return out;
}

Matrix MDNModel::predict(const Matrix& responses) const {
  const MixtureParams p = mixture(responses);
  return mixture_mode(p.weights, p.means, theta_dim());
}

nlohmann::json MDNModel::to_json() const {
  return {{"config", config.to_json()},
          {"trunk", trunk.to_json()},
          {"weight_head", weight_head.to_json()},
          {"mean_head", mean_head.to_json()},
          {"var_head", var_head.to_json()},
          {"response_scaler", response_scaler.to_json()},
          {"theta_scaler", theta_scaler.to_json()}};
}

MDNModel MDNModel::from_json(const nlohmann::json& j) {
  MDNModel m;
  m.config = MDNConfig::from_json(j.at("config"));
  m.trunk = nn::DenseNet::from_json(j.at("trunk"));
  m.weight_head = nn::DenseNet::from_json(j.at("weight_head"));
  m.mean_head = nn::DenseNet::from_json(j.at("mean_head"));
  m.var_head = nn::DenseNet::from_json(j.at("var_head"));
  m.response_scaler = Standardizer::from_json(j.at("response_scaler"));
  m.theta_scaler = Standardizer::from_json(j.at("theta_scaler"));
  if (m.weight_head.output_dim() != m.config.components ||
      m.mean_head.output_dim() != m.var_head.output_dim() ||
      m.mean_head.output_dim() != m.config.components * m.theta_scaler.mean.size()) {
    throw IoError("MDN model: head sizes disagree with the component count");
  }
  return m;
}

nn::Var mdn_nll(nn::Tape& tape, MDNModel& model, const Matrix& responses, const Matrix& thetas, bool training) {
  const Index k = model.config.components;
  const Index n = thetas.cols();
  if (n != model.theta_dim()) throw DimensionError("mdn_nll: theta dimension mismatch");
  nn::Var h = model.trunk.forward(tape, tape.constant(model.response_scaler.apply(responses)), training);
  nn::Var log_w = nn::log_softmax_rows(model.weight_head.forward(tape, h, training, true));
  nn::Var mu = model.mean_head.forward(tape, h, training);
  nn::Var var = nn::clamp_min(model.var_head.forward(tape, h, training), model.config.variance_floor);
  nn::Var target = tape.constant(model.theta_scaler.apply(thetas).replicate(1, k));
  nn::Var quad = nn::add(nn::div(nn::square(mu - target), var), nn::log(var));
  const double norm = 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  nn::Var log_comp = nn::add_scalar(nn::sub(log_w, nn::scale(nn::group_sum_cols(quad, n), 0.5)), -norm);
  return nn::scale(nn::mean(nn::logsumexp_rows(log_comp)), -1.0);
}

MDNResult train_mdn(const models::Dataset& train, const MDNConfig& cfg, const models::Dataset& val,
                    std::uint64_t seed) {
  cfg.validate();
  train.validate();
  MDNResult out;
  MDNModel& m = out.model;
  m = MDNModel(cfg, train.theta_dim(), train.response_dim(), derive_seed(seed, 1));
  m.response_scaler = Standardizer::fit(train.responses);
  m.theta_scaler = Standardizer::fit(train.thetas);
  const models::Dataset& v = val.size() > 0 ? val : train;
  const Matrix r_std = m.response_scaler.apply(train.responses);

  TrainingHooks hooks;
  hooks.batch_loss = [&](nn::Tape& tape, const std::vector<Index>& rows) {
    return mdn_nll(tape, m, gather_rows(train.responses, rows), gather_rows(train.thetas, rows), true);
  };
  hooks.parameters = [&] { return m.parameters(); };
  hooks.end_epoch = [&] {
    if (cfg.recalibrate_batch_norm) m.trunk.recalibrate_batch_norm(r_std);
  };
  hooks.val_loss = [&] {
    nn::Tape tape;
    return mdn_nll(tape, m, v.responses, v.thetas, false).value()(0, 0);
  };
  out.log = run_training(cfg.schedule, train.size(), derive_seed(seed, 2), "mdn", hooks);
  return out;
}

}  // namespace pinv
