#include "pinv/baselines/naive_inversion.hpp"

#include "pinv/nn/ops.hpp"

namespace pinv {

namespace {

const models::Dataset& validation_or_train(const models::Dataset& val, const models::Dataset& train) {
  return val.size() > 0 ? val : train;
}

}  // namespace

void NIConfig::validate() const {
  if (forward_layers < 1 || inverse_layers < 1) throw ConfigError("NI layer counts must be >= 1");
  if (hidden_units < 1) throw ConfigError("NI hidden_units must be >= 1");
  schedule.validate();
}

nlohmann::json NIConfig::to_json() const {
  nlohmann::json j;
  j["forward_layers"] = forward_layers;
  j["inverse_layers"] = inverse_layers;
  j["hidden_units"] = hidden_units;
  j["batch_norm"] = batch_norm;
  j["recalibrate_batch_norm"] = recalibrate_batch_norm;
  j["oracle_forward"] = oracle_forward;
  pinv::to_json(j, schedule);
  return j;
}

NIConfig NIConfig::from_json(const nlohmann::json& j) {
  std::vector<std::string> allowed{"forward_layers", "inverse_layers",         "hidden_units",
                                   "batch_norm",     "recalibrate_batch_norm", "oracle_forward"};
  allowed.insert(allowed.end(), schedule_keys().begin(), schedule_keys().end());
  require_known_keys(j, allowed, "NI config");
  NIConfig c;
  try {
    c.forward_layers = j.value("forward_layers", c.forward_layers);
    c.inverse_layers = j.value("inverse_layers", c.inverse_layers);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.recalibrate_batch_norm = j.value("recalibrate_batch_norm", c.recalibrate_batch_norm);
    c.oracle_forward = j.value("oracle_forward", c.oracle_forward);
    read_schedule(j, c.schedule);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("NI config: ") + e.what());
  }
  c.validate();
  return c;
}

Matrix NIModel::predict(const Matrix& responses) const {
  return theta_scaler.invert(inverse_net.predict(response_scaler.apply(responses)));
}

nlohmann::json NIModel::to_json() const {
  return {{"config", config.to_json()},
          {"forward_net", forward_net.to_json()},
          {"inverse_net", inverse_net.to_json()},
          {"theta_scaler", theta_scaler.to_json()},
          {"response_scaler", response_scaler.to_json()}};
}

NIModel NIModel::from_json(const nlohmann::json& j) {
  NIModel m;
  m.config = NIConfig::from_json(j.at("config"));
  m.forward_net = nn::DenseNet::from_json(j.at("forward_net"));
  m.inverse_net = nn::DenseNet::from_json(j.at("inverse_net"));
  m.theta_scaler = Standardizer::from_json(j.at("theta_scaler"));
  m.response_scaler = Standardizer::from_json(j.at("response_scaler"));
  if (m.inverse_net.output_dim() != m.forward_net.input_dim() ||
      m.forward_net.output_dim() != m.inverse_net.input_dim()) {
    throw IoError("NI model: forward and inverse net dimensions disagree");
  }
  return m;
}

nn::Var forward_model_op(nn::Var thetas, const models::ForwardModel& model) {
  if (thetas.cols() != model.theta_dim()) throw DimensionError("forward_model_op: theta dimension mismatch");
  const auto id = thetas.id();
  return thetas.tape().record(model.eval_rows(thetas.value()), {thetas},
                              [id, &model](nn::Tape& t, const Matrix&, const Matrix& g) {
                                const Matrix& x = t.value(id);
                                Matrix gx(x.rows(), x.cols());
                                for (Index i = 0; i < x.rows(); ++i) {
                                  const Vector row = x.row(i).transpose();
                                  gx.row(i) = (model.jacobian(row).transpose() * g.row(i).transpose()).transpose();
                                }
                                t.accumulate(id, gx);
                              });
}

nn::Var ni_composite_loss(nn::Tape& tape, NIModel& model, const Matrix& responses, bool training,
                          const models::ForwardModel* oracle) {
  const Matrix r_std = model.response_scaler.apply(responses);
  nn::Var theta_std = model.inverse_net.forward(tape, tape.constant(r_std), training);
  nn::Var r_hat;
  if (oracle) {
    nn::Var theta = nn::add_row(nn::mul_row(theta_std, tape.constant(model.theta_scaler.scale)),
                                tape.constant(model.theta_scaler.mean));
    nn::Var r_raw = forward_model_op(theta, *oracle);
    r_hat = nn::mul_row(nn::sub_row(r_raw, tape.constant(model.response_scaler.mean)),
                        tape.constant(RowVector(model.response_scaler.scale.cwiseInverse())));
  } else {
    // Frozen forward net: inference mode; its parameters are never stepped.
    r_hat = model.forward_net.forward(tape, theta_std, false);
  }
  return nn::mean(nn::row_sums(nn::square(r_hat - tape.constant(r_std))));
}

NIResult train_ni_forward(const models::Dataset& train, const NIConfig& cfg, const models::Dataset& val,
                          std::uint64_t seed) {
  cfg.validate();
  train.validate();
  NIResult out;
  NIModel& m = out.model;
  m.config = cfg;
  m.theta_scaler = Standardizer::fit(train.thetas);
  m.response_scaler = Standardizer::fit(train.responses);
  std::mt19937_64 rng(derive_seed(seed, 1));
  m.forward_net = nn::DenseNet::make(train.theta_dim(), train.response_dim(),
                                     nn::NetSpec{cfg.forward_layers, cfg.hidden_units, cfg.batch_norm},
                                     nn::Activation::Linear, rng);
  m.inverse_net = nn::DenseNet::make(train.response_dim(), train.theta_dim(),
                                     nn::NetSpec{cfg.inverse_layers, cfg.hidden_units, cfg.batch_norm},
                                     nn::Activation::Linear, rng);

  const Matrix th = m.theta_scaler.apply(train.thetas);
  const Matrix r = m.response_scaler.apply(train.responses);
  const models::Dataset& v = validation_or_train(val, train);
  const Matrix vth = m.theta_scaler.apply(v.thetas);
  const Matrix vr = m.response_scaler.apply(v.responses);

  TrainingHooks hooks;
  hooks.batch_loss = [&](nn::Tape& tape, const std::vector<Index>& rows) {
    nn::Var pred = m.forward_net.forward(tape, tape.constant(gather_rows(th, rows)), true);
    return nn::mean(nn::row_sums(nn::square(pred - tape.constant(gather_rows(r, rows)))));
  };
  hooks.parameters = [&] { return m.forward_net.parameters(); };
  hooks.end_epoch = [&] {
    if (cfg.recalibrate_batch_norm) m.forward_net.recalibrate_batch_norm(th);
  };
  hooks.val_loss = [&] { return (m.forward_net.predict(vth) - vr).rowwise().squaredNorm().mean(); };
  out.forward_log = run_training(cfg.schedule, train.size(), derive_seed(seed, 2), "ni_forward", hooks);
  return out;
}

void train_ni_inverse(NIResult& result, const models::Dataset& train, const models::Dataset& val,
                      std::uint64_t seed, const models::ForwardModel* oracle) {
  NIModel& m = result.model;
  const NIConfig& cfg = m.config;
  if (cfg.oracle_forward && !oracle) throw ConfigError("NI: oracle_forward needs the forward model");
  if (!cfg.oracle_forward) oracle = nullptr;
  const models::Dataset& v = validation_or_train(val, train);
  const Matrix r_std = m.response_scaler.apply(train.responses);

  TrainingHooks hooks;
  hooks.batch_loss = [&](nn::Tape& tape, const std::vector<Index>& rows) {
    return ni_composite_loss(tape, m, gather_rows(train.responses, rows), true, oracle);
  };
  hooks.parameters = [&] { return m.inverse_net.parameters(); };
  hooks.end_epoch = [&] {
    if (cfg.recalibrate_batch_norm) m.inverse_net.recalibrate_batch_norm(r_std);
  };
  hooks.val_loss = [&] {
    nn::Tape tape;
    return ni_composite_loss(tape, m, v.responses, false, oracle).value()(0, 0);
  };
  result.inverse_log = run_training(cfg.schedule, train.size(), derive_seed(seed, 3), "ni_inverse", hooks);
}

NIResult train_ni(const models::Dataset& train, const NIConfig& cfg, const models::Dataset& val,
                  std::uint64_t seed, const models::ForwardModel* oracle) {
  if (cfg.oracle_forward && !oracle) throw ConfigError("NI: oracle_forward needs the forward model");
  NIResult out = train_ni_forward(train, cfg, val, seed);
  train_ni_inverse(out, train, val, seed, oracle);
  return out;
}

}  // namespace pinv
