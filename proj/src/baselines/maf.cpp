#include "pinv/baselines/maf.hpp"

#include "pinv/nn/adam.hpp"
#include "pinv/nn/dense_net.hpp"
#include "pinv/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace pinv {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
// Soft bound on the per-flow log-scale; tiny training sets otherwise let the
// density collapse onto the samples until the loss overflows.
constexpr double kLogScaleBound = 3.0;

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

nlohmann::json mat(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", nn::matrix_to_json(m)}};
}

Matrix mat(const nlohmann::json& j) {
  return nn::matrix_from_json(j.at("data"), j.at("rows").get<Index>(), j.at("cols").get<Index>());
}

void build_masks(MadeBlock& b, int hidden) {
  const auto d = static_cast<Index>(b.degrees.size());
  std::vector<int> hdeg(static_cast<std::size_t>(hidden));
  const int span = std::max<int>(1, static_cast<int>(d) - 1);
  for (int k = 0; k < hidden; ++k) hdeg[static_cast<std::size_t>(k)] = k % span + 1;
  b.m1.resize(d, hidden);
  b.m2.resize(hidden, hidden);
  b.mo.resize(hidden, d);
  for (Index i = 0; i < d; ++i) {
    for (int k = 0; k < hidden; ++k) b.m1(i, k) = b.degrees[static_cast<std::size_t>(i)] <= hdeg[static_cast<std::size_t>(k)];
  }
  for (int a = 0; a < hidden; ++a) {
    for (int k = 0; k < hidden; ++k) b.m2(a, k) = hdeg[static_cast<std::size_t>(a)] <= hdeg[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < hidden; ++k) {
    for (Index i = 0; i < d; ++i) b.mo(k, i) = hdeg[static_cast<std::size_t>(k)] < b.degrees[static_cast<std::size_t>(i)];
  }
}

std::vector<int> reversed_degrees(const std::vector<int>& deg) {
  std::vector<int> out(deg.size());
  const int d = static_cast<int>(deg.size());
  for (std::size_t i = 0; i < deg.size(); ++i) out[i] = d + 1 - deg[i];
  return out;
}

// Standard-normal log density per row.
Vector base_log_density(const Matrix& z) {
  return (-0.5 * z.rowwise().squaredNorm()).array() - kHalfLog2Pi * static_cast<double>(z.cols());
}

}  // namespace

void MAFConfig::validate() const {
  if (flows < 1) throw ConfigError("MAF flows must be >= 1");
  if (hidden_units < 1) throw ConfigError("MAF hidden_units must be >= 1");
  if (mode_steps < 0 || mode_restarts < 1) throw ConfigError("MAF mode search needs steps >= 0 and restarts >= 1");
  if (!(mode_lr > 0.0)) throw ConfigError("MAF mode_lr must be > 0");
  schedule.validate();
}

nlohmann::json MAFConfig::to_json() const {
  nlohmann::json j;
  j["flows"] = flows;
  j["hidden_units"] = hidden_units;
  j["batch_norm_flow"] = batch_norm_flow;
  j["recalibrate_batch_norm"] = recalibrate_batch_norm;
  j["mode_steps"] = mode_steps;
  j["mode_restarts"] = mode_restarts;
  j["mode_lr"] = mode_lr;
  pinv::to_json(j, schedule);
  return j;
}

MAFConfig MAFConfig::from_json(const nlohmann::json& j) {
  std::vector<std::string> allowed{"flows",      "hidden_units",  "batch_norm_flow", "recalibrate_batch_norm",
                                   "mode_steps", "mode_restarts", "mode_lr"};
  allowed.insert(allowed.end(), schedule_keys().begin(), schedule_keys().end());
  require_known_keys(j, allowed, "MAF config");
  MAFConfig c;
  try {
    c.flows = j.value("flows", c.flows);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    c.batch_norm_flow = j.value("batch_norm_flow", c.batch_norm_flow);
    c.recalibrate_batch_norm = j.value("recalibrate_batch_norm", c.recalibrate_batch_norm);
    c.mode_steps = j.value("mode_steps", c.mode_steps);
    c.mode_restarts = j.value("mode_restarts", c.mode_restarts);
    c.mode_lr = j.value("mode_lr", c.mode_lr);
    read_schedule(j, c.schedule);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MAF config: ") + e.what());
  }
  c.validate();
  return c;
}

MadeBlock MadeBlock::make(const std::vector<int>& degrees, int hidden, std::mt19937_64& rng) {
  MadeBlock b;
  b.degrees = degrees;
  const auto d = static_cast<Index>(degrees.size());
  build_masks(b, hidden);
  b.w1 = nn::he_uniform(d, hidden, rng);
  b.b1 = nn::init_bias(d, hidden, true, rng);
  b.w2 = nn::he_uniform(hidden, hidden, rng);
  b.b2 = nn::init_bias(hidden, hidden, true, rng);
  // Output layers start small so every block begins close to the identity.
  b.wm = 0.1 * nn::he_uniform(hidden, d, rng);
  b.bm = Matrix::Zero(1, d);
  b.wa = 0.1 * nn::he_uniform(hidden, d, rng);
  b.ba = Matrix::Zero(1, d);
  return b;
}

void MadeBlock::conditioner(const Matrix& x, Matrix& mu, Matrix& alpha) const {
  Matrix h1 = x * w1.cwiseProduct(m1);
  h1.rowwise() += b1.row(0);
  Matrix h2 = relu(h1) * w2.cwiseProduct(m2);
  h2.rowwise() += b2.row(0);
  h2 = relu(h2);
  mu = h2 * wm.cwiseProduct(mo);
  mu.rowwise() += bm.row(0);
  alpha = h2 * wa.cwiseProduct(mo);
  alpha.rowwise() += ba.row(0);
  alpha = kLogScaleBound * (alpha / kLogScaleBound).array().tanh().matrix();
}

void MadeBlock::conditioner(nn::Tape& tape, nn::Var x, nn::Var& mu, nn::Var& alpha) {
  auto masked = [&](const Matrix& w, const Matrix& m) { return nn::mul(tape.parameter(w), tape.constant(m)); };
  nn::Var h1 = nn::relu(nn::add_row(nn::matmul(x, masked(w1, m1)), tape.parameter(b1)));
  nn::Var h2 = nn::relu(nn::add_row(nn::matmul(h1, masked(w2, m2)), tape.parameter(b2)));
  mu = nn::add_row(nn::matmul(h2, masked(wm, mo)), tape.parameter(bm));
  alpha = nn::add_row(nn::matmul(h2, masked(wa, mo)), tape.parameter(ba));
  alpha = nn::scale(nn::tanh(nn::scale(alpha, 1.0 / kLogScaleBound)), kLogScaleBound);
}

std::vector<Matrix*> MadeBlock::parameters() { return {&w1, &b1, &w2, &b2, &wm, &bm, &wa, &ba}; }

BatchNormFlow BatchNormFlow::identity(Index dim) {
  BatchNormFlow f;
  f.log_gamma = Matrix::Zero(1, dim);
  f.beta = Matrix::Zero(1, dim);
  f.running_mean = Matrix::Zero(1, dim);
  f.running_var = Matrix::Ones(1, dim);
  return f;
}

std::vector<Matrix*> MAFModel::parameters() {
  std::vector<Matrix*> out;
  for (std::size_t f = 0; f < blocks.size(); ++f) {
    for (Matrix* p : blocks[f].parameters()) out.push_back(p);
    if (!norms.empty()) {
      for (Matrix* p : norms[f].parameters()) out.push_back(p);
    }
  }
  return out;
}

Matrix MAFModel::to_base(const Matrix& x_std, Vector* logdet) const {
  if (x_std.cols() != dim()) throw DimensionError("MAF: joint dimension mismatch");
  Matrix h = x_std;
  Vector ld = Vector::Zero(h.rows());
  Matrix mu, alpha;
  for (std::size_t f = 0; f < blocks.size(); ++f) {
    blocks[f].conditioner(h, mu, alpha);
    h = (h - mu).cwiseProduct((-alpha).array().exp().matrix());
    ld -= alpha.rowwise().sum();
    if (!norms.empty()) {
      const BatchNormFlow& bn = norms[f];
      const RowVector inv_std = (bn.running_var.array() + bn.epsilon).rsqrt().matrix().row(0);
      h = ((h.rowwise() - bn.running_mean.row(0)).array().rowwise() *
           (inv_std.array() * bn.log_gamma.row(0).array().exp()))
              .matrix();
      h.rowwise() += bn.beta.row(0);
      ld.array() += bn.log_gamma.sum() + inv_std.array().log().sum();
    }
  }
  if (logdet) *logdet += ld;
  return h;
}

Matrix MAFModel::from_base(const Matrix& z) const {
  if (z.cols() != dim()) throw DimensionError("MAF: base dimension mismatch");
  Matrix h = z;
  Matrix mu, alpha;
  for (std::size_t f = blocks.size(); f-- > 0;) {
    if (!norms.empty()) {
      const BatchNormFlow& bn = norms[f];
      const RowVector std_dev = (bn.running_var.array() + bn.epsilon).sqrt().matrix().row(0);
      h = ((h.rowwise() - bn.beta.row(0)).array().rowwise() *
           ((-bn.log_gamma.row(0).array()).exp() * std_dev.array()))
              .matrix();
      h.rowwise() += bn.running_mean.row(0);
    }
    // After pass k every coordinate of degree <= k is exact.
    const Matrix u = h;
    Matrix x = Matrix::Zero(u.rows(), u.cols());
    for (Index pass = 0; pass < dim(); ++pass) {
      blocks[f].conditioner(x, mu, alpha);
      x = u.cwiseProduct(alpha.array().exp().matrix()) + mu;
    }
    h = x;
  }
  return h;
}

Vector MAFModel::log_prob(const Matrix& x) const {
  Vector ld = Vector::Zero(x.rows());
  const Matrix z = to_base(scaler.apply(x), &ld);
  return base_log_density(z) + ld - Vector::Constant(x.rows(), scaler.scale.array().log().sum());
}

Matrix MAFModel::sample(Index n, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, dim());
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return scaler.invert(from_base(z));
}

nn::Var MAFModel::log_prob_std(nn::Tape& tape, nn::Var x_std, bool training) {
  const Index rows = x_std.rows();
  nn::Var h = x_std;
  nn::Var ones = tape.constant(Matrix::Ones(rows, 1));
  nn::Var ld = tape.constant(Matrix::Zero(rows, 1));
  for (std::size_t f = 0; f < blocks.size(); ++f) {
    nn::Var mu, alpha;
    blocks[f].conditioner(tape, h, mu, alpha);
    h = nn::mul(h - mu, nn::exp(nn::scale(alpha, -1.0)));
    ld = ld - nn::row_sums(alpha);
    if (norms.empty()) continue;
    BatchNormFlow& bn = norms[f];
    nn::Var mean, inv_std;
    if (training) {
      if (rows < 2) throw DimensionError("MAF batch-norm flow needs at least 2 rows in training");
      mean = nn::col_means(h);
      nn::Var var = nn::col_means(nn::square(nn::sub_row(h, mean)));
      inv_std = nn::pow(nn::add_scalar(var, bn.epsilon), -0.5);
      bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mean.value();
      bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * var.value();
    } else {
      mean = tape.constant(bn.running_mean);
      inv_std = tape.constant((bn.running_var.array() + bn.epsilon).rsqrt().matrix());
    }
    nn::Var lg = tape.parameter(bn.log_gamma);
    h = nn::add_row(nn::mul_row(nn::mul_row(nn::sub_row(h, mean), inv_std), nn::exp(lg)), tape.parameter(bn.beta));
    nn::Var block_ld = nn::add(nn::sum(lg), nn::sum(nn::log(inv_std)));
    ld = ld + nn::matmul(ones, block_ld);
  }
  nn::Var base = nn::add_scalar(nn::scale(nn::row_sums(nn::square(h)), -0.5),
                                -kHalfLog2Pi * static_cast<double>(dim()));
  return base + ld;
}

void MAFModel::recalibrate(const Matrix& x_std) {
  if (norms.empty()) return;
  if (x_std.rows() < 2) throw DimensionError("MAF recalibration needs at least 2 rows");
  Matrix h = x_std;
  Matrix mu, alpha;
  for (std::size_t f = 0; f < blocks.size(); ++f) {
    blocks[f].conditioner(h, mu, alpha);
    h = (h - mu).cwiseProduct((-alpha).array().exp().matrix());
    BatchNormFlow& bn = norms[f];
    bn.running_mean = h.colwise().mean();
    bn.running_var = (h.rowwise() - bn.running_mean.row(0)).array().square().colwise().mean();
    const RowVector inv_std = (bn.running_var.array() + bn.epsilon).rsqrt().matrix().row(0);
    h = ((h.rowwise() - bn.running_mean.row(0)).array().rowwise() *
         (inv_std.array() * bn.log_gamma.row(0).array().exp()))
            .matrix();
    h.rowwise() += bn.beta.row(0);
  }
  require_finite(h, "MAF recalibration");
}

Matrix MAFModel::predict(const Matrix& responses) const {
  return maf_mode_search(*this, responses, config.mode_restarts, config.mode_steps, config.mode_lr, search_seed)
      .thetas;
}

nlohmann::json MAFModel::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const MadeBlock& b : blocks) {
    jb.push_back({{"degrees", b.degrees},
                  {"w1", mat(b.w1)}, {"b1", mat(b.b1)}, {"w2", mat(b.w2)}, {"b2", mat(b.b2)},
                  {"wm", mat(b.wm)}, {"bm", mat(b.bm)}, {"wa", mat(b.wa)}, {"ba", mat(b.ba)}});
  }
  nlohmann::json jn = nlohmann::json::array();
  for (const BatchNormFlow& n : norms) {
    jn.push_back({{"log_gamma", mat(n.log_gamma)}, {"beta", mat(n.beta)}, {"running_mean", mat(n.running_mean)},
                  {"running_var", mat(n.running_var)}, {"momentum", n.momentum}, {"epsilon", n.epsilon}});
  }
  return {{"config", config.to_json()}, {"theta_dim", theta_dim_}, {"search_seed", search_seed},
          {"domain", domain.to_json()},  {"scaler", scaler.to_json()},   {"blocks", jb},
          {"norms", jn}};
}

MAFModel MAFModel::from_json(const nlohmann::json& j) {
  MAFModel m;
  try {
    m.config = MAFConfig::from_json(j.at("config"));
    m.theta_dim_ = j.at("theta_dim").get<Index>();
    m.search_seed = j.at("search_seed").get<std::uint64_t>();
    m.domain = models::Domain::from_json(j.at("domain"));
    m.scaler = Standardizer::from_json(j.at("scaler"));
    for (const auto& jb : j.at("blocks")) {
      MadeBlock b;
      b.degrees = jb.at("degrees").get<std::vector<int>>();
      b.w1 = mat(jb.at("w1"));
      b.b1 = mat(jb.at("b1"));
      b.w2 = mat(jb.at("w2"));
      b.b2 = mat(jb.at("b2"));
      b.wm = mat(jb.at("wm"));
      b.bm = mat(jb.at("bm"));
      b.wa = mat(jb.at("wa"));
      b.ba = mat(jb.at("ba"));
      if (static_cast<Index>(b.degrees.size()) != m.dim() || b.w1.rows() != m.dim()) {
        throw IoError("MAF block dimensions disagree with the joint dimension");
      }
      build_masks(b, static_cast<int>(b.w1.cols()));
      m.blocks.push_back(std::move(b));
    }
    for (const auto& jn : j.at("norms")) {
      BatchNormFlow n;
      n.log_gamma = mat(jn.at("log_gamma"));
      n.beta = mat(jn.at("beta"));
      n.running_mean = mat(jn.at("running_mean"));
      n.running_var = mat(jn.at("running_var"));
      n.momentum = jn.at("momentum").get<double>();
      n.epsilon = jn.at("epsilon").get<double>();
      m.norms.push_back(std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("MAF model: ") + e.what());
  }
  if (!m.norms.empty() && m.norms.size() != m.blocks.size()) throw IoError("MAF model: flow count mismatch");
  return m;
}

ModeSearchResult maf_mode_search(const MAFModel& model, const Matrix& responses, int restarts, int steps,
                                 double lr, std::uint64_t seed) {
  const Index n = model.theta_dim();
  const Index m = model.dim() - n;
  if (responses.cols() != m) throw DimensionError("MAF mode search: response dimension mismatch");
  if (restarts < 1) throw ConfigError("MAF mode search needs at least one restart");
  const Index t_count = responses.rows();
  const Index rows = t_count * restarts;

  const RowVector th_mean = model.scaler.mean.head(n), th_scale = model.scaler.scale.head(n);
  const Standardizer th_scaler{th_mean, th_scale};
  const Standardizer r_scaler{model.scaler.mean.tail(m), model.scaler.scale.tail(m)};

  std::mt19937_64 rng(seed);
  Matrix theta(rows, n);
  Matrix r_rep(rows, m);
  for (Index t = 0; t < t_count; ++t) {
    for (int k = 0; k < restarts; ++k) {
      const Index row = t * restarts + k;
      theta.row(row) = model.domain.sample(rng).transpose();
      r_rep.row(row) = responses.row(t);
    }
  }
  const Matrix r_std = r_scaler.apply(r_rep);
  Matrix theta_std = th_scaler.apply(theta);

  // Rows are independent in inference mode, so one tape ascends all restarts.
  MAFModel& work = const_cast<MAFModel&>(model);
  nn::AdamState adam;
  adam.lr = lr;
  for (int step = 0; step < steps; ++step) {
    try {
      nn::Tape tape;
      nn::Var th = tape.parameter(theta_std);
      nn::Var lp = work.log_prob_std(tape, nn::concat_cols(th, tape.constant(r_std)), false);
      tape.backward(nn::scale(nn::sum(lp), -1.0));
      Matrix* p = &theta_std;
      const Matrix g = tape.grad(theta_std);
      nn::adam_step(adam, std::span<Matrix* const>(&p, 1), std::span<const Matrix>(&g, 1));
    } catch (const NumericalError&) {
      break;
    }
    theta = th_scaler.invert(theta_std);
    for (Index i = 0; i < rows; ++i) {
      const Vector row = theta.row(i).transpose();
      if (!model.domain.contains(row)) theta.row(i) = model.domain.clip(row).transpose();
    }
    theta_std = th_scaler.apply(theta);
  }
  theta = th_scaler.invert(theta_std);

  Matrix joint(rows, n + m);
  joint << theta, r_rep;
  ModeSearchResult out;
  out.all_thetas = theta;
  out.all_log_density = model.log_prob(joint);
  out.thetas.resize(t_count, n);
  out.log_density.resize(t_count);
  for (Index t = 0; t < t_count; ++t) {
    Index best = -1;
    for (int k = 0; k < restarts; ++k) {
      const Index row = t * restarts + k;
      const double v = out.all_log_density(row);
      if (std::isfinite(v) && (best < 0 || v > out.all_log_density(best))) best = row;
    }
    if (best < 0) throw NumericalError("MAF mode search: every restart is non-finite");
    out.thetas.row(t) = theta.row(best);
    out.log_density(t) = out.all_log_density(best);
  }
  return out;
}

MAFResult train_maf(const models::Dataset& train, const MAFConfig& cfg, const models::Dataset& val,
                    const models::Domain& domain, std::uint64_t seed) {
  cfg.validate();
  train.validate();
  const Index n = train.theta_dim();
  const Index d = n + train.response_dim();
  if (d < 2) throw DimensionError("MAF needs a joint dimension of at least 2");
  if (domain.dim != n) throw DimensionError("MAF: domain dimension differs from the stimulus dimension");

  MAFResult out;
  MAFModel& m = out.model;
  m.config = cfg;
  m.theta_dim_ = n;
  m.domain = domain;
  m.search_seed = derive_seed(seed, 3);
  Matrix x(train.size(), d);
  x << train.thetas, train.responses;
  m.scaler = Standardizer::fit(x);
  const Matrix x_std = m.scaler.apply(x);

  std::mt19937_64 rng(derive_seed(seed, 1));
  std::vector<int> degrees(static_cast<std::size_t>(d));
  std::iota(degrees.begin(), degrees.end(), 1);
  std::shuffle(degrees.begin(), degrees.end(), rng);
  for (int f = 0; f < cfg.flows; ++f) {
    m.blocks.push_back(MadeBlock::make(degrees, cfg.hidden_units, rng));
    if (cfg.batch_norm_flow) m.norms.push_back(BatchNormFlow::identity(d));
    degrees = reversed_degrees(degrees);
  }

  const models::Dataset& v = val.size() > 0 ? val : train;
  Matrix xv(v.size(), d);
  xv << v.thetas, v.responses;
  const Matrix xv_std = m.scaler.apply(xv);

  TrainingHooks hooks;
  hooks.batch_loss = [&](nn::Tape& tape, const std::vector<Index>& rows) {
    return nn::scale(nn::mean(m.log_prob_std(tape, tape.constant(gather_rows(x_std, rows)), true)), -1.0);
  };
  hooks.parameters = [&] { return m.parameters(); };
  hooks.end_epoch = [&] {
    if (cfg.recalibrate_batch_norm) m.recalibrate(x_std);
  };
  hooks.val_loss = [&] {
    Vector ld = Vector::Zero(xv_std.rows());
    const Matrix z = m.to_base(xv_std, &ld);
    return -(base_log_density(z) + ld).mean();
  };
  out.log = run_training(cfg.schedule, train.size(), derive_seed(seed, 2), "maf", hooks);
  return out;
}

}  // namespace pinv
