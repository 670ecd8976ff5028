#include "pinv/nn/dense_net.hpp"

#include "pinv/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace pinv::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Softmax: return "softmax";
    case Activation::ELUplus1: return "elu_plus1";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "linear") return Activation::Linear;
  if (s == "softmax") return Activation::Softmax;
  if (s == "elu_plus1") return Activation::ELUplus1;
  throw ConfigError("unknown activation '" + s + "'");
}

Matrix activate(Activation a, const Matrix& x) {
  switch (a) {
    case Activation::ReLU: return x.cwiseMax(0.0);
    case Activation::Linear: return x;
    case Activation::Softmax: {
      Matrix out = x.colwise() - x.rowwise().maxCoeff();
      out = out.array().exp();
      out.array().colwise() /= out.rowwise().sum().array();
      return out;
    }
    case Activation::ELUplus1:
      return x.unaryExpr([](double v) { return v > 0.0 ? v + 1.0 : std::exp(v); });
  }
  return x;
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::ReLU: return relu(x);
    case Activation::Linear: return x;
    case Activation::Softmax: return softmax_rows(x);
    case Activation::ELUplus1: return elu_plus1(x);
  }
  return x;
}

BatchNormState BatchNormState::identity(Index features, double momentum, double epsilon) {
  BatchNormState s;
  s.gamma = Matrix::Ones(1, features);
  s.beta = Matrix::Zero(1, features);
  s.running_mean = Matrix::Zero(1, features);
  s.running_var = Matrix::Ones(1, features);
  s.momentum = momentum;
  s.epsilon = epsilon;
  return s;
}

namespace {

void check_bn(const BatchNormState& s, Index cols, Index rows, bool training) {
  if (cols != s.features()) throw DimensionError("batch norm: feature count mismatch");
  if (training && rows < 2) throw DimensionError("batch norm: training needs a batch of at least 2");
}

void update_running(BatchNormState& s, const RowVector& mu, const RowVector& var) {
  s.running_mean = s.momentum * s.running_mean + (1.0 - s.momentum) * Matrix(mu);
  s.running_var = s.momentum * s.running_var + (1.0 - s.momentum) * Matrix(var);
}

}  // namespace

Matrix batchnorm_apply(BatchNormState& s, const Matrix& x, bool training) {
  check_bn(s, x.cols(), x.rows(), training);
  RowVector mu, var;
  if (training) {
    mu = x.colwise().mean();
    var = (x.rowwise() - mu).array().square().colwise().mean();
    update_running(s, mu, var);
  } else {
    mu = s.running_mean.row(0);
    var = s.running_var.row(0);
  }
  RowVector inv = (var.array() + s.epsilon).rsqrt();
  Matrix out = ((x.rowwise() - mu).array().rowwise() * (inv.array() * s.gamma.row(0).array()));
  out.rowwise() += s.beta.row(0);
  return out;
}

Var batchnorm_apply(BatchNormState& s, Var x, bool training) {
  check_bn(s, x.cols(), x.rows(), training);
  Tape& t = x.tape();
  Var gamma = t.parameter(s.gamma);
  Var beta = t.parameter(s.beta);
  Var centered, inv;
  if (training) {
    Var mu = col_means(x);
    centered = sub_row(x, mu);
    Var var = col_means(square(centered));
    inv = pow(add_scalar(var, s.epsilon), -0.5);
    update_running(s, mu.value().row(0), var.value().row(0));
  } else {
    centered = sub_row(x, t.constant(s.running_mean));
    inv = t.constant((s.running_var.array() + s.epsilon).rsqrt().matrix());
  }
  return add_row(mul_row(mul_row(centered, inv), gamma), beta);
}

Matrix he_uniform(Index in, Index out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(in, out);
  for (Index i = 0; i < in; ++i) {
    for (Index j = 0; j < out; ++j) w(i, j) = u(rng);
  }
  return w;
}

Matrix init_bias(Index in, Index out, bool fan_in, std::mt19937_64& rng) {
  if (!fan_in) return Matrix::Zero(1, out);
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix b(1, out);
  for (Index j = 0; j < out; ++j) b(0, j) = u(rng);
  return b;
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& l = layers_[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.output_dim()) {
      throw DimensionError("layer " + std::to_string(i) + ": bias shape does not match weight");
    }
    if (l.batch_norm && l.batch_norm->features() != l.output_dim()) {
      throw DimensionError("layer " + std::to_string(i) + ": batch-norm width does not match");
    }
    if (i > 0 && layers_[i - 1].output_dim() != l.input_dim()) {
      throw DimensionError("layer " + std::to_string(i) + ": input dim " + std::to_string(l.input_dim()) +
                           " does not match previous output " + std::to_string(layers_[i - 1].output_dim()));
    }
  }
}

DenseNet DenseNet::make_trunk(Index input_dim, const NetSpec& spec, std::mt19937_64& rng) {
  if (spec.hidden_layers < 1 || spec.hidden_units < 1) throw ConfigError("net needs at least one hidden unit/layer");
  std::vector<DenseLayer> layers;
  Index in = input_dim;
  for (int i = 0; i < spec.hidden_layers; ++i) {
    DenseLayer l;
    l.weight = he_uniform(in, spec.hidden_units, rng);
    l.bias = init_bias(in, spec.hidden_units, spec.fan_in_bias, rng);
    l.activation = Activation::ReLU;
    if (spec.batch_norm) l.batch_norm = BatchNormState::identity(spec.hidden_units);
    layers.push_back(std::move(l));
    in = spec.hidden_units;
  }
  return DenseNet(std::move(layers));
}

DenseNet DenseNet::make(Index input_dim, Index output_dim, const NetSpec& spec, Activation output,
                        std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  Index in = input_dim;
  if (spec.hidden_layers > 0) {
    layers = make_trunk(input_dim, spec, rng).layers();
    in = spec.hidden_units;
  }
  DenseLayer out;
  out.weight = he_uniform(in, output_dim, rng);
  out.bias = init_bias(in, output_dim, spec.fan_in_bias, rng);
  out.activation = output;
  layers.push_back(std::move(out));
  return DenseNet(std::move(layers));
}

Index DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().input_dim(); }
Index DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().output_dim(); }

std::vector<Matrix*> DenseNet::parameters() {
  std::vector<Matrix*> out;
  for (DenseLayer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
    if (l.batch_norm) {
      out.push_back(&l.batch_norm->gamma);
      out.push_back(&l.batch_norm->beta);
    }
  }
  return out;
}

std::vector<const Matrix*> DenseNet::parameters() const {
  std::vector<const Matrix*> out;
  for (Matrix* p : const_cast<DenseNet*>(this)->parameters()) out.push_back(p);
  return out;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* p : parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

void DenseNet::check_input(Index rows, Index cols) const {
  if (layers_.empty()) throw DimensionError("empty network");
  if (cols != input_dim()) {
    throw DimensionError("network expects " + std::to_string(input_dim()) + " input columns, got " +
                         std::to_string(cols));
  }
  (void)rows;
}

Matrix DenseNet::forward(const Matrix& x, bool training) {
  check_input(x.rows(), x.cols());
  Matrix h = x;
  for (DenseLayer& l : layers_) {
    Matrix z = h * l.weight;
    z.rowwise() += l.bias.row(0);
    if (l.batch_norm) z = batchnorm_apply(*l.batch_norm, z, training);
    h = activate(l.activation, z);
  }
  require_finite(h, "network output");
  return h;
}

void DenseNet::recalibrate_batch_norm(const Matrix& x) {
  if (!has_batch_norm()) return;
  std::vector<double> saved;
  for (DenseLayer& l : layers_) {
    if (l.batch_norm) {
      saved.push_back(l.batch_norm->momentum);
      l.batch_norm->momentum = 0.0;
    }
  }
  try {
    forward(x, true);
  } catch (...) {
    std::size_t k = 0;
    for (DenseLayer& l : layers_) if (l.batch_norm) l.batch_norm->momentum = saved[k++];
    throw;
  }
  std::size_t k = 0;
  for (DenseLayer& l : layers_) if (l.batch_norm) l.batch_norm->momentum = saved[k++];
}

bool DenseNet::has_batch_norm() const {
  return std::any_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) { return l.batch_norm.has_value(); });
}

Matrix DenseNet::predict(const Matrix& x) const {
  DenseNet& self = const_cast<DenseNet&>(*this);
  // Inference mode never touches running statistics.
  return self.forward(x, false);
}

Var DenseNet::forward(Tape& tape, Var x, bool training, bool skip_output_activation) {
  check_input(x.rows(), x.cols());
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    DenseLayer& l = layers_[i];
    Var z = add_row(matmul(h, tape.parameter(l.weight)), tape.parameter(l.bias));
    if (l.batch_norm) z = batchnorm_apply(*l.batch_norm, z, training);
    const bool last = i + 1 == layers_.size();
    h = (last && skip_output_activation) ? z : activate(l.activation, z);
  }
  return h;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  }
  return arr;
}

Matrix matrix_from_json(const nlohmann::json& j, Index rows, Index cols) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols) {
    throw IoError("matrix payload has wrong length (expected " + std::to_string(rows * cols) + ")");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index k = 0; k < cols; ++k) m(i, k) = j.at(static_cast<std::size_t>(i * cols + k)).get<double>();
  }
  return m;
}

nlohmann::json DenseNet::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const DenseLayer& l : layers_) {
    nlohmann::json jl{{"in", l.input_dim()},
                      {"out", l.output_dim()},
                      {"activation", to_string(l.activation)},
                      {"weight", matrix_to_json(l.weight)},
                      {"bias", matrix_to_json(l.bias)}};
    if (l.batch_norm) {
      const BatchNormState& b = *l.batch_norm;
      jl["batch_norm"] = {{"gamma", matrix_to_json(b.gamma)},
                          {"beta", matrix_to_json(b.beta)},
                          {"running_mean", matrix_to_json(b.running_mean)},
                          {"running_var", matrix_to_json(b.running_var)},
                          {"momentum", b.momentum},
                          {"epsilon", b.epsilon}};
    }
    layers.push_back(std::move(jl));
  }
  return {{"layers", std::move(layers)}};
}

DenseNet DenseNet::from_json(const nlohmann::json& j) {
  std::vector<DenseLayer> layers;
  try {
    for (const auto& jl : j.at("layers")) {
      DenseLayer l;
      const Index in = jl.at("in").get<Index>();
      const Index out = jl.at("out").get<Index>();
      l.weight = matrix_from_json(jl.at("weight"), in, out);
      l.bias = matrix_from_json(jl.at("bias"), 1, out);
      l.activation = activation_from_string(jl.at("activation").get<std::string>());
      if (jl.contains("batch_norm")) {
        const auto& jb = jl.at("batch_norm");
        BatchNormState b;
        b.gamma = matrix_from_json(jb.at("gamma"), 1, out);
        b.beta = matrix_from_json(jb.at("beta"), 1, out);
        b.running_mean = matrix_from_json(jb.at("running_mean"), 1, out);
        b.running_var = matrix_from_json(jb.at("running_var"), 1, out);
        b.momentum = jb.at("momentum").get<double>();
        b.epsilon = jb.at("epsilon").get<double>();
        l.batch_norm = std::move(b);
      }
      layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed network JSON: ") + e.what());
  }
  return DenseNet(std::move(layers));
}

}  // namespace pinv::nn
