#include "pinv/models/forward_model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace pinv::models {

Domain Domain::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size() || lower.size() == 0) throw ConfigError("box bounds differ in size");
  if ((upper.array() < lower.array()).any()) throw ConfigError("box upper bound below lower bound");
  Domain d;
  d.kind = Kind::Box;
  d.dim = lower.size();
  d.lower = std::move(lower);
  d.upper = std::move(upper);
  return d;
}

Domain Domain::interval(double lo, double hi) {
  return box(Vector::Constant(1, lo), Vector::Constant(1, hi));
}

Domain Domain::ball(Index dim, double radius, bool surface_only) {
  if (dim < 1 || radius <= 0.0) throw ConfigError("ball needs positive dimension and radius");
  Domain d;
  d.kind = surface_only ? Kind::Sphere : Kind::Ball;
  d.dim = dim;
  d.radius = radius;
  return d;
}

bool Domain::contains(const Eigen::Ref<const Vector>& theta, double tol) const {
  if (theta.size() != dim) return false;
  if (kind == Kind::Box) {
    return ((theta.array() >= lower.array() - tol) && (theta.array() <= upper.array() + tol)).all();
  }
  // Sampling on the sphere still admits any stimulus inside the ball.
  return theta.norm() <= radius * (1.0 + tol) + tol;
}

Vector Domain::clip(const Eigen::Ref<const Vector>& theta) const {
  if (theta.size() != dim) throw DimensionError("clip: wrong stimulus dimension");
  if (kind == Kind::Box) return theta.cwiseMax(lower).cwiseMin(upper);
  const double n = theta.norm();
  if (n <= radius) return theta;
  return theta * (radius / n);
}

Vector Domain::sample(std::mt19937_64& rng) const {
  if (kind == Kind::Box) {
    Vector out(dim);
    for (Index i = 0; i < dim; ++i) {
      std::uniform_real_distribution<double> u(lower(i), upper(i));
      out(i) = u(rng);
    }
    return out;
  }
  std::normal_distribution<double> n(0.0, 1.0);
  Vector dir(dim);
  do {
    for (Index i = 0; i < dim; ++i) dir(i) = n(rng);
  } while (dir.norm() == 0.0);
  dir.normalize();
  if (kind == Kind::Sphere) return dir * radius;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return dir * (radius * std::pow(u(rng), 1.0 / static_cast<double>(dim)));
}

nlohmann::json Domain::to_json() const {
  if (kind == Kind::Box) {
    return {{"kind", "box"},
            {"lower", std::vector<double>(lower.data(), lower.data() + lower.size())},
            {"upper", std::vector<double>(upper.data(), upper.data() + upper.size())}};
  }
  return {{"kind", kind == Kind::Ball ? "ball" : "sphere"}, {"dim", dim}, {"radius", radius}};
}

Domain Domain::from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") {
      auto lo = j.at("lower").get<std::vector<double>>();
      auto hi = j.at("upper").get<std::vector<double>>();
      if (lo.size() != hi.size() || lo.empty()) throw IoError("domain: bad box bounds");
      return box(Eigen::Map<Vector>(lo.data(), static_cast<Index>(lo.size())),
                 Eigen::Map<Vector>(hi.data(), static_cast<Index>(hi.size())));
    }
    if (kind == "ball" || kind == "sphere") {
      return ball(j.at("dim").get<Index>(), j.at("radius").get<double>(), kind == "sphere");
    }
    throw IoError("domain: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("domain: ") + e.what());
  }
}

Vector ForwardModel::eval(const Eigen::Ref<const Vector>& theta) const {
  if (theta.size() != theta_dim()) throw DimensionError(name() + ": wrong stimulus dimension");
  if (!domain().contains(theta)) throw DomainError(name() + ": stimulus outside the domain");
  return eval_unchecked(theta);
}

Matrix ForwardModel::eval_rows(const Matrix& thetas) const {
  if (thetas.cols() != theta_dim()) throw DimensionError(name() + ": wrong stimulus dimension");
  Matrix out(thetas.rows(), response_dim());
  for (Index i = 0; i < thetas.rows(); ++i) out.row(i) = eval_unchecked(thetas.row(i).transpose()).transpose();
  return out;
}

void ForwardModel::set_noise_sigma(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("noise sigma must be finite and >= 0");
  noise_sigma_ = sigma;
}

std::unique_ptr<ForwardModel> ForwardModel::clone_noiseless() const {
  auto m = clone();
  m->set_noise_sigma(0.0);
  return m;
}

// ---------------------------------------------------------------------------

ToyModel::ToyModel(ToyKind kind, double noise_sigma) : kind_(kind) {
  set_noise_sigma(noise_sigma);
  domain_ = kind == ToyKind::Cosine ? Domain::interval(0.0, 3.0) : Domain::interval(-3.0, 3.0);
}

std::string ToyModel::name() const {
  switch (kind_) {
    case ToyKind::Cosine: return "cos";
    case ToyKind::Quartic: return "quartic";
    case ToyKind::GaussianBump: return "bump";
  }
  return "?";
}

std::vector<ResponseRange> ToyModel::response_range() const {
  switch (kind_) {
    case ToyKind::Cosine: return {{-1.0, 1.0}};
    case ToyKind::Quartic: return {{0.0, 25.0}};
    case ToyKind::GaussianBump: return {{0.0, 1.0}};
  }
  return {};
}

double ToyModel::eval_scalar_unchecked(double t) const {
  switch (kind_) {
    case ToyKind::Cosine:
      // Period reduction first, so integer shifts of theta give identical r.
      return std::cos(2.0 * std::numbers::pi * (t - std::floor(t)));
    case ToyKind::Quartic: {
      const double q = t * t - 4.0;
      return q * q;
    }
    case ToyKind::GaussianBump: return std::exp(-0.5 * t * t);
  }
  return 0.0;
}

double ToyModel::eval_scalar(double t) const {
  if (!domain_.contains(Vector::Constant(1, t))) throw DomainError(name() + ": theta outside the domain");
  return eval_scalar_unchecked(t);
}

Vector ToyModel::eval_unchecked(const Eigen::Ref<const Vector>& theta) const {
  return Vector::Constant(1, eval_scalar_unchecked(theta(0)));
}

Matrix ToyModel::jacobian(const Eigen::Ref<const Vector>& theta) const {
  const double t = theta(0);
  double d = 0.0;
  switch (kind_) {
    case ToyKind::Cosine: d = -2.0 * std::numbers::pi * std::sin(2.0 * std::numbers::pi * t); break;
    case ToyKind::Quartic: d = 4.0 * t * (t * t - 4.0); break;
    case ToyKind::GaussianBump: d = -t * std::exp(-0.5 * t * t); break;
  }
  return Matrix::Constant(1, 1, d);
}

// ---------------------------------------------------------------------------

LinearModel::LinearModel(Matrix map, Domain domain, double noise_sigma)
    : map_(std::move(map)), domain_(std::move(domain)) {
  if (domain_.dim != map_.cols()) throw DimensionError("linear model: domain dimension mismatch");
  if (domain_.kind != Domain::Kind::Box) throw ConfigError("linear model needs a box domain");
  set_noise_sigma(noise_sigma);
}

std::vector<ResponseRange> LinearModel::response_range() const {
  std::vector<ResponseRange> out;
  for (Index i = 0; i < map_.rows(); ++i) {
    double lo = 0.0, hi = 0.0;
    for (Index j = 0; j < map_.cols(); ++j) {
      const double a = map_(i, j) * domain_.lower(j), b = map_(i, j) * domain_.upper(j);
      lo += std::min(a, b);
      hi += std::max(a, b);
    }
    out.push_back({lo, hi});
  }
  return out;
}

// ---------------------------------------------------------------------------

SurrogateConstants SurrogateConstants::from_json(const nlohmann::json& j) {
  SurrogateConstants c;
  try {
    if (j.at("format").get<std::string>() != "pinv-surrogate-neuron") throw ConfigError("not a surrogate config");
    c.version = j.at("version").get<int>();
    if (c.version != 1) throw ConfigError("unsupported surrogate config version " + std::to_string(c.version));
    c.radius = j.at("radius").get<double>();
    c.rate_max = j.at("rate_max").get<double>();
    c.alpha = j.at("alpha").get<std::vector<double>>();
    c.bias = j.at("bias").get<std::vector<double>>();
    const Index n = j.at("theta_dim").get<Index>();
    for (const auto& proj : j.at("projections")) {
      Matrix a(static_cast<Index>(proj.size()), n);
      for (Index r = 0; r < a.rows(); ++r) {
        const auto& row = proj.at(static_cast<std::size_t>(r));
        if (static_cast<Index>(row.size()) != n) throw ConfigError("surrogate projection row has wrong length");
        for (Index k = 0; k < n; ++k) a(r, k) = row.at(static_cast<std::size_t>(k)).get<double>();
      }
      c.projections.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed surrogate config: ") + e.what());
  }
  if (c.projections.empty() || c.alpha.size() != c.projections.size() || c.bias.size() != c.projections.size()) {
    throw ConfigError("surrogate config: projections, alpha and bias must have equal counts");
  }
  return c;
}

SurrogateConstants SurrogateConstants::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open surrogate config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse surrogate config " + path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json SurrogateConstants::to_json() const {
  nlohmann::json projs = nlohmann::json::array();
  for (const Matrix& a : projections) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < a.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(a.cols()));
      for (Index k = 0; k < a.cols(); ++k) row[static_cast<std::size_t>(k)] = a(r, k);
      rows.push_back(row);
    }
    projs.push_back(rows);
  }
  return {{"format", "pinv-surrogate-neuron"}, {"version", version},
          {"theta_dim", projections.front().cols()}, {"response_dim", projections.size()},
          {"radius", radius}, {"rate_max", rate_max}, {"alpha", alpha}, {"bias", bias},
          {"projections", projs}};
}

SurrogateNeuronModel::SurrogateNeuronModel(SurrogateConstants constants, bool surface_sampling,
                                           double noise_sigma)
    : constants_(std::move(constants)) {
  domain_ = Domain::ball(constants_.projections.front().cols(), constants_.radius, surface_sampling);
  set_noise_sigma(noise_sigma);
}

std::vector<ResponseRange> SurrogateNeuronModel::response_range() const {
  return std::vector<ResponseRange>(constants_.projections.size(), ResponseRange{0.0, constants_.rate_max});
}

namespace {
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Vector SurrogateNeuronModel::eval_unchecked(const Eigen::Ref<const Vector>& theta) const {
  if (theta.size() != theta_dim()) throw DimensionError("surrogate: wrong stimulus dimension");
  Vector r(response_dim());
  for (Index j = 0; j < r.size(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    const double s = (constants_.projections[k] * theta).norm();
    r(j) = constants_.rate_max * logistic(constants_.alpha[k] * s - constants_.bias[k]);
  }
  return r;
}

Matrix SurrogateNeuronModel::jacobian(const Eigen::Ref<const Vector>& theta) const {
  Matrix jac = Matrix::Zero(response_dim(), theta_dim());
  for (Index j = 0; j < jac.rows(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    const Matrix& a = constants_.projections[k];
    const Vector proj = a * theta;
    const double s = proj.norm();
    if (s == 0.0) continue;  // not differentiable at the origin; use the zero subgradient
    const double sig = logistic(constants_.alpha[k] * s - constants_.bias[k]);
    const double scale = constants_.rate_max * sig * (1.0 - sig) * constants_.alpha[k] / s;
    jac.row(j) = scale * (a.transpose() * proj).transpose();
  }
  return jac;
}

// ---------------------------------------------------------------------------

std::string default_surrogate_config_path() { return std::string(PINV_CONFIG_DIR) + "/surrogate_v1.json"; }

std::vector<std::string> forward_model_names() { return {"cos", "quartic", "bump", "surrogate"}; }

std::unique_ptr<ForwardModel> make_forward_model(const std::string& name, const ModelOptions& options) {
  if (!(options.noise_multiplier >= 0.0)) throw ConfigError("noise multiplier must be >= 0");
  std::unique_ptr<ForwardModel> model;
  if (name == "cos") {
    model = std::make_unique<ToyModel>(ToyKind::Cosine);
  } else if (name == "quartic") {
    model = std::make_unique<ToyModel>(ToyKind::Quartic);
  } else if (name == "bump") {
    model = std::make_unique<ToyModel>(ToyKind::GaussianBump);
  } else if (name == "surrogate") {
    const std::string path = options.surrogate_config.empty() ? default_surrogate_config_path()
                                                              : options.surrogate_config;
    model = std::make_unique<SurrogateNeuronModel>(SurrogateConstants::load(path), options.sphere_surface);
  } else {
    throw ConfigError("unknown forward model '" + name + "' (expected cos, quartic, bump or surrogate)");
  }
  if (options.noise_sigma) model->set_noise_sigma(*options.noise_sigma);
  model->set_noise_sigma(model->noise_sigma() * options.noise_multiplier);
  return model;
}

}  // namespace pinv::models
