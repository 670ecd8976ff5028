#include "gradcheck.hpp"
#include "oracles.hpp"

#include "pinv/models/dataset.hpp"
#include "pinv/nn/ops.hpp"
#include "pinv/pathfinder/pathfinder.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace pinv;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

PathfinderConfig small_config(bool batch_norm) {
  PathfinderConfig cfg;
  cfg.beta = 1e-3;
  cfg.regressor_layers = 2;
  cfg.weight_layers = 2;
  cfg.hidden_units = 6;
  cfg.batch_norm = batch_norm;
  cfg.weight_batch_norm = batch_norm;
  return cfg;
}

void randomize_biases(PathfinderModel& m, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.1);
  for (nn::DenseNet* net : {&m.regressor, &m.weight_net}) {
    for (auto& layer : net->layers()) {
      for (Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = n(rng);
    }
  }
}

}  // namespace

TEST_CASE("simplex projection: worked examples") {
  CHECK((simplex_project(vec({1, 1, 1})) - vec({1, 1, 1})).norm() < 1e-15);
  CHECK((simplex_project(vec({2, 0, 0})) - vec({7.0 / 3, 1.0 / 3, 1.0 / 3})).norm() < 1e-14);
  CHECK((simplex_project(vec({5, -1, -1})) - vec({3, 0, 0})).norm() < 1e-15);
  CHECK(simplex_threshold(vec({5, -1, -1}), 3.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(simplex_project(Vector(0)), DimensionError);
}

TEST_CASE("simplex projection matches the active-set QP oracle on a grid") {
  const std::vector<double> grid{-1.0, 0.0, 0.5, 1.0, 2.5};
  double worst = 0.0;
  long count = 0;
  testing::for_each_grid_vector(grid, 6, [&](const Vector& v) {
    const double total = static_cast<double>(v.size());
    const Vector w = simplex_project(v);
    worst = std::max(worst, (w - testing::qp_simplex_oracle(v, total)).cwiseAbs().maxCoeff());
    ++count;
  });
  CHECK(count >= 10000);
  CHECK(worst < 1e-10);
}

TEST_CASE("simplex projection: constraint on random vectors") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    Vector v(1 + trial % 40);
    for (Index i = 0; i < v.size(); ++i) v(i) = n(rng);
    const Vector w = simplex_project(v);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(std::abs(w.mean() - 1.0) < 1e-9);
  }
}

TEST_CASE("simplex projection: tape gradients") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix v(7, 1);
  for (Index i = 0; i < v.size(); ++i) v(i) = n(rng);
  v(0) += 4.0;  // leaves a strict mix of active and clamped coordinates
  Matrix c(7, 1);
  for (Index i = 0; i < c.size(); ++i) c(i) = n(rng);

  auto loss = [&](nn::Tape& t) {
    nn::Var w = nn::simplex_project(t.parameter(v));
    return nn::sum(nn::mul(nn::square(w), t.constant(c)));
  };
  CHECK(testing::check_gradient(loss, {&v}).relative_error < 1e-6);

  nn::Tape t;
  nn::Var pv = t.parameter(v);
  t.backward(nn::sum(nn::simplex_project(pv, ProjectionGradient::StraightThrough)));
  CHECK(t.grad(v).isApprox(Matrix::Ones(7, 1)));

  nn::Tape t2;
  nn::Var pv2 = t2.parameter(v);
  t2.backward(nn::sum(nn::simplex_project(pv2)));
  // The sum is fixed by the constraint, so its exact gradient vanishes.
  CHECK(t2.grad(v).norm() < 1e-12);
}

TEST_CASE("objective: worked examples") {
  nn::Tape t;
  nn::Var zero_res = t.constant(Matrix::Zero(4, 1));
  nn::Var data, reg;
  nn::Var equal = pathfinder_objective(zero_res, t.constant(Matrix::Ones(4, 1)), 0.1, 1.0, &data, &reg);
  CHECK(equal.value()(0, 0) == doctest::Approx(0.4));
  CHECK(data.value()(0, 0) == 0.0);

  Matrix spike = Matrix::Zero(4, 1);
  spike(2) = 4.0;
  CHECK(pathfinder_objective(zero_res, t.constant(spike), 0.1, 1.0).value()(0, 0) == doctest::Approx(1.6));

  CHECK(pathfinder_objective(zero_res, t.constant(spike), 0.0, 1.0).value()(0, 0) == 0.0);

  Matrix res(4, 1);
  res << 1.0, 2.0, 3.0, 4.0;
  // (1/4)(1*1 + 0 + 2*3 + 1*4) + 0.5 * 0.1 * (1 + 0 + 4 + 1)
  Matrix w(4, 1);
  w << 1.0, 0.0, 2.0, 1.0;
  CHECK(pathfinder_objective(t.constant(res), t.constant(w), 0.1, 0.5).value()(0, 0) ==
        doctest::Approx(11.0 / 4 + 0.3));
}

TEST_CASE("batch loss: constraint, sign and gradients") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (bool bn : {false, true}) {
    CAPTURE(bn);
    PathfinderModel model(small_config(bn), 2, 3, 17);
    randomize_biases(model, rng);
    Matrix th(6, 2), r(6, 3);
    for (Index i = 0; i < th.size(); ++i) th.data()[i] = u(rng);
    for (Index i = 0; i < r.size(); ++i) r.data()[i] = u(rng);

    nn::Tape t;
    PathfinderLoss l = pathfinder_batch_loss(t, model, th, r, 0.05, 0.25, true);
    CHECK(l.weights.minCoeff() >= 0.0);
    CHECK(std::abs(l.weights.mean() - 1.0) < 1e-9);
    CHECK(l.data_term.value()(0, 0) >= 0.0);
    CHECK(l.regularizer.value()(0, 0) >= 0.0);

    auto loss = [&](nn::Tape& tape) {
      return pathfinder_batch_loss(tape, model, th, r, 0.05, 0.25, true).total;
    };
    CHECK(testing::check_gradient(loss, model.parameters()).relative_error < 1e-5);
  }
  PathfinderModel model(small_config(true), 2, 3, 1);
  nn::Tape t;
  CHECK_THROWS_AS(pathfinder_batch_loss(t, model, Matrix::Zero(1, 2), Matrix::Zero(1, 3), 0.1, 1.0, true),
                  DimensionError);
}

TEST_CASE("config: strict keys and validation") {
  PathfinderConfig c = PathfinderConfig::from_json({{"beta", 0.01}, {"min_epochs", 5}, {"max_epochs", 7}});
  CHECK(c.beta == 0.01);
  CHECK(c.schedule.max_epochs == 7);
  CHECK(PathfinderConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(PathfinderConfig::from_json({{"betta", 0.01}}), ConfigError);
  CHECK_THROWS_AS(PathfinderConfig::from_json({{"beta", 0.0}}), ConfigError);
  CHECK_THROWS_AS(PathfinderConfig::from_json({{"convergence_rel_tol", 1.5}}), ConfigError);
  CHECK_THROWS_AS(PathfinderConfig::from_json({{"projection_gradient", "exact"}}), ConfigError);
}

TEST_CASE("training: smoke run, log and round trip") {
  auto model = models::make_forward_model("cos");
  const models::Dataset train = models::sample_dataset(*model, 40, 1);
  const models::Dataset val = models::sample_dataset(*model, 10, 2);
  PathfinderConfig cfg = small_config(true);
  cfg.schedule.min_epochs = 5;
  cfg.schedule.max_epochs = 30;
  PathfinderResult a = train_pathfinder(train, cfg, val, 9);
  PathfinderResult b = train_pathfinder(train, cfg, val, 9);
  REQUIRE(!a.log.epochs.empty());
  CHECK(a.log.epochs.size() <= 30);
  for (const EpochRecord& e : a.log.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(e.val_loss >= 0.0);
    CHECK(e.w_min >= 0.0);
    CHECK(std::abs(e.w_mean - 1.0) < 1e-9);
  }
  CHECK(a.log.epochs.front().train_loss > a.log.epochs.back().train_loss);

  const Matrix q = val.responses;
  CHECK(a.model.predict(q) == b.model.predict(q));
  const PathfinderModel back = PathfinderModel::from_json(a.model.to_json());
  CHECK((back.predict(q) - a.model.predict(q)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.log.to_json()["epochs"].size() == a.log.epochs.size());
}

TEST_CASE("training: repeated single response gives a point predictor") {
  auto model = models::make_forward_model("cos", models::ModelOptions{0.0});
  models::Dataset d;
  d.thetas = Matrix::Constant(12, 1, 0.25);
  d.responses = Matrix::Constant(12, 1, 0.0);
  d.model_name = "cos";
  PathfinderConfig cfg = small_config(false);
  cfg.schedule.min_epochs = 300;
  cfg.schedule.max_epochs = 300;
  cfg.schedule.lr = 1e-2;
  PathfinderResult res = train_pathfinder(d, cfg, d, 4);
  CHECK(res.model.predict(Matrix::Constant(1, 1, 0.0))(0, 0) == doctest::Approx(0.25).epsilon(0.02));
  const Vector w = simplex_project(res.model.raw_weights(d.thetas));
  CHECK((w.array() - 1.0).abs().maxCoeff() < 1e-9);
}
