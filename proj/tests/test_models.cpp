#include "pinv/models/dataset.hpp"
#include "pinv/models/forward_model.hpp"
#include "pinv/models/waveform.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace pinv;
using namespace pinv::models;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pinv_test_" + name);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("toy models: analytic values") {
  ToyModel bump(ToyKind::GaussianBump), cosine(ToyKind::Cosine), quartic(ToyKind::Quartic);
  CHECK(bump.eval_scalar(0.0) == 1.0);
  CHECK(std::abs(cosine.eval_scalar(0.25)) < 1e-15);
  CHECK(quartic.eval_scalar(2.0) == 0.0);
  CHECK(quartic.eval_scalar(3.0) == 25.0);

  CHECK_THROWS_AS(cosine.eval_scalar(-0.1), DomainError);
  CHECK_THROWS_AS(bump.eval_scalar(3.5), DomainError);
  CHECK_THROWS_AS(cosine.eval(Vector::Constant(1, 3.01)), DomainError);
}

TEST_CASE("toy models: many-to-one witnesses are exact") {
  ToyModel bump(ToyKind::GaussianBump), cosine(ToyKind::Cosine), quartic(ToyKind::Quartic);
  for (double t : {0.125, 0.5, 1.75}) CHECK(cosine.eval_scalar(t) == cosine.eval_scalar(t + 1.0));
  for (double t : {0.3, 1.1, 2.9}) {
    CHECK(quartic.eval_scalar(t) == quartic.eval_scalar(-t));
    CHECK(bump.eval_scalar(t) == bump.eval_scalar(-t));
  }
}

TEST_CASE("toy models: jacobian matches finite differences") {
  for (auto kind : {ToyKind::Cosine, ToyKind::Quartic, ToyKind::GaussianBump}) {
    ToyModel m(kind);
    for (double t : {0.2, 0.9, 1.7}) {
      const double h = 1e-6;
      const double fd = (m.eval_scalar(t + h) - m.eval_scalar(t - h)) / (2 * h);
      CHECK(m.jacobian(Vector::Constant(1, t))(0, 0) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("response ranges hold on 1e5 samples") {
  for (const auto& name : forward_model_names()) {
    auto model = make_forward_model(name)->clone_noiseless();
    Dataset d = sample_dataset(*model, 100000, 99);
    auto range = model->response_range();
    for (Index j = 0; j < d.response_dim(); ++j) {
      CHECK(d.responses.col(j).minCoeff() >= range[static_cast<std::size_t>(j)].min);
      CHECK(d.responses.col(j).maxCoeff() <= range[static_cast<std::size_t>(j)].max);
    }
  }
}

TEST_CASE("sample_dataset") {
  SUBCASE("noiseless responses equal eval exactly") {
    ToyModel cosine(ToyKind::Cosine, 0.0);
    Dataset d = sample_dataset(cosine, 3, 7);
    for (Index i = 0; i < 3; ++i) CHECK(d.responses(i, 0) == cosine.eval_scalar(d.thetas(i, 0)));
  }
  SUBCASE("uniform theta moments") {
    ToyModel cosine(ToyKind::Cosine);
    const Index n = 100000;
    Dataset d = sample_dataset(cosine, n, 2024);
    const double sigma = 3.0 / std::sqrt(12.0);
    CHECK(std::abs(d.thetas.mean() - 1.5) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
    CHECK(d.thetas.minCoeff() >= 0.0);
    CHECK(d.thetas.maxCoeff() <= 3.0);
  }
  SUBCASE("toy noise has std 0.1") {
    ToyModel cosine(ToyKind::Cosine);
    Dataset d = sample_dataset(cosine, 50000, 5);
    Vector resid(d.size());
    for (Index i = 0; i < d.size(); ++i) resid(i) = d.responses(i, 0) - cosine.eval_scalar(d.thetas(i, 0));
    const double sd = std::sqrt(resid.array().square().mean());
    CHECK(sd == doctest::Approx(0.1).epsilon(0.02));
  }
  SUBCASE("surrogate stays in the ball") {
    auto s = make_forward_model("surrogate");
    Dataset d = sample_dataset(*s, 10000, 3);
    CHECK(d.thetas.rowwise().norm().maxCoeff() <= 2.0);
    CHECK(d.theta_dim() == 50);
    CHECK(d.response_dim() == 2);
  }
  SUBCASE("sphere flag samples the surface") {
    ModelOptions opt;
    opt.sphere_surface = true;
    auto s = make_forward_model("surrogate", opt);
    Dataset d = sample_dataset(*s, 200, 3);
    CHECK((d.thetas.rowwise().norm().array() - 2.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("seed isolation") {
    ToyModel bump(ToyKind::GaussianBump);
    Dataset a = sample_dataset(bump, 20, 1), b = sample_dataset(bump, 20, 1), c = sample_dataset(bump, 20, 2);
    CHECK(a.thetas == b.thetas);
    CHECK(a.responses == b.responses);
    CHECK(a.thetas != c.thetas);
  }
  SUBCASE("noise multiplier") {
    ModelOptions opt;
    opt.noise_multiplier = 3.0;
    CHECK(make_forward_model("quartic", opt)->noise_sigma() == doctest::Approx(0.3));
    CHECK_THROWS_AS(make_forward_model("nope"), ConfigError);
  }
}

TEST_CASE("surrogate: closed form at the origin and monotonicity") {
  auto model = make_forward_model("surrogate");
  auto& s = dynamic_cast<SurrogateNeuronModel&>(*model);
  const auto& c = s.constants();
  Vector r0 = s.eval(Vector::Zero(50));
  for (Index j = 0; j < 2; ++j) {
    const double expect = 200.0 / (1.0 + std::exp(c.bias[static_cast<std::size_t>(j)]));
    CHECK(r0(j) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK_THROWS_AS(s.eval(Vector::Constant(50, 1.0)), DomainError);

  std::mt19937_64 rng(8);
  for (int k = 0; k < 50; ++k) {
    Vector t = s.domain().sample(rng);
    if (t.norm() > 1.0) t *= 0.9 / t.norm();
    Vector r1 = s.eval(t), r2 = s.eval(2.0 * t);
    CHECK((r2.array() >= r1.array()).all());
  }
}

TEST_CASE("surrogate: rotations inside the shared null space leave r unchanged") {
  auto model = make_forward_model("surrogate");
  auto& s = dynamic_cast<SurrogateNeuronModel&>(*model);
  Matrix stacked(10, 50);
  stacked << s.constants().projections[0], s.constants().projections[1];
  Eigen::JacobiSVD<Matrix> svd(stacked, Eigen::ComputeFullV);
  Matrix null = svd.matrixV().rightCols(40);  // orthonormal basis of null(A1) ∩ null(A2)
  CHECK((stacked * null).cwiseAbs().maxCoeff() < 1e-10);

  std::mt19937_64 rng(17);
  for (int k = 0; k < 20; ++k) {
    Vector t = s.domain().sample(rng);
    Vector coords = null.transpose() * t;
    // Givens rotation between two null-space coordinates.
    const double a = 0.3 + 0.1 * k;
    const double x = coords(0), y = coords(1 + k % 39);
    Vector rotated = coords;
    rotated(0) = std::cos(a) * x - std::sin(a) * y;
    rotated(1 + k % 39) = std::sin(a) * x + std::cos(a) * y;
    Vector t2 = t + null * (rotated - coords);
    CHECK((t2 - t).norm() > 1e-3);
    CHECK(std::abs(t2.norm() - t.norm()) < 1e-12);
    CHECK((s.eval_unchecked(t2) - s.eval_unchecked(t)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("surrogate: jacobian matches finite differences") {
  auto model = make_forward_model("surrogate");
  std::mt19937_64 rng(4);
  Vector t = model->domain().sample(rng);
  Matrix j = model->jacobian(t);
  Matrix fd(2, 50);
  for (Index i = 0; i < 50; ++i) {
    Vector e = Vector::Zero(50);
    e(i) = 1e-6;
    fd.col(i) = (model->eval_unchecked(t + e) - model->eval_unchecked(t - e)) / 2e-6;
  }
  CHECK((j - fd).norm() / fd.norm() < 1e-6);
}

TEST_CASE("waveform_render") {
  Vector e1 = Vector::Zero(50), e2 = Vector::Zero(50);
  e1(0) = 1.0;
  e2(1) = 1.0;
  auto w1 = waveform_render(e1, 101);
  CHECK(w1.samples.cwiseAbs().maxCoeff() == 0.0);
  auto w2 = waveform_render(e2, 101);
  for (Index k = 0; k < 101; ++k) {
    CHECK(std::abs(w2.samples(k) - std::sin(2.0 * std::numbers::pi * w2.times(k))) < 1e-12);
  }
  CHECK(w2.times(100) == doctest::Approx(0.2));
  auto w23 = waveform_render(e2 + Vector::Unit(50, 2), 11);
  CHECK(w23.samples(0) == 0.0);

  std::mt19937_64 rng(1);
  auto s = make_forward_model("surrogate");
  Vector theta = s->domain().sample(rng);
  auto w = waveform_render(theta, 33);
  for (Index k = 0; k < 33; ++k) {
    double u = 0.0;
    for (Index i = 0; i < 50; ++i) u += theta(i) * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) * w.times(k));
    CHECK(std::abs(u - w.samples(k)) < 1e-12);
  }
  CHECK_THROWS_AS(waveform_render(theta, 1), ConfigError);
}

TEST_CASE("dataset CSV round trip and parse errors") {
  auto dir = temp_dir("models");
  auto model = make_forward_model("cos");
  Dataset d = sample_dataset(*model, 20, 7);
  const std::string path = (dir / "cos.csv").string();
  write_dataset(d, path, &model->domain());
  Dataset back = read_dataset(path);
  CHECK(back.thetas == d.thetas);
  CHECK(back.responses == d.responses);
  CHECK(back.model_name == "cos");
  CHECK(back.seed == 7);
  CHECK(read_responses(path) == d.responses);

  std::ofstream(dir / "bad.csv") << "theta_0,r_0\n0.1,0.2\n0.3,abc\n";
  try {
    read_dataset((dir / "bad.csv").string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  std::ofstream(dir / "short.csv") << "theta_0,r_0\n0.1\n";
  CHECK_THROWS_AS(read_dataset((dir / "short.csv").string()), IoError);
  CHECK_THROWS_AS(read_dataset((dir / "missing.csv").string()), IoError);
}
