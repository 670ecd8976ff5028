// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Usage: acceptance [criterion numbers...]
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "pinv/baselines/maf.hpp"
#include "pinv/baselines/mdn.hpp"
#include "pinv/baselines/naive_inversion.hpp"
#include "pinv/eval/benchmark.hpp"
#include "pinv/eval/diagnostics.hpp"
#include "pinv/nn/ops.hpp"
#include "pinv/pathfinder/pathfinder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

using namespace pinv;
using namespace pinv::eval;

namespace {

const std::uint64_t kSeed = 20240611;

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Matrix uniform_matrix(Index r, Index c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void randomize_biases(nn::DenseNet& net, std::mt19937_64& rng) {
  for (auto& l : net.layers()) l.bias = uniform_matrix(1, l.bias.cols(), rng, -0.3, 0.3);
}

// 1 ---------------------------------------------------------------------------

Outcome toy_table() {
  const std::vector<std::pair<std::string, Index>> cases{{"bump", 10}, {"cos", 20}, {"quartic", 50}};
  const std::vector<Method> methods{Method::Pathfinder, Method::NaiveInversion, Method::MDN, Method::MAF};
  Outcome o{true, ""};
  for (const auto& [model, n] : cases) {
    BenchmarkSpec spec;
    spec.models = {model};
    spec.methods = methods;
    spec.sizes = {n};
    spec.trials = 20;
    spec.seed = kSeed;
    spec.jobs = jobs();
    const BenchmarkReport r = run_benchmark(spec);
    const CellSummary* pf = r.cell(model, Method::Pathfinder, n);
    const double bound = model == "cos" ? 18.0 : 15.0;
    const bool below = pf->nmae.n == 20 && (model == "cos" ? pf->nmae.mean <= bound : pf->nmae.mean < bound);
    bool beats = true;
    std::ostringstream line;
    line << model << " N=" << n << ": PF " << fmt(pf->nmae.mean) << "+-" << fmt(pf->nmae.ci99, 2)
         << (below ? "" : " (over bound " + fmt(bound) + ")");
    for (Method m : methods) {
      if (m == Method::Pathfinder) continue;
      const CellSummary* c = r.cell(model, m, n);
      const bool ok = c->nmae.n > 0 && pf->nmae.mean < c->nmae.mean;
      beats = beats && ok;
      line << ", " << to_string(m) << " " << fmt(c->nmae.mean) << "+-" << fmt(c->nmae.ci99, 2) << (ok ? "" : " (<= PF)");
      if (c->failed) line << " [" << c->failed << " failed]";
    }
    o.pass = o.pass && below && beats;
    o.detail += (o.detail.empty() ? "" : "; ") + line.str();
  }
  return o;
}

// 2 ---------------------------------------------------------------------------

Outcome surrogate_trend() {
  const std::vector<Index> sizes{50, 100, 250, 500};
  BenchmarkSpec spec;
  spec.models = {"surrogate"};
  spec.methods = {Method::Pathfinder};
  spec.sizes = sizes;
  spec.trials = 10;
  spec.seed = kSeed;
  spec.jobs = jobs();
  const BenchmarkReport pf = run_benchmark(spec);
  spec.methods = {Method::NaiveInversion};
  spec.sizes = {250};
  const BenchmarkReport ni = run_benchmark(spec);

  std::vector<double> medians;
  std::ostringstream line;
  line << "PF median/mean by N:";
  for (Index n : sizes) {
    std::vector<double> v;
    for (const auto& t : pf.trials) {
      if (t.size == n && t.ok) v.push_back(t.test.mean);
    }
    medians.push_back(v.empty() ? std::nan("") : median(v));
    line << " " << n << "=" << fmt(medians.back()) << "/" << fmt(pf.cell("surrogate", Method::Pathfinder, n)->nmae.mean);
  }
  int inversions = 0;
  bool overlap_ok = true;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (!(medians[i + 1] <= medians[i])) {
      ++inversions;
      const auto* a = pf.cell("surrogate", Method::Pathfinder, sizes[i]);
      const auto* b = pf.cell("surrogate", Method::Pathfinder, sizes[i + 1]);
      overlap_ok = overlap_ok && (b->nmae.mean - b->nmae.ci99 <= a->nmae.mean + a->nmae.ci99);
    }
  }
  const double pf250 = pf.cell("surrogate", Method::Pathfinder, 250)->nmae.mean;
  const double ni250 = ni.cell("surrogate", Method::NaiveInversion, 250)->nmae.mean;
  line << "; inversions " << inversions << "; N=250 PF " << fmt(pf250) << " vs NI " << fmt(ni250);
  return {inversions <= 1 && overlap_ok && pf250 < ni250, line.str()};
}

// 3 ---------------------------------------------------------------------------

Outcome beta_trend() {
  const auto cos = models::make_forward_model("cos");
  const auto sweep = beta_sweep(*cos, {10.0, 1e-3, 1e-4, 1e-5}, 500, {1, 2, 3}, nlohmann::json::object(), jobs());
  double best = std::numeric_limits<double>::infinity();
  std::ostringstream line;
  line << "median residual:";
  for (const auto& p : sweep) {
    line << " beta=" << fmt(p.beta) << " " << fmt(p.median);
    if (p.beta < 1.0 && p.median < best) best = p.median;
  }
  const double large = sweep.front().median;
  return {best < 0.01 && best <= 0.5 * large, line.str()};
}

// 4 ---------------------------------------------------------------------------

Outcome projection_oracle() {
  const std::vector<double> grid{-1.5, -0.25, 0.0, 0.5, 1.0, 3.0};
  long count = 0;
  double worst = 0.0;
  testing::for_each_grid_vector(grid, 6, [&](const Vector& v) {
    const double total = static_cast<double>(v.size());
    worst = std::max(worst, (simplex_project(v, total) - testing::qp_simplex_oracle(v, total)).cwiseAbs().maxCoeff());
    ++count;
  });
  return {count >= 10000 && worst < 1e-10, std::to_string(count) + " vectors, max error " + fmt(worst)};
}

// 5 ---------------------------------------------------------------------------

Outcome gradient_suite() {
  constexpr int kConfigs = 50;
  constexpr double kTol = 1e-4;
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> small(1, 3), units(3, 7), rows(4, 9);
  std::bernoulli_distribution coin(0.5);
  std::map<std::string, std::pair<int, double>> stats;  // failures, worst error
  auto record = [&](const std::string& name, double err) {
    auto& s = stats[name];
    if (!(err < kTol)) ++s.first;
    s.second = std::max(s.second, std::isfinite(err) ? err : 1e9);
  };
  const auto quartic = models::make_forward_model("quartic");

  for (int k = 0; k < kConfigs; ++k) {
    const Index n = small(rng), m = small(rng), b = rows(rng);
    PathfinderConfig cfg;
    cfg.regressor_layers = small(rng);
    cfg.weight_layers = small(rng);
    cfg.hidden_units = units(rng);
    cfg.batch_norm = coin(rng);
    cfg.weight_batch_norm = coin(rng);
    cfg.uniform_initial_weights = false;
    PathfinderModel model(cfg, n, m, rng());
    randomize_biases(model.regressor, rng);
    randomize_biases(model.weight_net, rng);
    const Matrix th = uniform_matrix(b, n, rng, -1, 1), r = uniform_matrix(b, m, rng, -1, 1);
    const double beta = std::pow(10.0, std::uniform_real_distribution<double>(-4, 0)(rng));
    auto loss = [&](nn::Tape& t) { return pathfinder_batch_loss(t, model, th, r, beta, 0.5, true).total; };
    record("PF", testing::check_gradient(loss, model.parameters()).relative_error);
  }
  for (int k = 0; k < kConfigs; ++k) {
    const Index n = small(rng), m = small(rng), b = rows(rng);
    MDNConfig cfg;
    cfg.components = small(rng) + 1;
    cfg.trunk_layers = small(rng);
    cfg.hidden_units = units(rng);
    cfg.batch_norm = coin(rng);
    MDNModel model(cfg, n, m, rng());
    for (nn::DenseNet* net : {&model.trunk, &model.weight_head, &model.mean_head, &model.var_head}) {
      randomize_biases(*net, rng);
    }
    const Matrix r = uniform_matrix(b, m, rng, -1, 1), th = uniform_matrix(b, n, rng, -1, 1);
    auto loss = [&](nn::Tape& t) { return mdn_nll(t, model, r, th, true); };
    record("MDN", testing::check_gradient(loss, model.parameters()).relative_error);
  }
  for (int k = 0; k < kConfigs; ++k) {
    const Index n = small(rng), m = small(rng), b = rows(rng) + 2;
    models::Dataset d;
    d.thetas = uniform_matrix(b, n, rng, -1, 1);
    d.responses = uniform_matrix(b, m, rng, -1, 1);
    MAFConfig cfg;
    cfg.flows = small(rng);
    cfg.hidden_units = units(rng);
    cfg.batch_norm_flow = coin(rng);
    cfg.schedule.min_epochs = cfg.schedule.max_epochs = 1;
    Vector lo = Vector::Constant(n, -1.0), hi = Vector::Constant(n, 1.0);
    MAFModel model = train_maf(d, cfg, d, models::Domain::box(lo, hi), rng()).model;
    for (MadeBlock& blk : model.blocks) {
      blk.wm = uniform_matrix(blk.wm.rows(), blk.wm.cols(), rng, -0.5, 0.5);
      blk.wa = uniform_matrix(blk.wa.rows(), blk.wa.cols(), rng, -0.5, 0.5);
      blk.b1 = uniform_matrix(1, blk.b1.cols(), rng, -0.3, 0.3);
      blk.b2 = uniform_matrix(1, blk.b2.cols(), rng, -0.3, 0.3);
      blk.bm = uniform_matrix(1, blk.bm.cols(), rng, -0.3, 0.3);
      blk.ba = uniform_matrix(1, blk.ba.cols(), rng, -0.3, 0.3);
    }
    for (BatchNormFlow& f : model.norms) {
      f.log_gamma = uniform_matrix(1, f.log_gamma.cols(), rng, -0.3, 0.3);
      f.beta = uniform_matrix(1, f.beta.cols(), rng, -0.3, 0.3);
    }
    const Matrix x = uniform_matrix(b, n + m, rng, -1.5, 1.5);
    auto loss = [&](nn::Tape& t) { return nn::scale(nn::mean(model.log_prob_std(t, t.constant(x), true)), -1.0); };
    record("MAF", testing::check_gradient(loss, model.parameters()).relative_error);
  }
  for (int k = 0; k < kConfigs; ++k) {
    const bool oracle = coin(rng);
    NIConfig cfg;
    cfg.forward_layers = small(rng);
    cfg.inverse_layers = small(rng);
    cfg.hidden_units = units(rng);
    cfg.batch_norm = coin(rng);
    cfg.oracle_forward = oracle;
    cfg.schedule.min_epochs = cfg.schedule.max_epochs = 1;
    const models::Dataset d = models::sample_dataset(*quartic, rows(rng) + 2, rng());
    NIResult res = train_ni_forward(d, cfg, d, rng());
    randomize_biases(res.model.forward_net, rng);
    randomize_biases(res.model.inverse_net, rng);
    auto loss = [&](nn::Tape& t) {
      return ni_composite_loss(t, res.model, d.responses, true, oracle ? quartic.get() : nullptr);
    };
    record("NI", testing::check_gradient(loss, res.model.inverse_net.parameters()).relative_error);
  }
  bool pass = true;
  std::ostringstream line;
  line << kConfigs << " configs each:";
  for (const auto& [name, s] : stats) {
    pass = pass && s.first == 0;
    line << " " << name << " worst " << fmt(s.second, 2) << " (" << s.first << " over)";
  }
  return {pass, line.str()};
}

// 6 ---------------------------------------------------------------------------

Outcome maf_exactness() {
  std::mt19937_64 rng(kSeed);
  const auto cos = models::make_forward_model("cos");
  const models::Dataset d = models::sample_dataset(*cos, 64, 5);
  MAFConfig cfg;
  cfg.schedule.min_epochs = cfg.schedule.max_epochs = 30;
  const MAFModel m = train_maf(d, cfg, d, cos->domain(), 7).model;
  const Matrix z = uniform_matrix(200, 2, rng, -2.5, 2.5);
  const Matrix x = uniform_matrix(200, 2, rng, -2.5, 2.5);
  const double round_trip = std::max((m.to_base(m.from_base(z)) - z).cwiseAbs().maxCoeff(),
                                     (m.from_base(m.to_base(x)) - x).cwiseAbs().maxCoeff());

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix th(1000, 1), r(1000, 1);
  for (Index i = 0; i < 1000; ++i) {
    th(i, 0) = normal(rng);
    r(i, 0) = normal(rng);
  }
  models::Dataset g;
  g.thetas = th;
  g.responses = r;
  cfg.schedule.min_epochs = cfg.schedule.max_epochs = 20;
  const MAFModel gm = train_maf(g, cfg, g, models::Domain::interval(-5, 5), 1).model;
  Matrix joint(1000, 2);
  joint << th, r;
  const double nll = -gm.log_prob(joint).mean();
  const double entropy = std::log(2.0 * std::numbers::pi * std::numbers::e);
  const double rel = std::abs(nll - entropy) / entropy;
  return {round_trip < 1e-8 && rel < 0.05,
          "round trip " + fmt(round_trip) + ", NLL " + fmt(nll, 4) + " vs entropy " + fmt(entropy, 4) + " (" +
              fmt(100 * rel, 2) + "%)"};
}

// 7 ---------------------------------------------------------------------------

Outcome bias_law() {
  const auto curve = maximization_bias_curve({60, 240, 960}, 6, 100000, kSeed);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::ostringstream line;
  line << "(E[max]-n/6)/sqrt(n):";
  for (const auto& p : curve) {
    lo = std::min(lo, p.excess_per_sqrt_n);
    hi = std::max(hi, p.excess_per_sqrt_n);
    line << " n=" << p.n << " " << fmt(p.excess_per_sqrt_n, 4);
  }
  const double spread = (hi - lo) / lo;
  line << "; spread " << fmt(100 * spread, 2) << "%";
  return {lo > 0.0 && spread < 0.15, line.str()};
}

// 8 ---------------------------------------------------------------------------

Outcome ni_oracle() {
  const auto cos = models::make_forward_model("cos");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 30; ++s) seeds.push_back(derive_seed(kSeed, s));
  const auto points = ni_diagnostic(*cos, {10, 20, 30, 40, 50}, seeds, nlohmann::json::object(), jobs());
  bool pass = true;
  std::ostringstream line;
  line << "median NMAE estimated/oracle:";
  for (const auto& p : points) {
    pass = pass && p.oracle_median < p.estimated_median;
    line << " N=" << p.size << " " << fmt(p.estimated_median) << "/" << fmt(p.oracle_median);
  }
  return {pass, line.str()};
}

// 9 ---------------------------------------------------------------------------

Outcome split_leakage() {
  std::mt19937_64 rng(kSeed);
  std::uniform_int_distribution<int> size(8, 60), level(0, 6), dims(1, 3);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  const std::vector<double> tolerances{0.0, 0.05, 0.15, 0.5};
  long invocations = 0, skipped = 0, leaks = 0;
  while (invocations < 10000) {
    const Index n = size(rng), m = dims(rng);
    models::Dataset d;
    d.thetas.resize(n, 1);
    d.responses.resize(n, m);
    const bool noisy = rng() % 2;
    for (Index i = 0; i < n; ++i) {
      d.thetas(i, 0) = static_cast<double>(i);
      for (Index k = 0; k < m; ++k) d.responses(i, k) = 0.5 * level(rng) + (noisy ? jitter(rng) : 0.0);
    }
    SplitSpec spec;
    spec.seed = rng();
    spec.response_tolerance = tolerances[rng() % tolerances.size()];
    SplitResult s;
    try {
      s = split_by_response(d, spec);
    } catch (const ConfigError&) {
      ++skipped;
      continue;
    }
    ++invocations;
    // Membership recovered from the outputs: train and val rows by theta, the rest removed.
    std::set<double> train_ids, val_ids;
    for (Index i = 0; i < s.train.size(); ++i) train_ids.insert(s.train.thetas(i, 0));
    for (Index i = 0; i < s.val.size(); ++i) val_ids.insert(s.val.thetas(i, 0));
    std::vector<int> part;
    for (Index i = 0; i < n; ++i) {
      part.push_back(train_ids.count(d.thetas(i, 0)) ? 0 : val_ids.count(d.thetas(i, 0)) ? 1 : 2);
    }
    leaks += testing::cross_split_pairs(d.responses, part, spec.response_tolerance);
  }
  return {leaks == 0, std::to_string(invocations) + " splits (" + std::to_string(skipped) +
                          " rejected as too small), cross-split pairs " + std::to_string(leaks)};
}

// 10 --------------------------------------------------------------------------

Outcome determinism() {
  BenchmarkSpec spec;
  spec.models = {"bump", "cos", "quartic"};
  spec.methods = {Method::Pathfinder, Method::NaiveInversion, Method::MDN, Method::MAF};
  spec.sizes = {10, 20, 50};
  spec.trials = 2;
  spec.seed = kSeed;
  spec.jobs = jobs();
  const BenchmarkReport a = run_benchmark(spec);
  spec.jobs = spec.jobs == 1 ? 2 : 1;
  const BenchmarkReport b = run_benchmark(spec);
  const bool same = a.to_json().dump() == b.to_json().dump() && a.cells_csv() == b.cells_csv() &&
                    a.trials_csv() == b.trials_csv() && a.to_markdown() == b.to_markdown();
  return {same, std::to_string(a.trials.size()) + " trials per run, reports " +
                    (same ? "byte-identical" : "differ") + " (jobs " + std::to_string(jobs()) + " vs " +
                    std::to_string(spec.jobs) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"toy table: PF bounds and ordering vs baselines", toy_table},
      {"surrogate: PF non-increasing in N, beats NI at N=250", surrogate_trend},
      {"beta sweep: residual < 0.01 and <= half of beta=10", beta_trend},
      {"simplex projection vs exhaustive QP", projection_oracle},
      {"finite-difference gradients of all four losses", gradient_suite},
      {"MAF round trip and Gaussian entropy", maf_exactness},
      {"maximization bias sqrt(n) law", bias_law},
      {"NI with true forward map beats estimated", ni_oracle},
      {"split leakage", split_leakage},
      {"benchmark determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << " -- " << o.detail << " ("
              << fmt(secs, 3) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
