#include "pinv/eval/diagnostics.hpp"

#include "pinv/baselines/naive_inversion.hpp"
#include "pinv/eval/benchmark.hpp"
#include "pinv/pathfinder/pathfinder.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>

namespace pinv::eval {
namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<double> median_of(const std::vector<std::optional<double>>& values) {
  std::vector<double> done;
  for (const auto& v : values) {
    if (v) done.push_back(*v);
  }
  if (done.empty()) return std::nullopt;
  return median(done);
}

}  // namespace

double maximization_bias_mc(Index n, int bins, int reps, std::uint64_t seed) {
  if (bins < 1 || reps < 1 || n < 0) throw ConfigError("maximization_bias_mc: need bins >= 1, reps >= 1, n >= 0");
  if (bins == 1) return static_cast<double>(n);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, bins - 1);
  std::vector<Index> counts(static_cast<std::size_t>(bins));
  double total = 0.0;
  for (int r = 0; r < reps; ++r) {
    std::fill(counts.begin(), counts.end(), 0);
    for (Index i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(pick(rng))];
    total += static_cast<double>(*std::max_element(counts.begin(), counts.end()));
  }
  return total / reps;
}

std::vector<BiasPoint> maximization_bias_curve(const std::vector<Index>& ns, int bins, int reps,
                                               std::uint64_t seed) {
  std::vector<BiasPoint> out;
  for (Index n : ns) {
    BiasPoint p;
    p.n = n;
    p.expected_max = maximization_bias_mc(n, bins, reps, derive_seed(seed, static_cast<std::uint64_t>(n)));
    p.excess_per_sqrt_n =
        n > 0 ? (p.expected_max - static_cast<double>(n) / bins) / std::sqrt(static_cast<double>(n)) : 0.0;
    out.push_back(p);
  }
  return out;
}

std::string bias_csv(const std::vector<BiasPoint>& curve, int bins, int reps, std::uint64_t seed) {
  std::ostringstream os;
  os << "n,bins,reps,seed,expected_max,per_bin_mean,excess_per_sqrt_n\n";
  for (const auto& p : curve) {
    os << p.n << ',' << bins << ',' << reps << ',' << seed << ',' << num(p.expected_max) << ','
       << num(static_cast<double>(p.n) / bins) << ',' << num(p.excess_per_sqrt_n) << '\n';
  }
  return os.str();
}

Matrix response_grid(const models::ForwardModel& model, Index points, std::uint64_t seed) {
  if (points < 2) throw ConfigError("response_grid: need at least 2 points");
  const models::Domain& d = model.domain();
  Matrix thetas(points, model.theta_dim());
  if (d.kind == models::Domain::Kind::Box && d.dim == 1) {
    for (Index i = 0; i < points; ++i) {
      thetas(i, 0) = d.lower(0) + (d.upper(0) - d.lower(0)) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
  } else {
    std::mt19937_64 rng(seed);
    for (Index i = 0; i < points; ++i) thetas.row(i) = d.sample(rng).transpose();
  }
  return model.eval_rows(thetas);
}

std::vector<SweepPoint> beta_sweep(const models::ForwardModel& model, const std::vector<double>& betas, Index n,
                                       const std::vector<std::uint64_t>& seeds, const nlohmann::json& pf_overrides,
                                       int jobs) {
  if (betas.empty() || seeds.empty()) throw ConfigError("beta_sweep: need betas and seeds");
  if (n < 2) throw ConfigError("beta_sweep: need N >= 2");
  const std::unique_ptr<models::ForwardModel> clean = model.clone_noiseless();
  const Matrix grid = response_grid(*clean, 2001, 0);
  const Index n_val = std::max<Index>(10, n * 15 / 70);

  std::vector<SweepPoint> out(betas.size());
  for (std::size_t b = 0; b < betas.size(); ++b) {
    out[b].beta = betas[b];
    out[b].seeds = seeds;
    out[b].residuals.assign(seeds.size(), std::nullopt);
    out[b].errors.assign(seeds.size(), "");
  }
  parallel_for(betas.size() * seeds.size(), jobs, [&](std::size_t job) {
    const std::size_t b = job / seeds.size();
    const std::size_t s = job % seeds.size();
    try {
      nlohmann::json overrides = pf_overrides;
      overrides["beta"] = betas[b];
      const PathfinderConfig cfg =
          PathfinderConfig::from_json(resolve_method_config(Method::Pathfinder, clean->name(), overrides));
      const models::Dataset train = models::sample_dataset(*clean, n, derive_seed(seeds[s], 0));
      const models::Dataset val = models::sample_dataset(*clean, n_val, derive_seed(seeds[s], 1));
      const PathfinderResult r = train_pathfinder(train, cfg, val, derive_seed(seeds[s], 2));
      out[b].residuals[s] = pseudoinverse_residual(r.model.predict(grid), grid, *clean);
    } catch (const NumericalError& e) {
      out[b].errors[s] = e.what();
    }
  });
  for (auto& p : out) p.median = median_of(p.residuals).value_or(std::numeric_limits<double>::quiet_NaN());
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& sweep) {
  std::ostringstream os;
  os << "beta,seed,residual,median_residual,error\n";
  for (const auto& p : sweep) {
    for (std::size_t s = 0; s < p.seeds.size(); ++s) {
      os << num(p.beta) << ',' << p.seeds[s] << ',' << (p.residuals[s] ? num(*p.residuals[s]) : "") << ','
         << num(p.median) << ',' << (p.errors[s].empty() ? "" : "diverged") << '\n';
    }
  }
  return os.str();
}

std::vector<NIDiagnosticPoint> ni_diagnostic(const models::ForwardModel& model, const std::vector<Index>& sizes,
                                             const std::vector<std::uint64_t>& seeds,
                                             const nlohmann::json& ni_overrides, int jobs) {
  if (sizes.empty() || seeds.empty()) throw ConfigError("ni_diagnostic: need sizes and seeds");
  const NIConfig base = NIConfig::from_json(resolve_method_config(Method::NaiveInversion, model.name(), ni_overrides));
  const std::size_t per_size = seeds.size();
  std::vector<std::optional<std::pair<double, double>>> results(sizes.size() * per_size);
  parallel_for(results.size(), jobs, [&](std::size_t job) {
    const Index size = sizes[job / per_size];
    const std::uint64_t seed = derive_seed(seeds[job % per_size], static_cast<std::uint64_t>(size));
    try {
      const std::unique_ptr<models::ForwardModel> g = model.clone();
      SplitSpec split;
      split.seed = derive_seed(seed, 1);
      const models::Dataset data = models::sample_dataset(*g, dataset_size_for(size, split.train), seed);
      const SplitResult s = split_by_response(data, split);
      NIResult estimated = train_ni_forward(s.train, base, s.val, derive_seed(seed, 2));
      NIResult oracle = estimated;
      estimated.model.config.oracle_forward = false;
      oracle.model.config.oracle_forward = true;
      train_ni_inverse(estimated, s.train, s.val, derive_seed(seed, 3), nullptr);
      train_ni_inverse(oracle, s.train, s.val, derive_seed(seed, 3), g.get());
      results[job] = std::pair{nmae(estimated.model, s.test_responses, *g).mean,
                               nmae(oracle.model, s.test_responses, *g).mean};
    } catch (const NumericalError&) {
    }
  });

  std::vector<NIDiagnosticPoint> out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    NIDiagnosticPoint p;
    p.size = sizes[i];
    for (std::size_t k = 0; k < per_size; ++k) {
      const auto& r = results[i * per_size + k];
      if (!r) {
        ++p.failed;
        continue;
      }
      p.seeds.push_back(seeds[k]);
      p.estimated.push_back(r->first);
      p.oracle.push_back(r->second);
    }
    if (!p.seeds.empty()) {
      p.estimated_median = median(p.estimated);
      p.oracle_median = median(p.oracle);
    } else {
      p.estimated_median = p.oracle_median = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string ni_diagnostic_csv(const std::vector<NIDiagnosticPoint>& points) {
  std::ostringstream os;
  os << "size,seed,nmae_estimated,nmae_oracle,median_estimated,median_oracle\n";
  for (const auto& p : points) {
    for (std::size_t k = 0; k < p.seeds.size(); ++k) {
      os << p.size << ',' << p.seeds[k] << ',' << num(p.estimated[k]) << ',' << num(p.oracle[k]) << ','
         << num(p.estimated_median) << ',' << num(p.oracle_median) << '\n';
    }
  }
  return os.str();
}

}  // namespace pinv::eval
