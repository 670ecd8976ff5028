#include "pinv/eval/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

namespace pinv::eval {
namespace {

std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string num(double v, const char* format = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::size_t method_index(Method m) { return static_cast<std::size_t>(m); }

// Keys whose values differ between lattice points; the chosen point is
// reported by these alone.
std::vector<std::string> varying_keys(const std::vector<nlohmann::json>& grid) {
  std::vector<std::string> keys;
  for (const auto& [key, value] : grid.front().items()) {
    for (const auto& point : grid) {
      if (point.at(key) != value) {
        keys.push_back(key);
        break;
      }
    }
  }
  return keys;
}

}  // namespace

Index dataset_size_for(Index train_size, double train_fraction) {
  return std::max<Index>(train_size + 1, std::llround(static_cast<double>(train_size) / train_fraction));
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<int>(jobs, 1, 1024));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

GridSearchResult grid_search(Method method, const std::vector<nlohmann::json>& grid, const models::Dataset& train,
                             const models::Dataset& val, const Matrix& val_responses,
                             const models::ForwardModel& model, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("grid_search: empty grid");
  GridSearchResult out;
  bool found = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    try {
      TrainedInverter trained = train_method(method, grid[i], train, val, model, derive_seed(seed, i));
      const double score = nmae(*trained.inverter, val_responses, model).mean;
      if (!std::isfinite(score)) throw NumericalError("non-finite validation NMAE");
      out.val_nmae.emplace_back(score);
      if (!found || score < out.best_val_nmae) {
        found = true;
        out.best_index = i;
        out.best_val_nmae = score;
        out.trained = std::move(trained);
      }
    } catch (const NumericalError& e) {
      out.val_nmae.emplace_back(std::nullopt);
      out.warnings.push_back(to_string(method) + " grid point " + std::to_string(i) + " skipped: " + e.what());
    }
  }
  if (!found) throw NumericalError(to_string(method) + ": every grid point diverged");
  return out;
}

void BenchmarkSpec::validate() const {
  if (models.empty()) throw ConfigError("benchmark: empty model list");
  if (methods.empty()) throw ConfigError("benchmark: empty method list");
  if (sizes.empty()) throw ConfigError("benchmark: empty size list");
  if (trials < 2) throw ConfigError("benchmark: need at least 2 trials");
  if (jobs < 1) throw ConfigError("benchmark: jobs must be >= 1");
  for (Index n : sizes) {
    if (n < 2) throw ConfigError("benchmark: training sizes must be >= 2");
  }
  const auto known = models::forward_model_names();
  for (const auto& m : models) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw ConfigError("benchmark: unknown forward model '" + m + "'");
    }
  }
  if (response_tolerance && !(*response_tolerance >= 0.0)) {
    throw ConfigError("benchmark: response_tolerance must be >= 0");
  }
  split.validate();
  if (split.train <= 0.0) throw ConfigError("benchmark: train fraction must be positive");
  for (const auto& [name, grid] : grids) {
    const Method method = method_from_string(name);
    if (grid.empty()) throw ConfigError("benchmark: empty grid for " + name);
    for (const auto& m : models) grid_for(method, m);
  }
}

double BenchmarkSpec::tolerance_for(const std::string& model_name) const {
  if (response_tolerance) return *response_tolerance;
  return model_name == "surrogate" ? 0.5 : 0.0;
}

std::vector<nlohmann::json> BenchmarkSpec::grid_for(Method method, const std::string& model_name) const {
  for (const auto& [name, grid] : grids) {
    if (method_from_string(name) != method) continue;
    std::vector<nlohmann::json> out;
    for (const auto& overrides : grid) out.push_back(resolve_method_config(method, model_name, overrides));
    return out;
  }
  return default_method_grid(method, model_name);
}

nlohmann::json BenchmarkSpec::to_json() const {
  nlohmann::json j;
  j["models"] = models;
  j["noise_multiplier"] = model_options.noise_multiplier;
  if (model_options.noise_sigma) j["noise_sigma"] = *model_options.noise_sigma;
  j["sphere_surface"] = model_options.sphere_surface;
  std::vector<std::string> names;
  for (Method m : methods) names.push_back(to_string(m));
  j["methods"] = names;
  j["sizes"] = sizes;
  j["trials"] = trials;
  j["seed"] = seed;
  j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
  nlohmann::json tol, grid_json;
  for (const auto& m : models) {
    tol[m] = tolerance_for(m);
    for (Method method : methods) grid_json[m][to_string(method)] = grid_for(method, m);
  }
  j["response_tolerance"] = tol;
  j["grids"] = grid_json;
  return j;
}

const CellSummary* BenchmarkReport::cell(const std::string& model, Method method, Index size) const {
  for (const auto& c : cells) {
    if (c.model == model && c.method == method && c.size == size) return &c;
  }
  return nullptr;
}

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json j;
  j["spec"] = spec;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    j["cells"].push_back({{"model", c.model},
                          {"method", to_string(c.method)},
                          {"size", c.size},
                          {"trials", c.nmae.n},
                          {"failed", c.failed},
                          {"nmae_mean", c.nmae.mean},
                          {"nmae_sd", c.nmae.sd},
                          {"nmae_ci99", c.nmae.ci99},
                          {"chosen", c.chosen_counts}});
  }
  j["trials"] = nlohmann::json::array();
  for (const auto& t : trials) {
    nlohmann::json r{{"model", t.model},
                     {"method", to_string(t.method)},
                     {"size", t.size},
                     {"trial", t.trial},
                     {"data_seed", t.data_seed},
                     {"train_seed", t.train_seed},
                     {"ok", t.ok},
                     {"train_rows", t.train_rows},
                     {"val_rows", t.val_rows},
                     {"test_responses", t.test_responses}};
    if (t.ok) {
      r["nmae"] = t.test.to_json();
      r["val_nmae"] = t.val_nmae;
      r["chosen_index"] = t.chosen_index;
      r["chosen"] = t.chosen;
      r["epochs"] = t.epochs;
    } else {
      r["error"] = t.error;
    }
    if (!t.warnings.empty()) r["warnings"] = t.warnings;
    j["trials"].push_back(std::move(r));
  }
  return j;
}

std::string BenchmarkReport::cells_csv() const {
  std::ostringstream os;
  os << "model,method,size,trials,failed,nmae_mean,nmae_sd,nmae_ci99\n";
  for (const auto& c : cells) {
    os << c.model << ',' << to_string(c.method) << ',' << c.size << ',' << c.nmae.n << ',' << c.failed << ','
       << num(c.nmae.mean) << ',' << num(c.nmae.sd) << ',' << num(c.nmae.ci99) << '\n';
  }
  return os.str();
}

std::string BenchmarkReport::trials_csv() const {
  std::ostringstream os;
  os << "model,method,size,trial,data_seed,ok,nmae_mean,nmae_max,clipped,val_nmae,chosen_index,train_rows,"
        "test_responses\n";
  for (const auto& t : trials) {
    os << t.model << ',' << to_string(t.method) << ',' << t.size << ',' << t.trial << ',' << t.data_seed << ','
       << (t.ok ? 1 : 0) << ',';
    if (t.ok) {
      os << num(t.test.mean) << ',' << num(t.test.max) << ',' << t.test.clipped << ',' << num(t.val_nmae) << ','
         << t.chosen_index;
    } else {
      os << ",,,,";
    }
    os << ',' << t.train_rows << ',' << t.test_responses << '\n';
  }
  return os.str();
}

std::string BenchmarkReport::to_markdown() const {
  std::vector<std::pair<std::string, Index>> columns;
  std::vector<Method> methods;
  for (const auto& c : cells) {
    const std::pair<std::string, Index> key{c.model, c.size};
    if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
  }
  std::ostringstream os;
  os << "| Method |";
  for (const auto& [model, size] : columns) os << ' ' << model << " (N=" << size << ") |";
  os << "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
  os << '\n';
  for (Method m : methods) {
    os << "| " << to_string(m) << " |";
    for (const auto& [model, size] : columns) {
      const CellSummary* c = cell(model, m, size);
      os << ' ';
      if (c && c->nmae.n > 0) {
        os << num(c->nmae.mean, "%.1f") << "% ± " << num(c->nmae.ci99, "%.1f") << '%';
        if (c->failed > 0) os << " (" << c->failed << " failed)";
      } else {
        os << "n/a";
      }
      os << " |";
    }
    os << '\n';
  }
  return os.str();
}

nlohmann::json BenchmarkReport::timing_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cells) {
    j.push_back({{"model", c.model},
                 {"method", to_string(c.method)},
                 {"size", c.size},
                 {"mean_seconds", c.mean_seconds},
                 {"max_seconds", c.max_seconds}});
  }
  return j;
}

BenchmarkReport run_benchmark(const BenchmarkSpec& spec, const ProgressFn& progress) {
  spec.validate();
  BenchmarkReport report;
  report.spec = spec.to_json();

  std::vector<std::unique_ptr<models::ForwardModel>> forward;
  for (const auto& name : spec.models) forward.push_back(models::make_forward_model(name, spec.model_options));

  for (std::size_t mi = 0; mi < spec.models.size(); ++mi) {
    for (Index size : spec.sizes) {
      for (int t = 0; t < spec.trials; ++t) {
        for (Method method : spec.methods) {
          TrialRecord r;
          r.model = spec.models[mi];
          r.method = method;
          r.size = size;
          r.trial = t;
          r.data_seed = derive_seed(derive_seed(derive_seed(spec.seed, stable_hash(r.model)),
                                                static_cast<std::uint64_t>(size)),
                                    static_cast<std::uint64_t>(t));
          r.train_seed = derive_seed(r.data_seed, 100 + method_index(method));
          report.trials.push_back(std::move(r));
        }
      }
    }
  }

  std::mutex progress_mutex;
  parallel_for(report.trials.size(), spec.jobs, [&](std::size_t i) {
    TrialRecord& r = report.trials[i];
    const auto mi = static_cast<std::size_t>(
        std::find(spec.models.begin(), spec.models.end(), r.model) - spec.models.begin());
    const auto start = std::chrono::steady_clock::now();
    try {
      const std::unique_ptr<models::ForwardModel> model = forward[mi]->clone();
      const models::Dataset data =
          models::sample_dataset(*model, dataset_size_for(r.size, spec.split.train), r.data_seed);
      SplitSpec split = spec.split;
      split.seed = derive_seed(r.data_seed, 1);
      split.response_tolerance = spec.tolerance_for(r.model);
      const SplitResult s = split_by_response(data, split);
      r.train_rows = s.train.size();
      r.val_rows = s.val.size();
      r.test_responses = s.test_responses.rows();
      const models::Dataset& val = s.val.size() > 0 ? s.val : s.train;
      const Matrix& val_responses = s.val.size() > 0 ? s.val_responses : s.train.responses;
      GridSearchResult g = grid_search(r.method, spec.grid_for(r.method, r.model), s.train, val, val_responses,
                                       *model, r.train_seed);
      r.test = nmae(*g.trained.inverter, s.test_responses, *model);
      r.val_nmae = g.best_val_nmae;
      r.chosen_index = g.best_index;
      r.chosen = g.trained.config;
      r.warnings = std::move(g.warnings);
      for (const auto& log : g.trained.logs) r.epochs += static_cast<int>(log.epochs.size());
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(r);
    }
  });

  for (const auto& model : spec.models) {
    for (Index size : spec.sizes) {
      for (Method method : spec.methods) {
        const std::vector<std::string> keys = varying_keys(spec.grid_for(method, model));
        CellSummary c;
        c.model = model;
        c.method = method;
        c.size = size;
        std::vector<double> values;
        double total_seconds = 0.0;
        int count = 0;
        for (const auto& t : report.trials) {
          if (t.model != model || t.size != size || t.method != method) continue;
          ++count;
          total_seconds += t.seconds;
          c.max_seconds = std::max(c.max_seconds, t.seconds);
          if (!t.ok) {
            ++c.failed;
            continue;
          }
          values.push_back(t.test.mean);
          nlohmann::json chosen = nlohmann::json::object();
          for (const auto& k : keys) chosen[k] = t.chosen.at(k);
          ++c.chosen_counts[keys.empty() ? std::string("default") : chosen.dump()];
        }
        c.nmae = summarize(values);
        c.mean_seconds = count > 0 ? total_seconds / count : 0.0;
        report.cells.push_back(std::move(c));
      }
    }
  }
  return report;
}

}  // namespace pinv::eval
