// pinv: generate data, train and evaluate inverters, run benchmarks and
// diagnostics from JSON configs.
#include "pinv/eval/benchmark.hpp"
#include "pinv/eval/diagnostics.hpp"
#include "pinv/eval/methods.hpp"
#include "pinv/models/dataset.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

using namespace pinv;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 2, kDivergence = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

int default_jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = eval::read_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
  return j;
}

// Resolution order: defaults, then the config file, then flags.
json resolve(json defaults, const json& file, const json& flags, const std::vector<std::string>& allowed,
             const std::string& where) {
  require_known_keys(file, allowed, where);
  defaults.update(file);
  defaults.update(flags);
  return defaults;
}

void common_flags_json(const CommonFlags& f, json& flags) {
  if (!f.out.empty()) flags["out"] = f.out;
  if (f.seed) flags["seed"] = *f.seed;
  if (f.jobs) flags["jobs"] = *f.jobs;
}

std::filesystem::path prepare_out(const json& cfg) {
  const std::filesystem::path out = cfg.at("out").get<std::string>();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out)) throw IoError("cannot create output directory " + out.string());
  eval::write_json_file((out / "config.json").string(), cfg);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

template <typename T>
T get(const json& cfg, const std::string& key, const std::string& where) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": '" + key + "' is missing or has the wrong type");
  }
}

models::ModelOptions model_options(const json& cfg) {
  models::ModelOptions o;
  o.noise_multiplier = get<double>(cfg, "noise_multiplier", "model options");
  if (cfg.contains("noise_sigma") && !cfg.at("noise_sigma").is_null()) {
    o.noise_sigma = get<double>(cfg, "noise_sigma", "model options");
  }
  o.sphere_surface = get<bool>(cfg, "sphere_surface", "model options");
  o.surrogate_config = get<std::string>(cfg, "surrogate_config", "model options");
  return o;
}

const std::vector<std::string> kModelKeys{"model", "noise_multiplier", "noise_sigma", "sphere_surface",
                                          "surrogate_config"};

json model_defaults() {
  return {{"noise_multiplier", 1.0}, {"noise_sigma", nullptr}, {"sphere_surface", false}, {"surrogate_config", ""}};
}

std::vector<std::string> with(std::vector<std::string> keys, const std::vector<std::string>& more) {
  keys.insert(keys.end(), more.begin(), more.end());
  return keys;
}

// generate ------------------------------------------------------------------

struct GenerateFlags {
  CommonFlags common;
  std::string model;
  std::optional<long> n;
  std::optional<double> noise_multiplier;
  bool sphere = false;
};

int cmd_generate(const GenerateFlags& f) {
  json flags = json::object();
  common_flags_json(f.common, flags);
  if (!f.model.empty()) flags["model"] = f.model;
  if (f.n) flags["n"] = *f.n;
  if (f.noise_multiplier) flags["noise_multiplier"] = *f.noise_multiplier;
  if (f.sphere) flags["sphere_surface"] = true;
  json defaults = model_defaults();
  defaults.update({{"model", "cos"}, {"n", 20}, {"seed", 0}, {"out", "data"}});
  const json cfg = resolve(defaults, load_config(f.common.config), flags,
                           with(kModelKeys, {"n", "seed", "out", "jobs"}), "generate config");
  const auto model = models::make_forward_model(get<std::string>(cfg, "model", "generate"), model_options(cfg));
  const long n = get<long>(cfg, "n", "generate");
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  const auto data = models::sample_dataset(*model, n, get<std::uint64_t>(cfg, "seed", "generate"));
  const auto out = prepare_out(cfg);
  models::write_dataset(data, (out / "dataset.csv").string(), &model->domain());
  std::cout << "wrote " << (out / "dataset.csv").string() << " (" << n << " rows, " << model->theta_dim()
            << " theta + " << model->response_dim() << " response columns)\n";
  return kOk;
}

// train ---------------------------------------------------------------------

struct TrainFlags {
  CommonFlags common;
  std::string data;
  std::string method;
  std::string model;
};

int cmd_train(const TrainFlags& f) {
  json flags = json::object();
  common_flags_json(f.common, flags);
  if (!f.data.empty()) flags["data"] = f.data;
  if (!f.method.empty()) flags["method"] = f.method;
  if (!f.model.empty()) flags["model"] = f.model;
  json defaults = model_defaults();
  defaults.update({{"seed", 0}, {"out", "model"}, {"val_fraction", 0.15}, {"method_config", json::object()}});
  json cfg = resolve(defaults, load_config(f.common.config), flags,
                     with(kModelKeys, {"data", "method", "method_config", "val_fraction", "seed", "out", "jobs"}),
                     "train config");
  if (!cfg.contains("data")) throw ConfigError("train: no dataset given (--data)");
  if (!cfg.contains("method")) throw ConfigError("train: no method given (--method)");
  const Method method = method_from_string(get<std::string>(cfg, "method", "train"));

  const models::Dataset data = models::read_dataset(get<std::string>(cfg, "data", "train"));
  if (!cfg.contains("model")) {
    if (data.model_name.empty()) throw ConfigError("train: dataset has no sidecar; name the forward model (--model)");
    cfg["model"] = data.model_name;
  }
  const std::string model_name = get<std::string>(cfg, "model", "train");
  const auto model = models::make_forward_model(model_name, model_options(cfg));
  if (data.theta_dim() != model->theta_dim() || data.response_dim() != model->response_dim()) {
    throw ConfigError("train: dataset columns do not match forward model '" + model_name + "'");
  }
  cfg["method_config"] = eval::resolve_method_config(method, model_name, cfg.at("method_config"));

  const std::uint64_t seed = get<std::uint64_t>(cfg, "seed", "train");
  eval::SplitSpec split;
  split.val = get<double>(cfg, "val_fraction", "train");
  split.test = 0.0;
  split.train = 1.0 - split.val;
  split.seed = derive_seed(seed, 1);
  split.response_tolerance = model_name == "surrogate" ? 0.5 : 0.0;
  const eval::SplitResult s = eval::split_by_response(data, split);
  const models::Dataset& val = s.val.size() > 0 ? s.val : s.train;

  const auto out = prepare_out(cfg);
  eval::TrainedInverter trained;
  json log = json::array();
  try {
    trained = eval::train_method(method, cfg.at("method_config"), s.train, val, *model, derive_seed(seed, 2));
    for (const auto& l : trained.logs) log.push_back(l.to_json());
  } catch (const DivergenceError& e) {
    log.push_back({{"diverged", true}, {"epoch", e.epoch()}, {"error", e.what()}});
    eval::write_json_file((out / "training_log.json").string(), log);
    throw;
  }
  eval::write_json_file((out / "training_log.json").string(), log);
  eval::write_json_file((out / "model.json").string(), eval::save_inverter(*trained.inverter, model_name, trained.config));
  bool converged = true;
  for (const auto& l : trained.logs) converged = converged && l.converged;
  std::cout << to_string(method) << " trained on " << s.train.size() << " rows (" << s.val.size()
            << " validation); " << (converged ? "converged" : "stopped at max_epochs") << "\n";
  return kOk;
}

// eval ----------------------------------------------------------------------

struct EvalFlags {
  CommonFlags common;
  std::string model_file;
  std::string responses;
  std::string model;
  std::string method;
};

int cmd_eval(const EvalFlags& f) {
  json flags = json::object();
  common_flags_json(f.common, flags);
  if (!f.model_file.empty()) flags["model_file"] = f.model_file;
  if (!f.responses.empty()) flags["responses"] = f.responses;
  if (!f.model.empty()) flags["model"] = f.model;
  if (!f.method.empty()) flags["method"] = f.method;
  json defaults = model_defaults();
  defaults.update({{"out", "eval"}, {"seed", 0}, {"grid_points", 1000}});
  json cfg = resolve(defaults, load_config(f.common.config), flags,
                     with(kModelKeys, {"model_file", "responses", "method", "grid_points", "seed", "out", "jobs"}),
                     "eval config");
  if (!cfg.contains("model_file")) throw ConfigError("eval: no model file given (--model-file)");
  eval::LoadedInverter loaded = eval::load_inverter(eval::read_json_file(get<std::string>(cfg, "model_file", "eval")));
  if (cfg.contains("method") &&
      method_from_string(get<std::string>(cfg, "method", "eval")) != loaded.inverter->method()) {
    throw ConfigError("eval: model file holds " + to_string(loaded.inverter->method()) + ", not " +
                      get<std::string>(cfg, "method", "eval"));
  }
  if (!cfg.contains("model")) cfg["model"] = loaded.forward_model;
  const std::string model_name = get<std::string>(cfg, "model", "eval");
  if (model_name != loaded.forward_model) {
    throw ConfigError("eval: model file was trained for '" + loaded.forward_model + "', not '" + model_name + "'");
  }
  const auto model = models::make_forward_model(model_name, model_options(cfg));
  const Matrix desired = cfg.contains("responses")
                             ? models::read_responses(get<std::string>(cfg, "responses", "eval"))
                             : eval::response_grid(*model, get<long>(cfg, "grid_points", "eval"),
                                                   get<std::uint64_t>(cfg, "seed", "eval"));
  if (desired.cols() != model->response_dim()) throw ConfigError("eval: response columns do not match the model");
  const eval::NMAEResult r = eval::nmae(*loaded.inverter, desired, *model);
  const auto out = prepare_out(cfg);
  eval::write_json_file((out / "nmae.json").string(), r.to_json());
  for (std::size_t k = 0; k < r.per_dim.size(); ++k) std::cout << "NMAE r_" << k << ": " << r.per_dim[k] << "%\n";
  std::cout << "mean " << r.mean << "%, max " << r.max << "%, clipped " << r.clipped << " of " << r.count << "\n";
  return kOk;
}

// benchmark -----------------------------------------------------------------

json benchmark_preset(const std::string& preset) {
  json p = model_defaults();
  p.update({{"methods", {"PF", "NI", "MDN", "MAF"}},
            {"trials", 10},
            {"seed", 0},
            {"split", {{"train", 0.70}, {"val", 0.15}, {"test", 0.15}}},
            {"grids", json::object()},
            {"out", "benchmark"}});
  if (preset == "toy") {
    p["models"] = {"bump", "cos", "quartic"};
    p["sizes"] = {10, 20, 50};
  } else if (preset == "surrogate") {
    p["models"] = {"surrogate"};
    p["sizes"] = {50, 100, 250, 500, 1000};
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected toy or surrogate)");
  }
  return p;
}

struct BenchmarkFlags {
  CommonFlags common;
  std::string preset = "toy";
  std::optional<int> trials;
  std::vector<std::string> methods;
  std::vector<long> sizes;
  std::vector<std::string> models;
};

int cmd_benchmark(const BenchmarkFlags& f) {
  json flags = json::object();
  common_flags_json(f.common, flags);
  if (f.trials) flags["trials"] = *f.trials;
  if (!f.methods.empty()) flags["methods"] = f.methods;
  if (!f.sizes.empty()) flags["sizes"] = f.sizes;
  if (!f.models.empty()) flags["models"] = f.models;
  json defaults = benchmark_preset(f.preset);
  defaults["jobs"] = default_jobs();
  const json cfg = resolve(defaults, load_config(f.common.config), flags,
                           with(kModelKeys, {"models", "methods", "sizes", "trials", "seed", "split",
                                             "response_tolerance", "grids", "out", "jobs"}),
                           "benchmark config");

  eval::BenchmarkSpec spec;
  spec.models = get<std::vector<std::string>>(cfg, "models", "benchmark");
  for (const auto& m : get<std::vector<std::string>>(cfg, "methods", "benchmark")) {
    spec.methods.push_back(method_from_string(m));
  }
  spec.sizes = get<std::vector<Index>>(cfg, "sizes", "benchmark");
  spec.trials = get<int>(cfg, "trials", "benchmark");
  spec.seed = get<std::uint64_t>(cfg, "seed", "benchmark");
  spec.jobs = get<int>(cfg, "jobs", "benchmark");
  spec.model_options = model_options(cfg);
  spec.split = eval::SplitSpec::from_json(cfg.at("split"));
  if (cfg.contains("response_tolerance")) {
    spec.response_tolerance = get<double>(cfg, "response_tolerance", "benchmark");
  }
  const json& grids = cfg.at("grids");
  if (!grids.is_object()) throw ConfigError("benchmark: grids must map method names to lists of configs");
  for (const auto& [name, grid] : grids.items()) {
    if (!grid.is_array()) throw ConfigError("benchmark: grid for " + name + " must be a list");
    spec.grids[to_string(method_from_string(name))] = grid.get<std::vector<json>>();
  }
  spec.validate();

  json echo = cfg;
  echo["resolved"] = spec.to_json();
  const auto out = prepare_out(echo);
  const std::size_t total = spec.models.size() * spec.methods.size() * spec.sizes.size() *
                            static_cast<std::size_t>(spec.trials);
  std::size_t done = 0;
  const auto report = eval::run_benchmark(spec, [&](const eval::TrialRecord& r) {
    ++done;
    std::cerr << "[" << done << "/" << total << "] " << r.model << " " << to_string(r.method) << " N=" << r.size
              << " trial " << r.trial << ": " << (r.ok ? std::to_string(r.test.mean) + "%" : "failed: " + r.error)
              << "\n";
  });
  eval::write_json_file((out / "report.json").string(), report.to_json());
  write_text(out / "cells.csv", report.cells_csv());
  write_text(out / "trials.csv", report.trials_csv());
  write_text(out / "table.md", report.to_markdown());
  eval::write_json_file((out / "timing.json").string(), report.timing_json());
  std::cout << report.to_markdown();
  return kOk;
}

// diagnostics ---------------------------------------------------------------

json diagnostics_defaults() {
  std::vector<int> ni_seeds;
  for (int s = 1; s <= 30; ++s) ni_seeds.push_back(s);
  return {{"seed", 0},
          {"out", "diagnostics"},
          {"jobs", default_jobs()},
          {"run", {"beta_sweep", "bias", "ni"}},
          {"beta_sweep",
           {{"model", "cos"}, {"betas", {10.0, 1e-2, 1e-3, 1e-4, 1e-5}}, {"n", 500}, {"seeds", {1, 2, 3}}, {"pf", json::object()}}},
          {"bias", {{"ns", {60, 240, 960}}, {"bins", 6}, {"reps", 100000}}},
          {"ni", {{"model", "cos"}, {"sizes", {10, 20, 30, 40, 50}}, {"seeds", ni_seeds}, {"ni", json::object()}}}};
}

struct DiagnosticsFlags {
  CommonFlags common;
  std::vector<std::string> run;
};

int cmd_diagnostics(const DiagnosticsFlags& f) {
  json flags = json::object();
  common_flags_json(f.common, flags);
  if (!f.run.empty()) flags["run"] = f.run;
  const json file = load_config(f.common.config);
  json cfg = diagnostics_defaults();
  require_known_keys(file, {"seed", "out", "jobs", "run", "beta_sweep", "bias", "ni"}, "diagnostics config");
  for (const char* section : {"beta_sweep", "bias", "ni"}) {
    if (!file.contains(section)) continue;
    if (!file.at(section).is_object()) throw ConfigError(std::string("diagnostics: '") + section + "' must be an object");
    std::vector<std::string> keys;
    for (const auto& [k, v] : cfg.at(section).items()) keys.push_back(k);
    require_known_keys(file.at(section), keys, std::string("diagnostics ") + section);
    cfg[section].update(file.at(section));
  }
  for (const char* key : {"seed", "out", "jobs", "run"}) {
    if (file.contains(key)) cfg[key] = file.at(key);
  }
  cfg.update(flags);

  const int jobs = get<int>(cfg, "jobs", "diagnostics");
  const std::uint64_t seed = get<std::uint64_t>(cfg, "seed", "diagnostics");
  const auto run = get<std::vector<std::string>>(cfg, "run", "diagnostics");
  for (const auto& r : run) {
    if (r != "beta_sweep" && r != "bias" && r != "ni") throw ConfigError("diagnostics: unknown study '" + r + "'");
  }
  auto wants = [&](const std::string& name) { return std::find(run.begin(), run.end(), name) != run.end(); };
  auto seeds_of = [&](const json& section) {
    std::vector<std::uint64_t> out;
    for (auto s : get<std::vector<std::uint64_t>>(section, "seeds", "diagnostics")) out.push_back(derive_seed(seed, s));
    return out;
  };
  const auto out = prepare_out(cfg);

  if (wants("bias")) {
    const json& b = cfg.at("bias");
    const int bins = get<int>(b, "bins", "bias"), reps = get<int>(b, "reps", "bias");
    const auto curve = eval::maximization_bias_curve(get<std::vector<Index>>(b, "ns", "bias"), bins, reps, seed);
    write_text(out / "bias.csv", eval::bias_csv(curve, bins, reps, seed));
    std::cerr << "bias.csv written\n";
  }
  if (wants("beta_sweep")) {
    const json& t = cfg.at("beta_sweep");
    const auto model = models::make_forward_model(get<std::string>(t, "model", "beta_sweep"));
    const auto sweep = eval::beta_sweep(*model, get<std::vector<double>>(t, "betas", "beta_sweep"),
                                            get<Index>(t, "n", "beta_sweep"), seeds_of(t), t.at("pf"), jobs);
    write_text(out / "beta_sweep.csv", eval::sweep_csv(sweep));
    for (const auto& p : sweep) std::cout << "beta " << p.beta << ": median residual " << p.median << "\n";
  }
  if (wants("ni")) {
    const json& n = cfg.at("ni");
    const auto model = models::make_forward_model(get<std::string>(n, "model", "ni"));
    const auto points =
        eval::ni_diagnostic(*model, get<std::vector<Index>>(n, "sizes", "ni"), seeds_of(n), n.at("ni"), jobs);
    write_text(out / "ni_diagnostic.csv", eval::ni_diagnostic_csv(points));
    for (const auto& p : points) {
      std::cout << "NI N=" << p.size << ": estimated " << p.estimated_median << "%, oracle " << p.oracle_median
                << "%\n";
    }
  }
  return kOk;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--jobs", f.jobs, "parallel jobs")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pinv: pseudoinverse estimation for many-to-one forward mappings"};
  app.require_subcommand(1);

  GenerateFlags gen;
  auto* g = app.add_subcommand("generate", "sample a dataset from a forward model");
  add_common(g, gen.common);
  g->add_option("--model", gen.model, "cos, quartic, bump or surrogate");
  g->add_option("--n", gen.n, "number of samples");
  g->add_option("--noise-multiplier", gen.noise_multiplier, "scale of the model's default noise");
  g->add_flag("--sphere", gen.sphere, "surrogate: sample on the sphere instead of the ball");

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "train one estimator on a dataset CSV");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "dataset CSV");
  t->add_option("--method", tr.method, "PF, NI, MDN or MAF");
  t->add_option("--model", tr.model, "forward model (default: from the dataset sidecar)");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "NMAE of a saved model against the forward model");
  add_common(e, ev.common);
  e->add_option("--model-file", ev.model_file, "model.json from train");
  e->add_option("--responses", ev.responses, "CSV of desired responses (default: grid over the response range)");
  e->add_option("--model", ev.model, "forward model used as the oracle");
  e->add_option("--method", ev.method, "expected method of the model file");

  BenchmarkFlags bf;
  auto* b = app.add_subcommand("benchmark", "multi-trial comparison of the estimators");
  add_common(b, bf.common);
  b->add_option("--preset", bf.preset, "toy or surrogate")->capture_default_str();
  b->add_option("--trials", bf.trials, "trials per cell");
  b->add_option("--methods", bf.methods, "subset of PF NI MDN MAF");
  b->add_option("--sizes", bf.sizes, "training-set sizes");
  b->add_option("--models", bf.models, "forward models");

  DiagnosticsFlags df;
  auto* d = app.add_subcommand("diagnostics", "beta sweep, maximization-bias Monte Carlo and NI comparison");
  add_common(d, df.common);
  d->add_option("--run", df.run, "subset of beta_sweep bias ni");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_benchmark(bf);
    if (*d) return cmd_diagnostics(df);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const DivergenceError& err) {
    std::cerr << "diverged: " << err.what() << "\n";
    return kDivergence;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kDivergence;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  } catch (const DimensionError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const DomainError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kOk;
}
