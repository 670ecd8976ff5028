#include "pinv/eval/methods.hpp"

#include "pinv/baselines/maf.hpp"
#include "pinv/baselines/mdn.hpp"
#include "pinv/baselines/naive_inversion.hpp"
#include "pinv/pathfinder/pathfinder.hpp"

#include <fstream>
#include <sstream>

namespace pinv::eval {
namespace {

bool is_surrogate(const std::string& model_name) { return model_name == "surrogate"; }

double toy_beta(const std::string& model_name) {
  if (model_name == "bump") return 0.01;
  if (model_name == "quartic") return 5e-5;
  return 1e-4;
}

// The same schedule for every method on a given forward model.
TrainingSchedule schedule_for(const std::string& model_name) {
  TrainingSchedule s;
  if (is_surrogate(model_name)) {
    s.min_epochs = 100;
    s.max_epochs = 1000;
  }
  return s;
}

nlohmann::json parse_config(Method method, const nlohmann::json& j) {
  switch (method) {
    case Method::Pathfinder: return PathfinderConfig::from_json(j).to_json();
    case Method::NaiveInversion: return NIConfig::from_json(j).to_json();
    case Method::MDN: return MDNConfig::from_json(j).to_json();
    case Method::MAF: return MAFConfig::from_json(j).to_json();
  }
  throw ConfigError("unknown method");
}

}  // namespace

nlohmann::json default_method_config(Method method, const std::string& model_name) {
  const int hidden = is_surrogate(model_name) ? 100 : 10;
  const TrainingSchedule schedule = schedule_for(model_name);
  switch (method) {
    case Method::Pathfinder: {
      PathfinderConfig c;
      c.beta = is_surrogate(model_name) ? 0.01 : toy_beta(model_name);
      c.hidden_units = hidden;
      c.schedule = schedule;
      return c.to_json();
    }
    case Method::NaiveInversion: {
      NIConfig c;
      c.hidden_units = hidden;
      c.schedule = schedule;
      return c.to_json();
    }
    case Method::MDN: {
      MDNConfig c;
      c.components = default_mdn_components(model_name);
      c.hidden_units = hidden;
      c.schedule = schedule;
      return c.to_json();
    }
    case Method::MAF: {
      MAFConfig c;
      c.hidden_units = hidden;
      c.schedule = schedule;
      return c.to_json();
    }
  }
  throw ConfigError("unknown method");
}

std::vector<nlohmann::json> default_method_grid(Method method, const std::string& model_name) {
  const nlohmann::json base = default_method_config(method, model_name);
  if (method == Method::Pathfinder && is_surrogate(model_name)) {
    std::vector<nlohmann::json> grid;
    for (double beta : {0.1, 0.01, 0.001}) {
      nlohmann::json c = base;
      c["beta"] = beta;
      grid.push_back(std::move(c));
    }
    return grid;
  }
  return {base};
}

nlohmann::json resolve_method_config(Method method, const std::string& model_name, const nlohmann::json& overrides) {
  if (!overrides.is_null() && !overrides.is_object()) {
    throw ConfigError(to_string(method) + " config must be an object");
  }
  nlohmann::json j = default_method_config(method, model_name);
  if (overrides.is_object()) j.update(overrides);
  return parse_config(method, j);
}

TrainedInverter train_method(Method method, const nlohmann::json& config, const models::Dataset& train,
                             const models::Dataset& val, const models::ForwardModel& model, std::uint64_t seed) {
  TrainedInverter out;
  out.config = parse_config(method, config);
  switch (method) {
    case Method::Pathfinder: {
      auto r = train_pathfinder(train, PathfinderConfig::from_json(config), val, seed);
      out.logs.push_back(std::move(r.log));
      out.inverter = std::make_unique<PathfinderModel>(std::move(r.model));
      break;
    }
    case Method::NaiveInversion: {
      const NIConfig cfg = NIConfig::from_json(config);
      auto r = train_ni(train, cfg, val, seed, cfg.oracle_forward ? &model : nullptr);
      out.logs.push_back(std::move(r.forward_log));
      out.logs.push_back(std::move(r.inverse_log));
      out.inverter = std::make_unique<NIModel>(std::move(r.model));
      break;
    }
    case Method::MDN: {
      auto r = train_mdn(train, MDNConfig::from_json(config), val, seed);
      out.logs.push_back(std::move(r.log));
      out.inverter = std::make_unique<MDNModel>(std::move(r.model));
      break;
    }
    case Method::MAF: {
      auto r = train_maf(train, MAFConfig::from_json(config), val, model.domain(), seed);
      out.logs.push_back(std::move(r.log));
      out.inverter = std::make_unique<MAFModel>(std::move(r.model));
      break;
    }
  }
  return out;
}

nlohmann::json save_inverter(const Inverter& inverter, const std::string& forward_model,
                             const nlohmann::json& config) {
  return {{"format", "pinv-model"},
          {"version", 1},
          {"method", to_string(inverter.method())},
          {"forward_model", forward_model},
          {"config", config},
          {"model", inverter.to_json()}};
}

LoadedInverter load_inverter(const nlohmann::json& envelope) {
  LoadedInverter out;
  try {
    if (envelope.at("format").get<std::string>() != "pinv-model") throw IoError("not a pinv model file");
    if (envelope.at("version").get<int>() != 1) throw IoError("unsupported model file version");
    const Method method = method_from_string(envelope.at("method").get<std::string>());
    out.forward_model = envelope.at("forward_model").get<std::string>();
    out.config = envelope.at("config");
    const nlohmann::json& m = envelope.at("model");
    switch (method) {
      case Method::Pathfinder: out.inverter = std::make_unique<PathfinderModel>(PathfinderModel::from_json(m)); break;
      case Method::NaiveInversion: out.inverter = std::make_unique<NIModel>(NIModel::from_json(m)); break;
      case Method::MDN: out.inverter = std::make_unique<MDNModel>(MDNModel::from_json(m)); break;
      case Method::MAF: out.inverter = std::make_unique<MAFModel>(MAFModel::from_json(m)); break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  }
  return out;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace pinv::eval
