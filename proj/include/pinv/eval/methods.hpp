// Uniform access to the four estimators: per-model default configurations,
// training from a JSON config, and the saved-model envelope.
#pragma once

#include "pinv/models/dataset.hpp"
#include "pinv/models/forward_model.hpp"
#include "pinv/training.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace pinv::eval {

/// Default hyperparameters of `method` for the named forward model, as the
/// method's JSON config.
nlohmann::json default_method_config(Method method, const std::string& model_name);

/// Default hyperparameter lattice (a list of configs) for grid search.
std::vector<nlohmann::json> default_method_grid(Method method, const std::string& model_name);

/// `overrides` merged key by key over the defaults, then validated strictly.
nlohmann::json resolve_method_config(Method method, const std::string& model_name, const nlohmann::json& overrides);

struct TrainedInverter {
  std::unique_ptr<Inverter> inverter;
  std::vector<TrainingLog> logs;
  nlohmann::json config;  // fully resolved
};

/// Trains one estimator. NI with oracle_forward and MAF (stimulus domain) use `model`.
TrainedInverter train_method(Method method, const nlohmann::json& config, const models::Dataset& train,
                             const models::Dataset& val, const models::ForwardModel& model, std::uint64_t seed);

/// {"format": "pinv-model", "version": 1, "method", "forward_model", "config", "model"}.
nlohmann::json save_inverter(const Inverter& inverter, const std::string& forward_model, const nlohmann::json& config);

struct LoadedInverter {
  std::unique_ptr<Inverter> inverter;
  std::string forward_model;
  nlohmann::json config;
};

LoadedInverter load_inverter(const nlohmann::json& envelope);
void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace pinv::eval
