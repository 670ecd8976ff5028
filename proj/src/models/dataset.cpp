#include "pinv/models/dataset.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace pinv::models {

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.model_name = model_name;
  out.seed = seed;
  out.noise_sigma = noise_sigma;
  out.thetas.resize(static_cast<Index>(rows.size()), theta_dim());
  out.responses.resize(static_cast<Index>(rows.size()), response_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.thetas.row(static_cast<Index>(i)) = thetas.row(rows[i]);
    out.responses.row(static_cast<Index>(i)) = responses.row(rows[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (thetas.rows() != responses.rows()) throw DimensionError("dataset: theta and response row counts differ");
  require_finite(thetas, "dataset thetas");
  require_finite(responses, "dataset responses");
}

Dataset sample_dataset(const ForwardModel& model, Index n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("dataset size must be at least 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.model_name = model.name();
  d.seed = seed;
  d.noise_sigma = model.noise_sigma();
  d.thetas.resize(n, model.theta_dim());
  d.responses.resize(n, model.response_dim());
  for (Index i = 0; i < n; ++i) {
    const Vector theta = model.domain().sample(rng);
    Vector r = model.eval_unchecked(theta);
    if (model.noise_sigma() > 0.0) {
      for (Index j = 0; j < r.size(); ++j) r(j) += model.noise_sigma() * noise(rng);
    }
    d.thetas.row(i) = theta.transpose();
    d.responses.row(i) = r.transpose();
  }
  return d;
}

std::string sidecar_path(const std::string& csv_path) {
  std::filesystem::path p(csv_path);
  p.replace_extension(".json");
  return p.string();
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw IoError(path + ":" + std::to_string(line_no) + ": cannot parse number '" + cell + "'");
  }
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                    " fields, got " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, path, line_no));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw IoError(path + ": empty file");
  return t;
}

}  // namespace

void write_dataset(const Dataset& data, const std::string& csv_path, const Domain* domain) {
  data.validate();
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + csv_path);
  for (Index j = 0; j < data.theta_dim(); ++j) out << (j ? "," : "") << "theta_" << j;
  for (Index j = 0; j < data.response_dim(); ++j) out << "," << "r_" << j;
  out << "\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.theta_dim(); ++j) out << (j ? "," : "") << format_double(data.thetas(i, j));
    for (Index j = 0; j < data.response_dim(); ++j) out << "," << format_double(data.responses(i, j));
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + csv_path);

  nlohmann::json side{{"format", "pinv-dataset"},
                      {"version", 1},
                      {"model", data.model_name},
                      {"seed", data.seed},
                      {"noise_sigma", data.noise_sigma},
                      {"rows", data.size()},
                      {"theta_dim", data.theta_dim()},
                      {"response_dim", data.response_dim()}};
  if (domain) side["domain"] = domain->to_json();
  std::ofstream js(sidecar_path(csv_path), std::ios::binary);
  if (!js) throw IoError("cannot write " + sidecar_path(csv_path));
  js << side.dump(2) << "\n";
}

Dataset read_dataset(const std::string& csv_path) {
  Table t = read_table(csv_path);
  Index n_theta = 0, n_r = 0;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const std::string& h = t.header[j];
    if (h.rfind("theta_", 0) == 0 && n_r == 0) {
      ++n_theta;
    } else if (h.rfind("r_", 0) == 0) {
      ++n_r;
    } else {
      throw IoError(csv_path + ":1: unexpected column '" + h + "'");
    }
  }
  if (n_theta == 0 || n_r == 0) throw IoError(csv_path + ":1: need theta_* and r_* columns");
  Dataset d;
  d.thetas.resize(static_cast<Index>(t.rows.size()), n_theta);
  d.responses.resize(static_cast<Index>(t.rows.size()), n_r);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (Index j = 0; j < n_theta; ++j) d.thetas(static_cast<Index>(i), j) = t.rows[i][static_cast<std::size_t>(j)];
    for (Index j = 0; j < n_r; ++j) {
      d.responses(static_cast<Index>(i), j) = t.rows[i][static_cast<std::size_t>(n_theta + j)];
    }
  }
  const std::string side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      nlohmann::json j;
      in >> j;
      d.model_name = j.value("model", "");
      d.seed = j.value("seed", std::uint64_t{0});
      d.noise_sigma = j.value("noise_sigma", 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("cannot parse " + side + ": " + e.what());
    }
  }
  d.validate();
  return d;
}

Matrix read_responses(const std::string& csv_path) {
  Table t = read_table(csv_path);
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j].rfind("r_", 0) == 0) cols.push_back(j);
  }
  if (cols.empty()) throw IoError(csv_path + ":1: no r_* columns");
  Matrix out(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) out(static_cast<Index>(i), static_cast<Index>(k)) = t.rows[i][cols[k]];
  }
  return out;
}

}  // namespace pinv::models
