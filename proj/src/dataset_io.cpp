// SPDX-License-Identifier: Apache-2.0

#include "ghnn/io.hpp"
#include "ghnn/systems.hpp"

#include <json.hpp>

#include <map>
#include <sstream>
#include <stdexcept>

namespace ghnn {

using nlohmann::json;

namespace {

std::vector<std::string> table_columns(int d) {
  std::vector<std::string> cols{"traj_id", "t"};
  for (int i = 0; i < d; ++i) cols.push_back("r" + std::to_string(i));
  for (int i = 0; i < d; ++i) cols.push_back("rdot" + std::to_string(i));
  return cols;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

void write_dataset(const TrajectoryDataset& ds, const std::string& stem) {
  const int d = ds.dim();
  json manifest;
  manifest["format"] = "ghnn-dataset";
  manifest["version"] = 1;
  manifest["system"] = to_string(ds.system.kind);
  manifest["parameters"] = ds.system.params;
  manifest["dt"] = ds.options.dt;
  manifest["t_span"] = ds.options.t_span;
  manifest["sigma"] = ds.options.sigma;
  manifest["seed"] = ds.options.seed;
  manifest["substeps"] = ds.options.substeps;
  manifest["derivatives"] = to_string(ds.options.derivatives);
  manifest["n_traj"] = ds.trajectories.size();
  manifest["canonical"] = ds.canonical;
  manifest["coordinates"] = ds.columns;
  manifest["columns"] = table_columns(d);
  json ics = json::array();
  for (const auto& tr : ds.trajectories) {
    ics.push_back(std::vector<double>(tr.initial.data(), tr.initial.data() + tr.initial.size()));
  }
  manifest["initial_conditions"] = ics;

  std::string table;
  const auto cols = table_columns(d);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) table += ',';
    table += cols[i];
  }
  table += '\n';
  for (const auto& tr : ds.trajectories) {
    for (Eigen::Index k = 0; k < tr.states.cols(); ++k) {
      table += std::to_string(tr.id);
      table += ',';
      table += io::format_double(tr.times[static_cast<std::size_t>(k)]);
      for (int i = 0; i < d; ++i) {
        table += ',';
        table += io::format_double(tr.states(i, k));
      }
      for (int i = 0; i < d; ++i) {
        table += ',';
        table += io::format_double(tr.derivatives(i, k));
      }
      table += '\n';
    }
  }
  io::atomic_write(stem + ".manifest.json", manifest.dump(2) + "\n");
  io::atomic_write(stem + ".csv", table);
}

TrajectoryDataset read_dataset(const std::string& stem) {
  const json manifest = json::parse(io::read_file(stem + ".manifest.json"));
  if (manifest.value("format", "") != "ghnn-dataset") {
    throw std::runtime_error(stem + ".manifest.json: not a dataset manifest");
  }
  TrajectoryDataset ds;
  ds.system.kind = system_kind_from_string(manifest.at("system").get<std::string>());
  ds.system.params = manifest.at("parameters").get<std::map<std::string, double>>();
  ds.system.validate();
  ds.options.dt = manifest.at("dt").get<double>();
  ds.options.t_span = manifest.at("t_span").get<double>();
  ds.options.sigma = manifest.at("sigma").get<double>();
  ds.options.seed = manifest.at("seed").get<std::uint64_t>();
  ds.options.substeps = manifest.at("substeps").get<int>();
  ds.options.derivatives = derivative_mode_from_string(manifest.at("derivatives").get<std::string>());
  ds.options.n_traj = manifest.at("n_traj").get<int>();
  ds.canonical = manifest.value("canonical", false);
  ds.columns = manifest.at("coordinates").get<std::vector<std::string>>();

  const int d = ds.dim();
  const auto expected = table_columns(d);
  std::istringstream table(io::read_file(stem + ".csv"));
  std::string line;
  if (!std::getline(table, line) || split(line, ',') != expected) {
    throw std::runtime_error(stem + ".csv: unexpected header");
  }

  std::map<int, std::vector<std::vector<double>>> rows;
  std::size_t lineno = 1;
  while (std::getline(table, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != expected.size()) {
      throw std::runtime_error(stem + ".csv:" + std::to_string(lineno) + ": wrong field count");
    }
    std::vector<double> values;
    for (std::size_t i = 1; i < fields.size(); ++i) values.push_back(io::parse_double(fields[i]));
    rows[std::stoi(fields[0])].push_back(std::move(values));
  }

  const auto ics = manifest.at("initial_conditions").get<std::vector<std::vector<double>>>();
  for (auto& [id, samples] : rows) {
    Trajectory tr;
    tr.id = id;
    const auto k = static_cast<Eigen::Index>(samples.size());
    tr.states.resize(d, k);
    tr.derivatives.resize(d, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& v = samples[static_cast<std::size_t>(j)];
      tr.times.push_back(v[0]);
      for (int i = 0; i < d; ++i) {
        tr.states(i, j) = v[static_cast<std::size_t>(1 + i)];
        tr.derivatives(i, j) = v[static_cast<std::size_t>(1 + d + i)];
      }
    }
    if (id >= 0 && static_cast<std::size_t>(id) < ics.size()) {
      tr.initial = Eigen::Map<const Vector>(ics[static_cast<std::size_t>(id)].data(), d);
    } else {
      tr.initial = tr.states.col(0);
    }
    ds.trajectories.push_back(std::move(tr));
  }
  if (static_cast<int>(ds.trajectories.size()) != ds.options.n_traj) {
    throw std::runtime_error(stem + ": manifest lists " + std::to_string(ds.options.n_traj) +
                             " trajectories, table has " + std::to_string(ds.trajectories.size()));
  }
  return ds;
}

}  // namespace ghnn
