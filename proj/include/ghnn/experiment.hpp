// SPDX-License-Identifier: Apache-2.0
//
// Config-driven experiments: dataset generation, multi-restart training,
// forecasting, evaluation and plot emission. The command-line tool is a thin
// wrapper over these functions.

#pragma once

#include "ghnn/forecast.hpp"
#include "ghnn/training.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghnn {

/// Invalid configuration; the message starts with the dotted field name.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ForecastConfig {
  /// Explicit initial conditions in raw coordinates; otherwise sampled.
  std::optional<std::vector<Vector>> initial_conditions;
  int n_ics = 5;
  std::uint64_t ic_seed = 1000;
  double horizon = 20.0;
  double step = 0.01;
  double short_horizon = 5.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  SystemSpec system = SystemSpec::make(SystemKind::LotkaVolterra);
  DatasetOptions dataset;
  /// Train and forecast in canonical {log n1, log n2} (Lotka-Volterra only).
  bool canonical = false;
  std::vector<ModelKind> models{ModelKind::NN, ModelKind::HNN, ModelKind::GHNN};
  TrainConfig train;
  /// When true the clip is taken from TrainConfig::defaults_for(kind).
  bool clip_auto = true;
  ForecastConfig forecast;
  std::string output = "ghnn-out";

  void validate() const;
  TrainConfig train_config_for(ModelKind kind) const;
  /// Raw-coordinate forecast initial conditions.
  std::vector<Vector> forecast_initial_conditions() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Rejects unknown keys and invalid values with a ConfigError; missing keys
/// take their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);
nlohmann::json config_schema();

/// Environment variable naming the root for relative output directories.
inline constexpr const char* kOutputRootEnv = "GHNN_OUTPUT_ROOT";
std::string resolve_output_dir(const std::string& output);

/// Layout of an experiment directory.
struct ExperimentPaths {
  std::string root;
  std::string config() const { return root + "/config.json"; }
  std::string dataset_stem() const { return root + "/data/train"; }
  std::string model_dir(ModelKind kind) const;
  std::string checkpoint(ModelKind kind) const { return model_dir(kind) + "/best.model"; }
  std::string restart_checkpoint(ModelKind kind, int index) const;
  std::string run_table(ModelKind kind) const { return model_dir(kind) + "/run_table.csv"; }
  std::string training_log(ModelKind kind, int index) const;
  std::string report(const std::string& label) const;
  std::string comparison() const { return root + "/comparison.json"; }
};

ExperimentPaths paths_for(const ExperimentConfig& config);

struct GenerateSummary {
  std::string stem;
  int trajectories = 0;
  std::size_t samples = 0;
  /// Largest relative deviation of the conserved quantity over stored states.
  double max_conservation_error = 0.0;
  bool conservation_checked = false;  // only meaningful for noise-free data
  bool conservation_ok = false;
};

inline constexpr double kConservationTolerance = 1e-6;

/// Builds the training dataset in the configured coordinates.
TrajectoryDataset build_dataset(const ExperimentConfig& config);
GenerateSummary cmd_generate(const ExperimentConfig& config, std::ostream& log);

struct TrainSummary {
  ModelKind kind = ModelKind::NN;
  RestartResult result;
};

/// Runs the restart protocol and writes checkpoints, run table and logs.
/// `dataset_stem` empty means the experiment's own dataset.
TrainSummary cmd_train(const ExperimentConfig& config, ModelKind kind, std::ostream& log,
                       const std::string& dataset_stem = "");

/// Surviving restarts in run-table order with the best one first.
std::vector<Model> load_survivors(const ExperimentConfig& config, ModelKind kind);

/// Forecasts one checkpoint (or the true field when `checkpoint` is empty and
/// `oracle` is set) and writes its report and plots.
EvaluationReport cmd_forecast(const ExperimentConfig& config, const std::string& checkpoint,
                              bool oracle, std::ostream& log);

/// Forecasts every surviving restart of `kind` and writes report and plots.
EvaluationReport cmd_evaluate(const ExperimentConfig& config, ModelKind kind, std::ostream& log);

struct ComparisonEntry {
  ModelKind kind;
  EvaluationSummary summary;
};

/// Models ranked by median relative energy std, best first.
nlohmann::json comparison_json(const ExperimentConfig& config,
                               const std::vector<ComparisonEntry>& entries);

/// Full pipeline for all configured models: generate, train, evaluate, compare.
nlohmann::json cmd_run(const ExperimentConfig& config, std::ostream& log);

/// Writes phase.svg, energy.svg and series.csv beside the report.
void emit_plots(const EvaluationReport& report, const std::string& dir, int restart = 0);
std::string series_csv(const EvaluationReport& report);

}  // namespace ghnn
