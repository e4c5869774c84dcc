// SPDX-License-Identifier: Apache-2.0
//
// Minibatch training and the multi-restart protocol with outlier rejection.

#pragma once

#include "ghnn/models.hpp"
#include "ghnn/systems.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghnn {

enum class Optimizer { SGD, Adam };

std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int steps = 20000;
  std::uint64_t seed = 0;
  int restarts = 1;
  double outlier_factor = 3.0;
  /// Global gradient-norm clip; unset disables clipping.
  std::optional<double> clip;
  int log_every = 100;
  GhnnOptions ghnn;

  /// Defaults with clipping at norm 10 enabled for HNN and GHNN.
  static TrainConfig defaults_for(ModelKind kind);
  void validate() const;
};

enum class RunStatus { Completed, NanAbort, SolverFailure };

std::string to_string(RunStatus s);
RunStatus run_status_from_string(const std::string& s);

struct LogEntry {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;  // seconds since the run started
};

struct TrainRun {
  Model model;
  std::uint64_t seed = 0;
  std::vector<LogEntry> history;
  RunStatus status = RunStatus::Completed;
  std::string failure;
  /// Loss over the whole training set with the final parameters.
  double final_loss = 0.0;
  int steps_done = 0;
  /// Largest norm of an applied parameter update.
  double max_update_norm = 0.0;
};

/// Training set as one column batch.
Batch training_batch(const TrajectoryDataset& dataset);

/// Loss over `data` evaluated in chunks.
double full_loss(const Model& model, const Batch& data, const GhnnOptions& options,
                 int chunk = 512);

TrainRun train(ModelKind kind, const TrajectoryDataset& dataset, const TrainConfig& config);
/// Trains from explicit starting parameters.
TrainRun train(Model initial, const Batch& data, const TrainConfig& config);

struct RestartRow {
  int index = 0;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Completed;
  double final_loss = 0.0;
  bool survivor = false;
  std::string cause;
};

struct RestartResult {
  std::size_t best = 0;  // index into runs
  std::vector<TrainRun> runs;
  std::vector<RestartRow> table;

  const TrainRun& best_run() const { return runs.at(best); }
  std::vector<const TrainRun*> survivors() const;
};

class TrainingExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Survivor flags: completed and final loss <= kappa * median(completed losses).
std::vector<bool> select_survivors(const std::vector<RunStatus>& status,
                                   const std::vector<double>& final_loss, double kappa);

RestartResult multi_restart(ModelKind kind, const TrajectoryDataset& dataset,
                            const TrainConfig& config);
/// Builds the table and picks the best run from already trained runs.
RestartResult collect_restarts(std::vector<TrainRun> runs, double kappa);

/// step,loss,grad_norm,wall_time
std::string training_log_csv(const TrainRun& run, bool include_wall_time = true);
/// index,seed,status,final_loss,survivor,cause
std::string run_table_csv(const RestartResult& result);

}  // namespace ghnn
