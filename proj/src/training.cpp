// SPDX-License-Identifier: Apache-2.0

#include "ghnn/training.hpp"

#include "ghnn/io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace ghnn {

std::string to_string(Optimizer o) { return o == Optimizer::SGD ? "sgd" : "adam"; }

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::SGD;
  if (s == "adam") return Optimizer::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

TrainConfig TrainConfig::defaults_for(ModelKind kind) {
  TrainConfig c;
  if (kind != ModelKind::NN) c.clip = 10.0;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (restarts < 1) throw std::invalid_argument("restarts must be at least 1");
  if (!(outlier_factor > 1.0)) throw std::invalid_argument("outlier_factor must exceed 1");
  if (clip && !(*clip > 0.0)) throw std::invalid_argument("clip must be positive");
  if (log_every < 1) throw std::invalid_argument("log_every must be at least 1");
  ghnn.policy.validate();
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::NanAbort: return "nan-abort";
    case RunStatus::SolverFailure: return "solver-failure";
  }
  return "?";
}

RunStatus run_status_from_string(const std::string& s) {
  if (s == "completed") return RunStatus::Completed;
  if (s == "nan-abort") return RunStatus::NanAbort;
  if (s == "solver-failure") return RunStatus::SolverFailure;
  throw std::invalid_argument("unknown run status '" + s + "'");
}

Batch training_batch(const TrajectoryDataset& dataset) {
  return {dataset.all_states(), dataset.all_derivatives()};
}

double full_loss(const Model& model, const Batch& data, const GhnnOptions& options, int chunk) {
  const Eigen::Index n = data.inputs.cols();
  if (n == 0) throw std::invalid_argument("full_loss: empty data");
  double total = 0.0;
  Eigen::Index counted = 0;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, n - start);
    Batch part{data.inputs.middleCols(start, len), data.targets.middleCols(start, len)};
    ad::Tape tape;
    const BoundModel bound = bind(tape, model);
    int skipped = 0;
    const double l = model_loss(tape, bound, part, options, &skipped).scalar();
    total += l * static_cast<double>(len - skipped);
    counted += len - skipped;
  }
  return total / static_cast<double>(counted);
}

TrainRun train(ModelKind kind, const TrajectoryDataset& dataset, const TrainConfig& config) {
  config.validate();
  const Batch data = training_batch(dataset);
  if (data.inputs.cols() == 0) throw std::invalid_argument("train: empty dataset");
  if (kind != ModelKind::NN && dataset.dim() % 2 != 0) {
    throw std::invalid_argument("train: Hamiltonian models need an even dimension");
  }
  return train(create_model(kind, dataset.dim(), config.seed), data, config);
}

TrainRun train(Model initial, const Batch& data, const TrainConfig& config) {
  config.validate();
  initial.validate();
  if (data.inputs.rows() != initial.dim || data.targets.rows() != initial.dim) {
    throw std::invalid_argument("train: dataset dimension " + std::to_string(data.inputs.rows()) +
                                " does not match model dimension " + std::to_string(initial.dim));
  }
  const Eigen::Index n = data.inputs.cols();
  if (n == 0) throw std::invalid_argument("train: empty dataset");

  TrainRun run;
  run.seed = config.seed;
  run.model = std::move(initial);

  Vector params = run.model.flat();
  const Eigen::Index p = params.size();
  Vector m1 = Vector::Zero(p);
  Vector m2 = Vector::Zero(p);
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  std::mt19937_64 rng(config.seed ^ 0x5eedba7c4ULL);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n);
  Eigen::Index cursor = n;  // forces a shuffle on the first step
  Batch batch{Matrix(run.model.dim, bs), Matrix(run.model.dim, bs)};

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  for (int step = 0; step < config.steps; ++step) {
    if (bs == n) {
      batch.inputs = data.inputs;
      batch.targets = data.targets;
    } else {
      if (cursor + bs > n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      for (Eigen::Index k = 0; k < bs; ++k) {
        const int idx = order[static_cast<std::size_t>(cursor + k)];
        batch.inputs.col(k) = data.inputs.col(idx);
        batch.targets.col(k) = data.targets.col(idx);
      }
      cursor += bs;
    }

    LossAndGradient lg;
    try {
      lg = loss_and_gradient(run.model, batch, config.ghnn);
    } catch (const DomainError& e) {
      run.status = RunStatus::SolverFailure;
      run.failure = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    const double gnorm = lg.gradient.norm();
    if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
      run.status = RunStatus::NanAbort;
      run.failure = "step " + std::to_string(step) + ": non-finite loss or gradient";
      break;
    }
    if (step % config.log_every == 0 || step + 1 == config.steps) {
      run.history.push_back({step, lg.loss, gnorm, elapsed()});
    }

    Vector g = std::move(lg.gradient);
    if (config.clip && gnorm > *config.clip) g *= *config.clip / gnorm;

    Vector update;
    if (config.optimizer == Optimizer::SGD) {
      update = -config.learning_rate * g;
    } else {
      m1 = beta1 * m1 + (1.0 - beta1) * g;
      m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(beta1, step + 1);
      const double c2 = 1.0 - std::pow(beta2, step + 1);
      update = -config.learning_rate *
               ((m1 / c1).array() / ((m2 / c2).array().sqrt() + adam_eps)).matrix();
    }
    run.max_update_norm = std::max(run.max_update_norm, update.norm());
    params += update;
    run.model.set_flat(params);
    run.steps_done = step + 1;
  }

  if (run.status == RunStatus::Completed) {
    try {
      run.final_loss = full_loss(run.model, data, config.ghnn);
      if (!std::isfinite(run.final_loss)) {
        run.status = RunStatus::NanAbort;
        run.failure = "non-finite final loss";
      }
    } catch (const DomainError& e) {
      run.status = RunStatus::SolverFailure;
      run.failure = std::string("final evaluation: ") + e.what();
    }
  }
  if (run.status != RunStatus::Completed) {
    run.final_loss = std::numeric_limits<double>::quiet_NaN();
  }
  return run;
}

std::vector<const TrainRun*> RestartResult::survivors() const {
  std::vector<const TrainRun*> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (table[i].survivor) out.push_back(&runs[i]);
  }
  return out;
}

namespace {
double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace

std::vector<bool> select_survivors(const std::vector<RunStatus>& status,
                                   const std::vector<double>& final_loss, double kappa) {
  if (status.size() != final_loss.size()) throw std::invalid_argument("select_survivors: size mismatch");
  std::vector<double> completed;
  for (std::size_t i = 0; i < status.size(); ++i) {
    if (status[i] == RunStatus::Completed) completed.push_back(final_loss[i]);
  }
  std::vector<bool> keep(status.size(), false);
  if (completed.empty()) return keep;
  const double threshold = kappa * median(completed);
  for (std::size_t i = 0; i < status.size(); ++i) {
    keep[i] = status[i] == RunStatus::Completed && final_loss[i] <= threshold;
  }
  return keep;
}

RestartResult collect_restarts(std::vector<TrainRun> runs, double kappa) {
  RestartResult res;
  res.runs = std::move(runs);
  std::vector<RunStatus> status;
  std::vector<double> losses;
  for (const auto& r : res.runs) {
    status.push_back(r.status);
    losses.push_back(r.final_loss);
  }
  const auto keep = select_survivors(status, losses, kappa);
  std::string causes;
  bool any = false;
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    RestartRow row;
    row.index = static_cast<int>(i);
    row.seed = res.runs[i].seed;
    row.status = res.runs[i].status;
    row.final_loss = res.runs[i].final_loss;
    row.survivor = keep[i];
    if (row.status != RunStatus::Completed) {
      row.cause = res.runs[i].failure;
    } else if (!keep[i]) {
      row.cause = "outlier";
    }
    if (keep[i] && (!any || row.final_loss < res.runs[res.best].final_loss)) {
      res.best = i;
      any = true;
    }
    if (!keep[i]) {
      causes += "\n  run " + std::to_string(i) + " (seed " + std::to_string(row.seed) +
                "): " + to_string(row.status) + (row.cause.empty() ? "" : ", " + row.cause);
    }
    res.table.push_back(std::move(row));
  }
  if (!any) throw TrainingExhausted("no surviving training runs:" + causes);
  return res;
}

RestartResult multi_restart(ModelKind kind, const TrajectoryDataset& dataset,
                            const TrainConfig& config) {
  config.validate();
  std::vector<TrainRun> runs;
  for (int i = 0; i < config.restarts; ++i) {
    TrainConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(i);
    runs.push_back(train(kind, dataset, c));
  }
  return collect_restarts(std::move(runs), config.outlier_factor);
}

std::string training_log_csv(const TrainRun& run, bool include_wall_time) {
  std::string out = include_wall_time ? "step,loss,grad_norm,wall_time\n" : "step,loss,grad_norm\n";
  for (const auto& e : run.history) {
    out += std::to_string(e.step) + "," + io::format_double(e.loss) + "," +
           io::format_double(e.grad_norm);
    if (include_wall_time) out += "," + io::format_double(e.wall_time);
    out += "\n";
  }
  return out;
}

std::string run_table_csv(const RestartResult& result) {
  std::string out = "index,seed,status,final_loss,survivor,cause\n";
  for (const auto& r : result.table) {
    std::string cause = r.cause;
    std::replace(cause.begin(), cause.end(), ',', ';');
    std::replace(cause.begin(), cause.end(), '\n', ' ');
    out += std::to_string(r.index) + "," + std::to_string(r.seed) + "," + to_string(r.status) +
           "," + io::format_double(r.final_loss) + "," + (r.survivor ? "1" : "0") + "," + cause +
           "\n";
  }
  return out;
}

}  // namespace ghnn
