// SPDX-License-Identifier: Apache-2.0
//
// ghnn: command-line driver for generation, training, forecasting and evaluation.
//
// Exit codes: 0 success, 1 unexpected error, 2 invalid configuration,
// 3 domain error during generation, 4 no surviving training runs,
// 5 every forecast diverged.

#include "ghnn/experiment.hpp"
#include "ghnn/io.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using nlohmann::json;

namespace {

// Command-line values that override fields of the loaded config.
struct Overrides {
  std::string config;
  std::optional<std::string> name, system, output, optimizer;
  std::optional<int> n_traj, batch_size, steps, restarts, n_ics, log_every;
  std::optional<double> dt, t_span, sigma, lr, horizon, step, clip;
  std::optional<std::uint64_t> seed, train_seed, ic_seed;
  std::optional<bool> canonical;
  std::vector<std::string> models;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", config, "Experiment config (JSON)");
    app.add_option("--name", name, "name");
    app.add_option("--system", system, "system.kind");
    app.add_option("--n-traj", n_traj, "dataset.n_traj");
    app.add_option("--dt", dt, "dataset.dt");
    app.add_option("--t-span", t_span, "dataset.t_span");
    app.add_option("--sigma", sigma, "dataset.sigma");
    app.add_option("--seed", seed, "dataset.seed");
    app.add_option("--canonical", canonical, "canonical (true/false)");
    app.add_option("--models", models, "models")->delimiter(',');
    app.add_option("--optimizer", optimizer, "train.optimizer");
    app.add_option("--lr", lr, "train.learning_rate");
    app.add_option("--batch-size", batch_size, "train.batch_size");
    app.add_option("--steps", steps, "train.steps");
    app.add_option("--train-seed", train_seed, "train.seed");
    app.add_option("--restarts", restarts, "train.restarts");
    app.add_option("--clip", clip, "train.clip");
    app.add_option("--log-every", log_every, "train.log_every");
    app.add_option("--n-ics", n_ics, "forecast.n_ics");
    app.add_option("--ic-seed", ic_seed, "forecast.ic_seed");
    app.add_option("--horizon", horizon, "forecast.horizon");
    app.add_option("--step", step, "forecast.step");
    app.add_option("-o,--out", output, "output");
  }

  ghnn::ExperimentConfig resolve() const {
    json j = ghnn::to_json(ghnn::ExperimentConfig{});
    if (!config.empty()) {
      try {
        j = json::parse(ghnn::io::read_file(config));
      } catch (const std::exception& e) {
        throw ghnn::ConfigError("config", e.what());
      }
    }
    if (!j.is_object()) throw ghnn::ConfigError("config", "expected an object");
    auto set = [&](const char* section, const char* key, const auto& v) {
      if (!v) return;
      if (section) j[section][key] = *v;
      else j[key] = *v;
    };
    if (system) {
      j["system"] = {{"kind", *system}};
    }
    set(nullptr, "name", name);
    set("dataset", "n_traj", n_traj);
    set("dataset", "dt", dt);
    set("dataset", "t_span", t_span);
    set("dataset", "sigma", sigma);
    set("dataset", "seed", seed);
    set(nullptr, "canonical", canonical);
    if (!models.empty()) j["models"] = models;
    set("train", "optimizer", optimizer);
    set("train", "learning_rate", lr);
    set("train", "batch_size", batch_size);
    set("train", "steps", steps);
    set("train", "seed", train_seed);
    set("train", "restarts", restarts);
    set("train", "clip", clip);
    set("train", "log_every", log_every);
    set("forecast", "n_ics", n_ics);
    set("forecast", "ic_seed", ic_seed);
    set("forecast", "horizon", horizon);
    set("forecast", "step", step);
    set(nullptr, "output", output);
    return ghnn::config_from_json(j);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian neural network experiments"};
  app.require_subcommand(0, 1);
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "Print the config schema and exit");

  Overrides ov;
  auto* gen = app.add_subcommand("generate", "Generate the training dataset");
  auto* trn = app.add_subcommand("train", "Train the configured models with restarts");
  auto* fct = app.add_subcommand("forecast", "Forecast from one checkpoint or the true field");
  auto* evl = app.add_subcommand("evaluate", "Evaluate surviving restarts of the configured models");
  auto* plt = app.add_subcommand("plot", "Re-render plots from a stored report");
  auto* run = app.add_subcommand("run", "Generate, train, evaluate and compare");
  for (auto* sub : {gen, trn, fct, evl, run}) ov.attach(*sub);

  std::string dataset_stem;
  trn->add_option("--dataset", dataset_stem, "Dataset stem (default: the experiment's own)");
  std::string checkpoint;
  bool oracle = false;
  fct->add_option("--checkpoint", checkpoint, "Model checkpoint");
  fct->add_flag("--oracle", oracle, "Use the true vector field instead of a checkpoint");
  std::string report_path, plot_dir;
  int plot_restart = 0;
  plt->add_option("--report", report_path, "report.json to render")->required();
  plt->add_option("--plot-dir", plot_dir, "Output directory (default: beside the report)");
  plt->add_option("--restart", plot_restart, "Restart whose forecasts are drawn");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (print_schema) {
    std::cout << ghnn::config_schema().dump(2) << "\n";
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 2;
  }

  try {
    if (plt->parsed()) {
      const auto report = ghnn::evaluation_from_json(json::parse(ghnn::io::read_file(report_path)));
      std::string dir = plot_dir;
      if (dir.empty()) {
        const auto slash = report_path.find_last_of('/');
        dir = slash == std::string::npos ? "." : report_path.substr(0, slash);
      }
      ghnn::emit_plots(report, dir, plot_restart);
      std::cout << "plots -> " << dir << "\n";
      return 0;
    }

    const ghnn::ExperimentConfig config = ov.resolve();
    const ghnn::ExperimentPaths paths = ghnn::paths_for(config);

    if (gen->parsed()) {
      ghnn::save_config(config, paths.config());
      const auto s = ghnn::cmd_generate(config, std::cout);
      return s.conservation_ok ? 0 : 1;
    }
    if (trn->parsed()) {
      for (auto kind : config.models) ghnn::cmd_train(config, kind, std::cout, dataset_stem);
      return 0;
    }
    if (fct->parsed()) {
      if (!oracle && checkpoint.empty()) throw ghnn::ConfigError("checkpoint", "give --checkpoint or --oracle");
      ghnn::cmd_forecast(config, checkpoint, oracle, std::cout);
      return 0;
    }
    if (evl->parsed()) {
      std::vector<ghnn::ComparisonEntry> entries;
      for (auto kind : config.models) {
        entries.push_back({kind, ghnn::cmd_evaluate(config, kind, std::cout).summary});
      }
      if (entries.size() > 1) {
        const json cmp = ghnn::comparison_json(config, entries);
        ghnn::io::atomic_write(paths.comparison(), cmp.dump(2) + "\n");
        std::cout << "comparison -> " << paths.comparison() << "\n";
      }
      return 0;
    }
    if (run->parsed()) {
      ghnn::cmd_run(config, std::cout);
      return 0;
    }
  } catch (const ghnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ghnn::GenerationError& e) {
    std::cerr << "generation failed: " << e.what() << "\n";
    return 3;
  } catch (const ghnn::TrainingExhausted& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 4;
  } catch (const ghnn::ForecastDiverged& e) {
    std::cerr << "forecast failed: " << e.what() << "\n";
    return 5;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const ghnn::DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
