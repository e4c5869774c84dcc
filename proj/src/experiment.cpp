// SPDX-License-Identifier: Apache-2.0

#include "ghnn/experiment.hpp"

#include "ghnn/io.hpp"
#include "ghnn/svg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace ghnn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

json vectors_json(const std::vector<Vector>& vs) {
  json a = json::array();
  for (const auto& v : vs) a.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return a;
}

// Strict reader for one JSON object: typed getters plus unknown-key detection.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
        if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0) {
            throw ConfigError(field(key), "expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = v->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

std::vector<Vector> read_vectors(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of state vectors");
  std::vector<Vector> out;
  for (const auto& row : j) {
    if (!row.is_array()) throw ConfigError(field, "expected an array of state vectors");
    Vector v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (!row[i].is_number()) throw ConfigError(field, "state components must be numbers");
      v(static_cast<Eigen::Index>(i)) = row[i].get<double>();
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::string mode_name(JacobianInversePolicy::Mode m) {
  return m == JacobianInversePolicy::Mode::ExactSolve ? "exact" : "pseudo_inverse";
}

std::string failure_name(JacobianInversePolicy::OnFailure f) {
  return f == JacobianInversePolicy::OnFailure::Error ? "error" : "skip";
}

void check_vectors(const std::vector<Vector>& vs, int d, const std::string& field) {
  if (vs.empty()) throw ConfigError(field, "must not be empty");
  for (const auto& v : vs) {
    if (v.size() != d) {
      throw ConfigError(field, "expected states of dimension " + std::to_string(d));
    }
    if (!v.allFinite()) throw ConfigError(field, "states must be finite");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  try {
    system.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("system.parameters", e.what());
  }
  const int d = system.dim();
  const auto& ds = dataset;
  if (ds.initial_conditions) {
    check_vectors(*ds.initial_conditions, d, "dataset.initial_conditions");
  } else if (ds.n_traj < 1) {
    throw ConfigError("dataset.n_traj", "must be at least 1");
  }
  if (!(ds.dt > 0.0)) throw ConfigError("dataset.dt", "must be positive");
  if (!(ds.t_span >= 0.0)) throw ConfigError("dataset.t_span", "must be non-negative");
  if (!(ds.sigma >= 0.0)) throw ConfigError("dataset.sigma", "must be non-negative");
  if (ds.substeps < 1) throw ConfigError("dataset.substeps", "must be at least 1");
  if (ds.derivatives == DerivativeMode::FiniteDifference && std::llround(ds.t_span / ds.dt) < 2) {
    throw ConfigError("dataset.t_span", "finite differences need at least 3 samples per trajectory");
  }
  if (canonical && system.kind != SystemKind::LotkaVolterra) {
    throw ConfigError("canonical", "canonical coordinates are only provided for Lotka-Volterra");
  }
  if (models.empty()) throw ConfigError("models", "must list at least one model");
  for (std::size_t i = 0; i + 1 < models.size(); ++i) {
    for (std::size_t k = i + 1; k < models.size(); ++k) {
      if (models[i] == models[k]) throw ConfigError("models", "duplicate entry " + lower(to_string(models[i])));
    }
  }
  if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (train.batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (train.steps < 0) throw ConfigError("train.steps", "must be non-negative");
  if (train.restarts < 1) throw ConfigError("train.restarts", "must be at least 1");
  if (!(train.outlier_factor > 1.0)) throw ConfigError("train.outlier_factor", "must exceed 1");
  if (!clip_auto && train.clip && !(*train.clip > 0.0)) throw ConfigError("train.clip", "must be positive");
  if (train.log_every < 1) throw ConfigError("train.log_every", "must be at least 1");
  try {
    train.ghnn.policy.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train.jacobian.epsilon", e.what());
  }
  const auto& fc = forecast;
  if (fc.initial_conditions) {
    check_vectors(*fc.initial_conditions, d, "forecast.initial_conditions");
  } else if (fc.n_ics < 1) {
    throw ConfigError("forecast.n_ics", "must be at least 1");
  }
  if (!(fc.horizon > 0.0)) throw ConfigError("forecast.horizon", "must be positive");
  if (!(fc.step > 0.0)) throw ConfigError("forecast.step", "must be positive");
  if (!(fc.short_horizon >= 0.0)) throw ConfigError("forecast.short_horizon", "must be non-negative");
  if (output.empty()) throw ConfigError("output", "must not be empty");
}

TrainConfig ExperimentConfig::train_config_for(ModelKind kind) const {
  TrainConfig c = train;
  if (clip_auto) c.clip = TrainConfig::defaults_for(kind).clip;
  return c;
}

std::vector<Vector> ExperimentConfig::forecast_initial_conditions() const {
  if (forecast.initial_conditions) return *forecast.initial_conditions;
  return sample_initial_conditions(system, forecast.n_ics, forecast.ic_seed);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["system"] = {{"kind", to_string(c.system.kind)}, {"parameters", c.system.params}};
  const auto& d = c.dataset;
  j["dataset"] = {{"n_traj", d.n_traj},
                  {"t_span", d.t_span},
                  {"dt", d.dt},
                  {"sigma", d.sigma},
                  {"seed", d.seed},
                  {"derivatives", to_string(d.derivatives)},
                  {"substeps", d.substeps},
                  {"initial_conditions", d.initial_conditions ? vectors_json(*d.initial_conditions) : json(nullptr)}};
  j["canonical"] = c.canonical;
  json models = json::array();
  for (auto m : c.models) models.push_back(lower(to_string(m)));
  j["models"] = models;
  const auto& t = c.train;
  json clip = c.clip_auto ? json("auto") : (t.clip ? json(*t.clip) : json(nullptr));
  j["train"] = {{"optimizer", to_string(t.optimizer)},
                {"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"steps", t.steps},
                {"seed", t.seed},
                {"restarts", t.restarts},
                {"outlier_factor", t.outlier_factor},
                {"clip", clip},
                {"log_every", t.log_every},
                {"jacobian",
                 {{"mode", mode_name(t.ghnn.policy.mode)},
                  {"epsilon", t.ghnn.policy.epsilon},
                  {"on_failure", failure_name(t.ghnn.policy.on_failure)}}},
                {"detach_inverse", t.ghnn.detach_inverse}};
  const auto& f = c.forecast;
  j["forecast"] = {{"initial_conditions", f.initial_conditions ? vectors_json(*f.initial_conditions) : json(nullptr)},
                   {"n_ics", f.n_ics},
                   {"ic_seed", f.ic_seed},
                   {"horizon", f.horizon},
                   {"step", f.step},
                   {"short_horizon", f.short_horizon}};
  j["output"] = c.output;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader top(j, "");
  top.get("name", c.name);

  if (const json* s = top.find("system")) {
    ObjectReader r(*s, "system");
    std::string kind = to_string(c.system.kind);
    r.get("kind", kind);
    SystemKind k;
    try {
      k = system_kind_from_string(kind);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("system.kind", e.what());
    }
    std::map<std::string, double> overrides;
    if (const json* p = r.find("parameters")) {
      if (!p->is_object()) throw ConfigError("system.parameters", "expected an object");
      for (auto it = p->begin(); it != p->end(); ++it) {
        if (!it->is_number()) throw ConfigError("system.parameters." + it.key(), "expected a number");
        overrides[it.key()] = it->get<double>();
      }
    }
    try {
      c.system = SystemSpec::make(k, overrides);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("system.parameters", e.what());
    }
    r.finish();
  }

  if (const json* s = top.find("dataset")) {
    ObjectReader r(*s, "dataset");
    auto& d = c.dataset;
    r.get("n_traj", d.n_traj);
    r.get("t_span", d.t_span);
    r.get("dt", d.dt);
    r.get("sigma", d.sigma);
    r.get("seed", d.seed);
    std::string mode = to_string(d.derivatives);
    r.get("derivatives", mode);
    try {
      d.derivatives = derivative_mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("dataset.derivatives", e.what());
    }
    r.get("substeps", d.substeps);
    if (const json* ics = r.find("initial_conditions"); ics && !ics->is_null()) {
      d.initial_conditions = read_vectors(*ics, "dataset.initial_conditions");
      d.n_traj = static_cast<int>(d.initial_conditions->size());
    }
    r.finish();
  }

  top.get("canonical", c.canonical);

  if (const json* m = top.find("models")) {
    if (!m->is_array()) throw ConfigError("models", "expected an array of model kinds");
    c.models.clear();
    for (const auto& e : *m) {
      if (!e.is_string()) throw ConfigError("models", "expected model kind strings");
      try {
        c.models.push_back(model_kind_from_string(e.get<std::string>()));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError("models", ex.what());
      }
    }
  }

  if (const json* s = top.find("train")) {
    ObjectReader r(*s, "train");
    auto& t = c.train;
    std::string opt = to_string(t.optimizer);
    r.get("optimizer", opt);
    try {
      t.optimizer = optimizer_from_string(opt);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("train.optimizer", e.what());
    }
    r.get("learning_rate", t.learning_rate);
    r.get("batch_size", t.batch_size);
    r.get("steps", t.steps);
    r.get("seed", t.seed);
    r.get("restarts", t.restarts);
    r.get("outlier_factor", t.outlier_factor);
    if (const json* clip = r.find("clip")) {
      if (clip->is_string()) {
        if (clip->get<std::string>() != "auto") throw ConfigError("train.clip", "expected a number, null or \"auto\"");
        c.clip_auto = true;
      } else if (clip->is_null()) {
        c.clip_auto = false;
        t.clip.reset();
      } else if (clip->is_number()) {
        c.clip_auto = false;
        t.clip = clip->get<double>();
      } else {
        throw ConfigError("train.clip", "expected a number, null or \"auto\"");
      }
    }
    r.get("log_every", t.log_every);
    if (const json* jac = r.find("jacobian")) {
      ObjectReader jr(*jac, "train.jacobian");
      auto& p = t.ghnn.policy;
      std::string mode = mode_name(p.mode), fail = failure_name(p.on_failure);
      jr.get("mode", mode);
      jr.get("epsilon", p.epsilon);
      jr.get("on_failure", fail);
      if (mode == "exact") p.mode = JacobianInversePolicy::Mode::ExactSolve;
      else if (mode == "pseudo_inverse" || mode == "pinv") p.mode = JacobianInversePolicy::Mode::PseudoInverse;
      else throw ConfigError("train.jacobian.mode", "expected \"exact\" or \"pseudo_inverse\"");
      if (fail == "error") p.on_failure = JacobianInversePolicy::OnFailure::Error;
      else if (fail == "skip") p.on_failure = JacobianInversePolicy::OnFailure::SkipSample;
      else throw ConfigError("train.jacobian.on_failure", "expected \"error\" or \"skip\"");
      jr.finish();
    }
    r.get("detach_inverse", t.ghnn.detach_inverse);
    r.finish();
  }

  if (const json* s = top.find("forecast")) {
    ObjectReader r(*s, "forecast");
    auto& f = c.forecast;
    if (const json* ics = r.find("initial_conditions"); ics && !ics->is_null()) {
      f.initial_conditions = read_vectors(*ics, "forecast.initial_conditions");
      f.n_ics = static_cast<int>(f.initial_conditions->size());
    }
    r.get("n_ics", f.n_ics);
    r.get("ic_seed", f.ic_seed);
    r.get("horizon", f.horizon);
    r.get("step", f.step);
    r.get("short_horizon", f.short_horizon);
    r.finish();
  }

  top.get("output", c.output);
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("cannot parse ") + path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError("config", e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  io::atomic_write(path, to_json(config).dump(2) + "\n");
}

namespace {

json describe(const char* type, const char* what, json def) {
  return {{"type", type}, {"description", what}, {"default", std::move(def)}};
}

}  // namespace

json config_schema() {
  const json d = to_json(ExperimentConfig{});
  json s;
  s["description"] = "Experiment configuration. Missing fields take their defaults; unknown fields are rejected.";
  s["fields"] = {
      {"name", describe("string", "Experiment label", d["name"])},
      {"system.kind", describe("string", "lotka_volterra | elastic_pendulum | double_pendulum", d["system"]["kind"])},
      {"system.parameters", describe("object", "Overrides of the system parameters (LV: alpha beta gamma delta; EP: m g l0 k; DP: m1 m2 l1 l2 g)", d["system"]["parameters"])},
      {"dataset.n_traj", describe("integer", "Number of training trajectories", d["dataset"]["n_traj"])},
      {"dataset.t_span", describe("number", "Length of each trajectory", d["dataset"]["t_span"])},
      {"dataset.dt", describe("number", "Sampling interval", d["dataset"]["dt"])},
      {"dataset.sigma", describe("number", "Std of additive Gaussian noise on states and targets", d["dataset"]["sigma"])},
      {"dataset.seed", describe("integer", "Seed for initial conditions and noise", d["dataset"]["seed"])},
      {"dataset.derivatives", describe("string", "exact | finite_difference", d["dataset"]["derivatives"])},
      {"dataset.substeps", describe("integer", "RK4 substeps per sampling interval", d["dataset"]["substeps"])},
      {"dataset.initial_conditions", describe("array|null", "Explicit initial states; replaces sampling", nullptr)},
      {"canonical", describe("boolean", "Use {log n1, log n2} coordinates (Lotka-Volterra only)", d["canonical"])},
      {"models", describe("array", "Models to train and compare: nn, hnn, ghnn", d["models"])},
      {"train.optimizer", describe("string", "adam | sgd", d["train"]["optimizer"])},
      {"train.learning_rate", describe("number", "Step size", d["train"]["learning_rate"])},
      {"train.batch_size", describe("integer", "Minibatch size; the full set when larger than it", d["train"]["batch_size"])},
      {"train.steps", describe("integer", "Optimizer steps per restart", d["train"]["steps"])},
      {"train.seed", describe("integer", "Base seed; restart i uses seed + i", d["train"]["seed"])},
      {"train.restarts", describe("integer", "Independent restarts", d["train"]["restarts"])},
      {"train.outlier_factor", describe("number", "Runs above factor x median final loss are discarded", d["train"]["outlier_factor"])},
      {"train.clip", describe("number|null|\"auto\"", "Gradient-norm clip; auto = 10 for hnn/ghnn, off for nn", d["train"]["clip"])},
      {"train.log_every", describe("integer", "Logging interval in steps", d["train"]["log_every"])},
      {"train.jacobian.mode", describe("string", "exact | pseudo_inverse", d["train"]["jacobian"]["mode"])},
      {"train.jacobian.epsilon", describe("number", "Condition / truncation threshold, in [0, 1e-3)", d["train"]["jacobian"]["epsilon"])},
      {"train.jacobian.on_failure", describe("string", "skip | error for samples with unusable Jacobians", d["train"]["jacobian"]["on_failure"])},
      {"train.detach_inverse", describe("boolean", "Treat the transform Jacobian as constant in the weight gradient", d["train"]["detach_inverse"])},
      {"forecast.initial_conditions", describe("array|null", "Explicit raw-coordinate states; replaces sampling", nullptr)},
      {"forecast.n_ics", describe("integer", "Number of sampled forecast initial conditions", d["forecast"]["n_ics"])},
      {"forecast.ic_seed", describe("integer", "Seed for forecast initial conditions", d["forecast"]["ic_seed"])},
      {"forecast.horizon", describe("number", "Forecast horizon T", d["forecast"]["horizon"])},
      {"forecast.step", describe("number", "RK4 step h", d["forecast"]["step"])},
      {"forecast.short_horizon", describe("number", "Horizon of the short-time trajectory error", d["forecast"]["short_horizon"])},
      {"output", describe("string", std::string(std::string("Output directory; relative paths are placed under $") + kOutputRootEnv + " when set").c_str(), d["output"])},
  };
  s["example"] = d;
  return s;
}

std::string resolve_output_dir(const std::string& output) {
  const fs::path p(output);
  if (p.is_absolute()) return output;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return (fs::path(root) / p).string();
  return output;
}

// ---------------------------------------------------------------------------
// Paths

std::string ExperimentPaths::model_dir(ModelKind kind) const { return root + "/" + lower(to_string(kind)); }

std::string ExperimentPaths::restart_checkpoint(ModelKind kind, int index) const {
  return model_dir(kind) + "/restart_" + std::to_string(index) + ".model";
}

std::string ExperimentPaths::training_log(ModelKind kind, int index) const {
  return model_dir(kind) + "/training_log_" + std::to_string(index) + ".csv";
}

std::string ExperimentPaths::report(const std::string& label) const {
  return root + "/" + lower(label) + "/report.json";
}

ExperimentPaths paths_for(const ExperimentConfig& config) { return {resolve_output_dir(config.output)}; }

// ---------------------------------------------------------------------------
// Commands

TrajectoryDataset build_dataset(const ExperimentConfig& config) {
  TrajectoryDataset ds = generate_dataset(config.system, config.dataset);
  return config.canonical ? lv_to_canonical(ds) : ds;
}

GenerateSummary cmd_generate(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const ExperimentPaths paths = paths_for(config);
  const TrajectoryDataset ds = build_dataset(config);
  write_dataset(ds, paths.dataset_stem());

  GenerateSummary s;
  s.stem = paths.dataset_stem();
  s.trajectories = static_cast<int>(ds.trajectories.size());
  s.samples = ds.sample_count();
  for (const auto& tr : ds.trajectories) {
    const double e0 = conserved_quantity(ds.system, tr.states.col(0), ds.canonical);
    for (Eigen::Index k = 0; k < tr.states.cols(); ++k) {
      const double e = conserved_quantity(ds.system, tr.states.col(k), ds.canonical);
      s.max_conservation_error = std::max(s.max_conservation_error, std::abs(e - e0) / std::abs(e0));
    }
  }
  s.conservation_checked = config.dataset.sigma == 0.0;
  s.conservation_ok = !s.conservation_checked || s.max_conservation_error < kConservationTolerance;

  log << "generated " << s.trajectories << " trajectories (" << s.samples << " samples) of "
      << to_string(ds.system.kind) << (ds.canonical ? " in canonical coordinates" : "") << " -> "
      << s.stem << ".csv\n";
  if (s.conservation_checked) {
    log << "conservation check: max relative deviation " << s.max_conservation_error << " ("
        << (s.conservation_ok ? "pass" : "FAIL") << ", tolerance " << kConservationTolerance << ")\n";
  } else {
    log << "conservation check: skipped for noisy data (max relative deviation "
        << s.max_conservation_error << ")\n";
  }
  return s;
}

TrainSummary cmd_train(const ExperimentConfig& config, ModelKind kind, std::ostream& log,
                       const std::string& dataset_stem) {
  config.validate();
  const ExperimentPaths paths = paths_for(config);
  const TrajectoryDataset ds = read_dataset(dataset_stem.empty() ? paths.dataset_stem() : dataset_stem);
  if (ds.system.kind != config.system.kind) {
    throw ConfigError("system.kind", "dataset holds " + to_string(ds.system.kind) + " but the config names " +
                                         to_string(config.system.kind));
  }
  if (ds.canonical != config.canonical) {
    throw ConfigError("canonical", "dataset coordinates do not match the config");
  }
  if (ds.dim() != config.system.dim()) throw ConfigError("system.kind", "dataset dimension mismatch");

  const TrainConfig tc = config.train_config_for(kind);
  log << "training " << to_string(kind) << ": " << tc.restarts << " restart(s) x " << tc.steps
      << " steps on " << ds.sample_count() << " samples\n";
  std::vector<TrainRun> runs;
  for (int i = 0; i < tc.restarts; ++i) {
    TrainConfig c = tc;
    c.seed = tc.seed + static_cast<std::uint64_t>(i);
    TrainRun run = train(kind, ds, c);
    io::atomic_write(paths.training_log(kind, i), training_log_csv(run, false));
    io::atomic_write(paths.model_dir(kind) + "/timing_" + std::to_string(i) + ".csv",
                     training_log_csv(run, true));
    if (run.status == RunStatus::Completed) save_model(run.model, paths.restart_checkpoint(kind, i));
    log << "  restart " << i << " (seed " << c.seed << "): " << to_string(run.status)
        << ", final loss " << run.final_loss;
    if (!run.history.empty()) log << ", " << run.history.back().wall_time << " s";
    log << "\n";
    runs.push_back(std::move(run));
  }

  TrainSummary s;
  s.kind = kind;
  std::string failures = "index,seed,status,final_loss,survivor,cause\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::string cause = runs[i].failure;
    std::replace(cause.begin(), cause.end(), ',', ';');
    failures += std::to_string(i) + "," + std::to_string(runs[i].seed) + "," + to_string(runs[i].status) + "," +
                io::format_double(runs[i].final_loss) + ",0," + (cause.empty() ? "outlier" : cause) + "\n";
  }
  try {
    s.result = collect_restarts(std::move(runs), tc.outlier_factor);
  } catch (const TrainingExhausted&) {
    io::atomic_write(paths.run_table(kind), failures);
    throw;
  }
  io::atomic_write(paths.run_table(kind), run_table_csv(s.result));
  save_model(s.result.best_run().model, paths.checkpoint(kind));
  log << "  best restart " << s.result.best << ", final loss " << s.result.best_run().final_loss
      << ", " << s.result.survivors().size() << " survivor(s) -> " << paths.checkpoint(kind) << "\n";
  return s;
}

std::vector<Model> load_survivors(const ExperimentConfig& config, ModelKind kind) {
  const ExperimentPaths paths = paths_for(config);
  std::istringstream table(io::read_file(paths.run_table(kind)));
  std::string line;
  std::getline(table, line);  // header
  std::vector<std::pair<double, int>> survivors;
  while (std::getline(table, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw std::runtime_error("malformed run table " + paths.run_table(kind));
    if (cells[4] == "1") survivors.emplace_back(io::parse_double(cells[3]), std::stoi(cells[0]));
  }
  if (survivors.empty()) throw TrainingExhausted("no surviving runs in " + paths.run_table(kind));
  std::stable_sort(survivors.begin(), survivors.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Model> out;
  for (const auto& [loss, index] : survivors) out.push_back(load_model(paths.restart_checkpoint(kind, index)));
  return out;
}

namespace {

std::vector<Vector> model_coordinates(const ExperimentConfig& config, std::vector<Vector> ics) {
  if (config.canonical) {
    for (auto& v : ics) {
      if (!(v.array() > 0.0).all()) throw ConfigError("forecast.initial_conditions", "populations must be positive");
      v = v.array().log().matrix();
    }
  }
  return ics;
}

void write_report(const EvaluationReport& report, const std::string& dir) {
  io::atomic_write(dir + "/report.json", to_json(report).dump() + "\n");
  emit_plots(report, dir);
}

void log_summary(const EvaluationReport& r, std::ostream& log) {
  const auto& s = r.summary;
  log << r.label << ": " << s.rollouts << " rollout(s), " << s.diverged << " diverged; energy rel. std median "
      << s.relative_std.median << " (IQR " << s.relative_std.iqr() << "), max rel. deviation median "
      << s.max_relative_deviation.median << ", trajectory MSE median " << s.trajectory_mse.median
      << " (t <= " << s.short_horizon << ": " << s.short_mse.median << ")\n";
}

}  // namespace

EvaluationReport cmd_forecast(const ExperimentConfig& config, const std::string& checkpoint, bool oracle,
                              std::ostream& log) {
  config.validate();
  const ExperimentPaths paths = paths_for(config);
  Forecaster f;
  std::string dir;
  if (oracle) {
    f = Forecaster::oracle(config.system, config.canonical);
    dir = paths.root + "/oracle";
  } else {
    const Model m = load_model(checkpoint);
    if (m.dim != config.system.dim()) {
      throw ConfigError("system.kind", "checkpoint dimension " + std::to_string(m.dim) + " does not match the system");
    }
    f = Forecaster::from_model(m);
    dir = paths.model_dir(m.kind) + "/forecast";
  }
  const auto ics = model_coordinates(config, config.forecast_initial_conditions());
  EvaluationReport r = evaluate({f}, config.system, config.canonical, ics, config.forecast.horizon,
                                config.forecast.step, config.forecast.short_horizon);
  write_report(r, dir);
  log_summary(r, log);
  log << "  report -> " << dir << "/report.json\n";
  return r;
}

EvaluationReport cmd_evaluate(const ExperimentConfig& config, ModelKind kind, std::ostream& log) {
  config.validate();
  const ExperimentPaths paths = paths_for(config);
  std::vector<Forecaster> fs;
  for (const auto& m : load_survivors(config, kind)) {
    if (m.dim != config.system.dim()) throw ConfigError("system.kind", "checkpoint dimension mismatch");
    fs.push_back(Forecaster::from_model(m));
  }
  const auto ics = model_coordinates(config, config.forecast_initial_conditions());
  EvaluationReport r = evaluate(fs, config.system, config.canonical, ics, config.forecast.horizon,
                                config.forecast.step, config.forecast.short_horizon);
  write_report(r, paths.model_dir(kind));
  log_summary(r, log);
  return r;
}

json comparison_json(const ExperimentConfig& config, const std::vector<ComparisonEntry>& entries) {
  std::vector<ComparisonEntry> ranked = entries;
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.summary.relative_std.median < b.summary.relative_std.median;
  });
  json j;
  j["format"] = "ghnn-comparison";
  j["name"] = config.name;
  j["system"] = to_string(config.system.kind);
  j["canonical"] = config.canonical;
  j["ranked_by"] = "median relative energy std";
  json rows = json::array();
  int rank = 1;
  for (const auto& e : ranked) {
    const auto& s = e.summary;
    rows.push_back({{"rank", rank++},
                    {"model", lower(to_string(e.kind))},
                    {"relative_std_median", s.relative_std.median},
                    {"relative_std_iqr", s.relative_std.iqr()},
                    {"max_relative_deviation_median", s.max_relative_deviation.median},
                    {"trajectory_mse_median", s.trajectory_mse.median},
                    {"short_mse_median", s.short_mse.median},
                    {"short_horizon", s.short_horizon},
                    {"rollouts", s.rollouts},
                    {"diverged", s.diverged}});
  }
  j["models"] = rows;
  return j;
}

json cmd_run(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const ExperimentPaths paths = paths_for(config);
  save_config(config, paths.config());
  cmd_generate(config, log);
  std::vector<ComparisonEntry> entries;
  for (ModelKind kind : config.models) {
    cmd_train(config, kind, log);
    entries.push_back({kind, cmd_evaluate(config, kind, log).summary});
  }
  json cmp = comparison_json(config, entries);
  io::atomic_write(paths.comparison(), cmp.dump(2) + "\n");
  log << "ranking by median relative energy std:\n";
  for (const auto& row : cmp["models"]) {
    log << "  " << row["rank"].get<int>() << ". " << row["model"].get<std::string>() << "  "
        << row["relative_std_median"].get<double>() << "\n";
  }
  return cmp;
}

// ---------------------------------------------------------------------------
// Plots

std::string series_csv(const EvaluationReport& r) {
  const Eigen::Index d = r.system.dim();
  std::string out = "restart,ic,t";
  for (Eigen::Index i = 0; i < d; ++i) out += ",x" + std::to_string(i);
  for (Eigen::Index i = 0; i < d; ++i) out += ",ref" + std::to_string(i);
  out += ",energy,learned_energy\n";
  for (const auto& f : r.forecasts) {
    for (std::size_t k = 0; k < f.forecast.times.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      out += std::to_string(f.restart) + "," + std::to_string(f.ic_index) + "," + io::format_double(f.forecast.times[k]);
      for (Eigen::Index i = 0; i < d; ++i) out += "," + io::format_double(f.forecast.states(i, c));
      for (Eigen::Index i = 0; i < d; ++i) out += "," + io::format_double(f.reference(i, c));
      out += "," + io::format_double(f.energy[k]) + ",";
      if (k < f.learned_energy.size()) out += io::format_double(f.learned_energy[k]);
      out += "\n";
    }
  }
  return out;
}

void emit_plots(const EvaluationReport& r, const std::string& dir, int restart) {
  const int d = r.system.dim();
  const int ix = 0, iy = d / 2;
  std::vector<std::string> names =
      r.canonical ? std::vector<std::string>{"Q", "P"} : r.system.state_names();
  svg::Plot phase{r.label + " forecast vs reference", names[ix], names[iy], {}, 640, 480};
  svg::Plot energy{r.label + (r.system.kind == SystemKind::LotkaVolterra && !r.canonical ? " pseudo-energy" : " energy"),
                   "t", "E", {}, 640, 480};
  std::size_t colour = 0;
  for (const auto& f : r.forecasts) {
    if (f.restart != restart) continue;
    const std::string c = svg::palette(colour++);
    const std::string tag = "ic " + std::to_string(f.ic_index);
    svg::Series fc{tag, {}, {}, c, false}, ref{tag + " reference", {}, {}, c, true};
    for (Eigen::Index k = 0; k < f.forecast.states.cols(); ++k) {
      fc.x.push_back(f.forecast.states(ix, k));
      fc.y.push_back(f.forecast.states(iy, k));
      ref.x.push_back(f.reference(ix, k));
      ref.y.push_back(f.reference(iy, k));
    }
    phase.series.push_back(std::move(fc));
    phase.series.push_back(std::move(ref));
    energy.series.push_back({tag, f.forecast.times, f.energy, c, false});
  }
  io::atomic_write(dir + "/phase.svg", svg::render(phase));
  io::atomic_write(dir + "/energy.svg", svg::render(energy));
  io::atomic_write(dir + "/series.csv", series_csv(r));
}

}  // namespace ghnn
