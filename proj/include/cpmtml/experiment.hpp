#pragma once

// Experiment orchestration: config parsing, train/eval runs, validation grid search.

#include "cpmtml/retrieval.hpp"
#include "cpmtml/synth.hpp"
#include "cpmtml/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace cpmtml {

struct TaskSpec {
  std::string name;
  std::string role = "aux";  // "main" or "aux"
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path pairs;  // optional; generated from labels when empty
  std::filesystem::path queries;       // main task only
  std::filesystem::path query_labels;  // main task only
  std::optional<std::size_t> n_pos;
  std::optional<std::size_t> n_neg;
};

/// Method evaluated by an experiment: one of the trainers, or the WPCA baseline.
struct Method {
  bool wpca = false;
  Variant variant = Variant::kStml;

  std::string name() const { return wpca ? "wpca" : std::string(to_string(variant)); }
};

struct ExperimentConfig {
  std::string data = "synth";  // "synth" or "files"
  SynthConfig synth;
  std::vector<TaskSpec> tasks;

  std::size_t main_pos = 250, main_neg = 250;
  std::size_t aux_pos = 2500, aux_neg = 2500;

  TrainConfig train;
  std::vector<Method> methods{Method{false, Variant::kCpMtml}};

  EvalOptions eval;
  std::filesystem::path distractors;  // feature file of distractors
  Index synthetic_distractors = 0;

  std::filesystem::path out_dir;  // empty: no artifacts
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::vector<double> grid_eta;
  std::vector<double> grid_gamma;
  Index grid_queries = 200;

  /// YAML mapping. Nested maps flatten to the dotted keys accepted by set(), so
  /// `synth: {D: 50}` and `synth.D: 50` are equivalent. Unknown keys are rejected.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  void set(std::string_view key, std::string_view value);
  void validate() const;
};

/// Loaded data in training order: the main task first, then auxiliary tasks.
struct ExperimentData {
  std::vector<std::string> task_names;
  std::vector<Task> tasks;
  std::vector<Labels> labels;  // per task; may be empty for pairs-only auxiliary tasks
  FeatureSet queries;
  Labels query_labels;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

struct MethodRun {
  Method method;
  CoupledModel model;
  TrainLog log;
  EvalReport clean;
  std::optional<EvalReport> with_distractors;
};

struct ExperimentResult {
  std::vector<MethodRun> runs;
  std::vector<ReportRow> rows;
};

/// Trains and evaluates every configured method on the main task; writes
/// models, train logs and report.csv under out_dir when set.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data);

/// Trains one method on loaded data (shared by run_experiment and grid search).
TrainResult train_method(const Method& method, const ExperimentData& data, const TrainConfig& cfg);

struct GridRow {
  std::size_t eta_index = 0;
  std::size_t gamma_index = 0;
  double eta = 0.0;
  double gamma = 0.0;
  double score = 0.0;  // validation 1-call@10; NaN when excluded
  std::string status;  // "ok" or "diverged"
};

struct GridResult {
  double best_eta = 0.0;
  double best_gamma = 0.0;
  double best_score = 0.0;
  std::vector<GridRow> table;

  void write_csv(std::ostream& os) const;
};

/// Splits the main task's constraints 50/50 (seeded), trains every (eta, gamma)
/// combination on the first half plus all auxiliary tasks, and scores
/// leave-one-out 1-call@10 over the items referenced by the second half.
GridResult run_grid_search(const ExperimentConfig& cfg);
GridResult run_grid_search(const ExperimentConfig& cfg, const ExperimentData& data);

/// Deterministic sub-seed for an independent random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cpmtml
