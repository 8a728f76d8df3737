#pragma once

// Stochastic gradient training of coupled projections from pairwise constraints.
//
// Each iteration services one task in round-robin order, draws one constraint
// from it and, when the hinge margin is violated, moves every projection that
// contributes to that task's distance along -y L delta delta^T. The update uses
// the derivative without its factor 2, so on the true gradient the effective
// step is half the configured rate.

#include "cpmtml/core.hpp"

#include <iosfwd>
#include <optional>
#include <span>

namespace cpmtml {

struct TrainConfig {
  std::optional<double> eta;  // task learning rate; estimated from the data when unset
  double gamma = 0.5;         // common-projection rate is gamma * eta
  std::int64_t niters = 100000;
  Index d = 32;
  Variant variant = Variant::kCpMtml;
  std::uint64_t seed = 0;
  double bias_factor = 0.1;
  double wpca_epsilon = 1e-5;
  Index wpca_sample_cap = 5000;
  std::int64_t log_every = 1000;

  void validate() const;
};

struct TrainLogRow {
  std::int64_t iteration = 0;  // iterations completed when the row was emitted
  Index task = 0;
  double mean_loss = 0.0;      // mean pre-step hinge loss over the window
  double violation_rate = 0.0;
  std::int64_t window = 0;     // steps of this task inside the window
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::vector<std::int64_t> service_counts;  // per task
  std::vector<Index> schedule;               // task serviced at each iteration (kept when niters <= 1e6)
  double eta = 0.0;                          // rate actually used
  double init_seconds = 0.0;
  double loop_seconds = 0.0;

  void write_csv(std::ostream& os) const;
};

struct StepReport {
  bool violated = false;
  double dsq = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Returns the sampled WPCA input for a task: the distinct items its constraints
/// reference, randomly capped at `cap` rows (kept in index order).
FeatureSet wpca_samples(const Task& task, Index cap, Rng& rng);

/// Initial model: every task projection from its own WPCA, the common
/// projection copied from task 0's, all biases 1. mtLMCA starts from L0 = WPCA of
/// task 0 and identity task factors.
CoupledModel init_model(std::span<const Task> tasks, const TrainConfig& cfg, Rng& rng);
CoupledModel init_model(std::span<const Task> tasks, const TrainConfig& cfg);

/// L delta delta^T; the analytic derivative of ||L delta||^2 is twice this.
Matrix distance_gradient(const Projection& L, const VectorRef& delta);

/// One constraint update for task t on difference vector `delta` with label y.
/// Leaves the model untouched when y (b_t - d_t^2) >= 1.
StepReport sgd_step(CoupledModel& m, Index t, const VectorRef& delta, int y, double eta, const TrainConfig& cfg);
StepReport sgd_step(CoupledModel& m, Index t, const Task& task, const PairConstraint& c, double eta,
                    const TrainConfig& cfg);

/// Learning rate heuristic: 1e-3 * d / mean ||delta||^2 over up to 100 sampled constraints.
double default_eta(std::span<const Task> tasks, Index d, Rng& rng);

struct TrainResult {
  CoupledModel model;
  TrainLog log;
};

/// Full training loop. stML and utML require exactly one task; utML callers pool
/// their tasks first with `pool_tasks`.
TrainResult train(std::span<const Task> tasks, const TrainConfig& cfg);

/// Concatenates the features of several tasks and re-indexes their constraints
/// into a single task.
Task pool_tasks(std::span<const Task> tasks);

}  // namespace cpmtml
