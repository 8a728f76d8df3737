#pragma once

// Coupled low-rank distance model: parameters, distances, and the hinge objective.

#include "cpmtml/types.hpp"

#include <span>

namespace cpmtml {

/// Learned parameters for every variant.
///
/// CP-mtML: `common` is L0, `task_mats[t]` is the task projection of task t.
/// stML / utML: a single projection in `common`, no task matrices, one bias.
/// mtLMCA: `common` is L0 and `task_rot[t]` is the d x d task factor Rt.
struct CoupledModel {
  Variant variant = Variant::kCpMtml;
  Projection common;
  std::vector<Projection> task_mats;
  std::vector<Projection> task_rot;
  std::vector<double> biases;
  double gamma = 0.5;

  Index num_tasks() const { return static_cast<Index>(biases.size()); }
  Index proj_dim() const { return common.rows(); }
  Index input_dim() const { return common.cols(); }

  /// Throws if shapes are inconsistent with the variant or any entry is non-finite.
  void validate() const;
};

/// A single-projection model (stML layout) wrapping `projection`; used for
/// baselines and for scoring individual projections.
CoupledModel single_projection_model(Projection projection, Variant variant = Variant::kStml);

Vector project(const Projection& L, const VectorRef& x);

/// ||L (xi - xj)||^2.
double pair_distance_sq(const Projection& L, const VectorRef& xi, const VectorRef& xj);

/// Task-t squared distance of the coupled model for the difference vector `delta`.
double coupled_distance_sq_delta(const CoupledModel& m, Index t, const VectorRef& delta);

double coupled_distance_sq(const CoupledModel& m, Index t, const VectorRef& xi, const VectorRef& xj);

/// Matrix E with ||E delta||^2 == coupled_distance_sq: [L0; Lt] stacked for CP-mtML,
/// L0 for single-projection variants, Rt L0 for mtLMCA.
Matrix task_encoder(const CoupledModel& m, Index t);

/// D x D matrix M with d_t^2 = delta^T M delta. O(D^2); intended for verification.
Matrix effective_metric(const CoupledModel& m, Index t);

/// [1 - y (b - dsq)]_+
double hinge_loss_term(int y, double bias, double dsq);

/// Sum of hinge terms over every constraint of every task.
double total_loss(const CoupledModel& m, std::span<const Task> tasks);

void check_task_index(const CoupledModel& m, Index t);

}  // namespace cpmtml
