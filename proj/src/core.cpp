#include "cpmtml/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cpmtml {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimensionMismatch: return "dimension_mismatch";
    case ErrorKind::kTaskOutOfRange: return "task_out_of_range";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kEmptySet: return "empty_set";
    case ErrorKind::kNoPositiveSupport: return "no_positive_support";
    case ErrorKind::kNoNegativeSupport: return "no_negative_support";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kDegenerateSpectrum: return "degenerate_spectrum";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kBadMagic: return "bad_magic";
    case ErrorKind::kVersionMismatch: return "version_mismatch";
    case ErrorKind::kTruncated: return "truncated_payload";
    case ErrorKind::kTrailingBytes: return "trailing_bytes";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

FeatureSet::FeatureSet(Matrix data) : data_(std::move(data)) {
  if (!data_.allFinite()) fail(ErrorKind::kNonFinite, "feature set contains non-finite values");
}

FeatureSet FeatureSet::subset(const std::vector<Index>& indices) const {
  Matrix out(static_cast<Index>(indices.size()), dim());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Index i = indices[r];
    if (i < 0 || i >= count()) fail(ErrorKind::kInvalidArgument, "subset index out of range");
    out.row(static_cast<Index>(r)) = data_.row(i);
  }
  FeatureSet s;
  s.data_ = std::move(out);
  return s;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kCpMtml: return "cpmtml";
    case Variant::kStml: return "stml";
    case Variant::kUtml: return "utml";
    case Variant::kMtLmca: return "mtlmca";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "cpmtml" || lower == "cp-mtml") return Variant::kCpMtml;
  if (lower == "stml") return Variant::kStml;
  if (lower == "utml") return Variant::kUtml;
  if (lower == "mtlmca") return Variant::kMtLmca;
  fail(ErrorKind::kInvalidArgument, "unknown variant '" + std::string(name) + "'");
}

namespace {

bool single_projection(Variant v) { return v == Variant::kStml || v == Variant::kUtml; }

void check_dims(const Projection& L, Index n, const char* what) {
  if (L.cols() != n) {
    std::ostringstream os;
    os << what << ": projection expects dimension " << L.cols() << ", got " << n;
    fail(ErrorKind::kDimensionMismatch, os.str());
  }
}

}  // namespace

void CoupledModel::validate() const {
  const Index d = common.rows();
  const Index D = common.cols();
  if (d < 1 || D < 1) fail(ErrorKind::kInvalidArgument, "model has an empty common projection");
  if (d > D) fail(ErrorKind::kInvalidArgument, "projection dimension exceeds input dimension");
  if (biases.empty()) fail(ErrorKind::kInvalidArgument, "model has no tasks");
  if (!common.allFinite()) fail(ErrorKind::kNonFinite, "common projection has non-finite entries");
  for (double b : biases)
    if (!std::isfinite(b)) fail(ErrorKind::kNonFinite, "non-finite bias");

  const auto T = biases.size();
  switch (variant) {
    case Variant::kStml:
    case Variant::kUtml:
      if (T != 1 || !task_mats.empty() || !task_rot.empty())
        fail(ErrorKind::kInvalidArgument, "single-projection model must have T=1 and no task matrices");
      break;
    case Variant::kCpMtml:
      if (task_mats.size() != T || !task_rot.empty())
        fail(ErrorKind::kInvalidArgument, "CP-mtML model needs one task projection per bias");
      for (const auto& L : task_mats) {
        if (L.rows() != d || L.cols() != D)
          fail(ErrorKind::kDimensionMismatch, "task projection shape differs from common projection");
        if (!L.allFinite()) fail(ErrorKind::kNonFinite, "task projection has non-finite entries");
      }
      break;
    case Variant::kMtLmca:
      if (task_rot.size() != T || !task_mats.empty())
        fail(ErrorKind::kInvalidArgument, "mtLMCA model needs one d x d factor per bias");
      for (const auto& R : task_rot) {
        if (R.rows() != d || R.cols() != d) fail(ErrorKind::kDimensionMismatch, "task factor must be d x d");
        if (!R.allFinite()) fail(ErrorKind::kNonFinite, "task factor has non-finite entries");
      }
      break;
  }
}

CoupledModel single_projection_model(Projection projection, Variant variant) {
  if (!single_projection(variant)) fail(ErrorKind::kInvalidArgument, "variant is not single-projection");
  CoupledModel m;
  m.variant = variant;
  m.common = std::move(projection);
  m.biases = {1.0};
  m.validate();
  return m;
}

void check_task_index(const CoupledModel& m, Index t) {
  if (t < 0 || t >= m.num_tasks()) {
    std::ostringstream os;
    os << "task index " << t << " out of range [0, " << m.num_tasks() << ")";
    fail(ErrorKind::kTaskOutOfRange, os.str());
  }
}

Vector project(const Projection& L, const VectorRef& x) {
  check_dims(L, x.size(), "project");
  return L * x;
}

double pair_distance_sq(const Projection& L, const VectorRef& xi, const VectorRef& xj) {
  if (xi.size() != xj.size()) fail(ErrorKind::kDimensionMismatch, "pair vectors differ in dimension");
  check_dims(L, xi.size(), "pair_distance_sq");
  const Vector delta = xi - xj;
  return (L * delta).squaredNorm();
}

double coupled_distance_sq_delta(const CoupledModel& m, Index t, const VectorRef& delta) {
  check_task_index(m, t);
  check_dims(m.common, delta.size(), "coupled_distance_sq");
  switch (m.variant) {
    case Variant::kCpMtml:
      return (m.common * delta).squaredNorm() + (m.task_mats[t] * delta).squaredNorm();
    case Variant::kStml:
    case Variant::kUtml:
      return (m.common * delta).squaredNorm();
    case Variant::kMtLmca:
      return (m.task_rot[t] * (m.common * delta)).squaredNorm();
  }
  return 0.0;
}

double coupled_distance_sq(const CoupledModel& m, Index t, const VectorRef& xi, const VectorRef& xj) {
  if (xi.size() != xj.size()) fail(ErrorKind::kDimensionMismatch, "pair vectors differ in dimension");
  return coupled_distance_sq_delta(m, t, xi - xj);
}

Matrix task_encoder(const CoupledModel& m, Index t) {
  check_task_index(m, t);
  switch (m.variant) {
    case Variant::kCpMtml: {
      Matrix e(2 * m.proj_dim(), m.input_dim());
      e.topRows(m.proj_dim()) = m.common;
      e.bottomRows(m.proj_dim()) = m.task_mats[t];
      return e;
    }
    case Variant::kStml:
    case Variant::kUtml:
      return m.common;
    case Variant::kMtLmca:
      return m.task_rot[t] * m.common;
  }
  return {};
}

Matrix effective_metric(const CoupledModel& m, Index t) {
  const Matrix e = task_encoder(m, t);
  return e.transpose() * e;
}

double hinge_loss_term(int y, double bias, double dsq) {
  return std::max(0.0, 1.0 - y * (bias - dsq));
}

double total_loss(const CoupledModel& m, std::span<const Task> tasks) {
  if (static_cast<Index>(tasks.size()) != m.num_tasks())
    fail(ErrorKind::kTaskOutOfRange, "task count does not match the model");
  double sum = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    if (task.pairs.empty()) continue;
    if (!task.features) fail(ErrorKind::kInvalidArgument, "task has constraints but no features");
    const Matrix& x = task.features->matrix();
    for (const auto& c : task.pairs.constraints) {
      if (c.i < 0 || c.j < 0 || c.i >= x.rows() || c.j >= x.rows())
        fail(ErrorKind::kInvalidArgument, "constraint index outside its feature set");
      const Vector delta = (x.row(c.i) - x.row(c.j)).transpose();
      sum += hinge_loss_term(c.y, m.biases[t], coupled_distance_sq_delta(m, static_cast<Index>(t), delta));
    }
  }
  return sum;
}

}  // namespace cpmtml
