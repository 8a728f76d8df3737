#include "cpmtml/trainer.hpp"

#include "cpmtml/pairs.hpp"
#include "cpmtml/wpca.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

namespace cpmtml {

namespace {

bool is_single(Variant v) { return v == Variant::kStml || v == Variant::kUtml; }

Vector pair_delta(const Task& task, const PairConstraint& c) {
  const Matrix& x = task.features->matrix();
  return (x.row(c.i) - x.row(c.j)).transpose();
}

void check_tasks(std::span<const Task> tasks, const TrainConfig& cfg) {
  if (tasks.empty()) fail(ErrorKind::kInvalidArgument, "training needs at least one task");
  if (is_single(cfg.variant) && tasks.size() != 1)
    fail(ErrorKind::kInvalidArgument,
         std::string(to_string(cfg.variant)) + " trains on exactly one task; pool tasks first for utml");
  const Index dim = tasks.front().features ? tasks.front().features->dim() : 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& task = tasks[t];
    if (!task.features) fail(ErrorKind::kInvalidArgument, "task " + std::to_string(t) + " has no features");
    if (task.features->dim() != dim)
      fail(ErrorKind::kDimensionMismatch, "tasks disagree on feature dimension");
    if (task.pairs.empty()) fail(ErrorKind::kEmptySet, "task " + std::to_string(t) + " has no constraints");
    validate_pairs(task.pairs, task.features->count());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  if (eta && !(*eta > 0.0 && std::isfinite(*eta))) fail(ErrorKind::kInvalidArgument, "eta must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::kInvalidArgument, "gamma must lie in [0, 1]");
  if (niters < 0) fail(ErrorKind::kInvalidArgument, "niters must be >= 0");
  if (d < 1) fail(ErrorKind::kInvalidArgument, "projection dimension d must be >= 1");
  if (!std::isfinite(bias_factor)) fail(ErrorKind::kInvalidArgument, "bias_factor must be finite");
  if (wpca_sample_cap < 2) fail(ErrorKind::kInvalidArgument, "wpca_sample_cap must be >= 2");
  if (log_every < 1) fail(ErrorKind::kInvalidArgument, "log_every must be >= 1");
}

void TrainLog::write_csv(std::ostream& os) const {
  os << "iteration,task,mean_loss,violation_rate\n";
  for (const auto& r : rows)
    os << r.iteration << ',' << r.task << ',' << format_double(r.mean_loss) << ','
       << format_double(r.violation_rate) << '\n';
}

FeatureSet wpca_samples(const Task& task, Index cap, Rng& rng) {
  std::vector<Index> idx = referenced_indices(task.pairs);
  if (static_cast<Index>(idx.size()) > cap) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(cap));
    std::sort(idx.begin(), idx.end());
  }
  return task.features->subset(idx);
}

CoupledModel init_model(std::span<const Task> tasks, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  check_tasks(tasks, cfg);
  auto fit = [&](const Task& task) {
    return fit_wpca(wpca_samples(task, cfg.wpca_sample_cap, rng), cfg.d, cfg.wpca_epsilon).projection;
  };

  CoupledModel m;
  m.variant = cfg.variant;
  m.gamma = cfg.gamma;
  m.biases.assign(tasks.size(), 1.0);
  switch (cfg.variant) {
    case Variant::kCpMtml:
      for (const auto& task : tasks) m.task_mats.push_back(fit(task));
      m.common = m.task_mats.front();
      break;
    case Variant::kStml:
    case Variant::kUtml:
      m.common = fit(tasks.front());
      break;
    case Variant::kMtLmca:
      m.common = fit(tasks.front());
      m.task_rot.assign(tasks.size(), Matrix::Identity(cfg.d, cfg.d));
      break;
  }
  m.validate();
  return m;
}

CoupledModel init_model(std::span<const Task> tasks, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  return init_model(tasks, cfg, rng);
}

Matrix distance_gradient(const Projection& L, const VectorRef& delta) {
  if (L.cols() != delta.size()) fail(ErrorKind::kDimensionMismatch, "distance_gradient: dimension mismatch");
  return (L * delta) * delta.transpose();
}

StepReport sgd_step(CoupledModel& m, Index t, const VectorRef& delta, int y, double eta, const TrainConfig& cfg) {
  check_task_index(m, t);
  if (delta.size() != m.input_dim()) fail(ErrorKind::kDimensionMismatch, "sgd_step: dimension mismatch");
  if (y != 1 && y != -1) fail(ErrorKind::kInvalidArgument, "sgd_step: y must be -1 or 1");

  StepReport rep;
  double& bias = m.biases[t];
  const double eta0 = is_single(m.variant) ? eta : cfg.gamma * eta;

  switch (m.variant) {
    case Variant::kCpMtml: {
      const Vector p0 = m.common * delta;
      const Vector pt = m.task_mats[t] * delta;
      rep.dsq = p0.squaredNorm() + pt.squaredNorm();
      rep.violated = y * (bias - rep.dsq) < 1.0;
      if (rep.violated) {
        m.common.noalias() -= (eta0 * y) * p0 * delta.transpose();
        m.task_mats[t].noalias() -= (eta * y) * pt * delta.transpose();
      }
      break;
    }
    case Variant::kStml:
    case Variant::kUtml: {
      const Vector p0 = m.common * delta;
      rep.dsq = p0.squaredNorm();
      rep.violated = y * (bias - rep.dsq) < 1.0;
      if (rep.violated) m.common.noalias() -= (eta0 * y) * p0 * delta.transpose();
      break;
    }
    case Variant::kMtLmca: {
      Matrix& rot = m.task_rot[t];
      const Vector z = m.common * delta;
      const Vector r = rot * z;
      rep.dsq = r.squaredNorm();
      rep.violated = y * (bias - rep.dsq) < 1.0;
      if (rep.violated) {
        // d/dR ||R L0 delta||^2 = 2 r z^T, d/dL0 = 2 R^T r delta^T (factor 2 dropped)
        const Vector back = rot.transpose() * r;
        rot.noalias() -= (eta * y) * r * z.transpose();
        m.common.noalias() -= (eta0 * y) * back * delta.transpose();
      }
      break;
    }
  }
  if (!std::isfinite(rep.dsq))
    fail(ErrorKind::kDivergence, "training diverged (non-finite distance); lower eta");

  rep.loss_before = hinge_loss_term(y, bias, rep.dsq);
  if (rep.violated) {
    bias += cfg.bias_factor * eta * y;
    const double after = coupled_distance_sq_delta(m, t, delta);
    if (!std::isfinite(after) || !std::isfinite(bias))
      fail(ErrorKind::kDivergence, "training diverged (non-finite parameters); lower eta");
    rep.loss_after = hinge_loss_term(y, bias, after);
  } else {
    rep.loss_after = rep.loss_before;
  }
  return rep;
}

StepReport sgd_step(CoupledModel& m, Index t, const Task& task, const PairConstraint& c, double eta,
                    const TrainConfig& cfg) {
  if (!task.features) fail(ErrorKind::kInvalidArgument, "sgd_step: task has no features");
  validate_pairs(PairSet{0, {}, {c}}, task.features->count());
  return sgd_step(m, t, pair_delta(task, c), c.y, eta, cfg);
}

double default_eta(std::span<const Task> tasks, Index d, Rng& rng) {
  double sum = 0.0;
  int count = 0;
  for (int k = 0; k < 100; ++k) {
    const Task& task = tasks[static_cast<std::size_t>(k) % tasks.size()];
    sum += pair_delta(task, sample_constraint(task.pairs, rng)).squaredNorm();
    ++count;
  }
  const double scale = sum / count;
  if (!(scale > 0.0)) fail(ErrorKind::kInvalidArgument, "cannot estimate eta: all sampled pairs coincide");
  return 1e-3 * static_cast<double>(d) / scale;
}

TrainResult train(std::span<const Task> tasks, const TrainConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  cfg.validate();
  check_tasks(tasks, cfg);

  Rng rng(cfg.seed);
  const auto t0 = Clock::now();
  TrainResult out{init_model(tasks, cfg, rng), {}};
  CoupledModel& m = out.model;
  TrainLog& log = out.log;
  const double eta = cfg.eta ? *cfg.eta : default_eta(tasks, cfg.d, rng);
  log.eta = eta;
  const auto t1 = Clock::now();

  const Index num_tasks = static_cast<Index>(tasks.size());
  log.service_counts.assign(tasks.size(), 0);
  const bool keep_schedule = cfg.niters <= 1'000'000;
  if (keep_schedule) log.schedule.reserve(static_cast<std::size_t>(cfg.niters));

  std::vector<double> window_loss(tasks.size(), 0.0);
  std::vector<std::int64_t> window_steps(tasks.size(), 0), window_viol(tasks.size(), 0);

  for (std::int64_t i = 0; i < cfg.niters; ++i) {
    const Index t = static_cast<Index>(i % num_tasks);
    const Task& task = tasks[t];
    const PairConstraint& c = sample_constraint(task.pairs, rng);
    const StepReport rep = sgd_step(m, t, pair_delta(task, c), c.y, eta, cfg);

    ++log.service_counts[t];
    if (keep_schedule) log.schedule.push_back(t);
    window_loss[t] += rep.loss_before;
    window_viol[t] += rep.violated ? 1 : 0;
    ++window_steps[t];

    if ((i + 1) % cfg.log_every == 0 || i + 1 == cfg.niters) {
      for (Index k = 0; k < num_tasks; ++k) {
        if (window_steps[k] == 0) continue;
        const double n = static_cast<double>(window_steps[k]);
        log.rows.push_back({i + 1, k, window_loss[k] / n, window_viol[k] / n, window_steps[k]});
        window_loss[k] = 0.0;
        window_viol[k] = window_steps[k] = 0;
      }
    }
  }
  const auto t2 = Clock::now();
  log.init_seconds = std::chrono::duration<double>(t1 - t0).count();
  log.loop_seconds = std::chrono::duration<double>(t2 - t1).count();

  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kDivergence, std::string("training diverged: ") + e.what() + "; lower eta");
  }
  return out;
}

Task pool_tasks(std::span<const Task> tasks) {
  if (tasks.empty()) fail(ErrorKind::kInvalidArgument, "nothing to pool");
  Index rows = 0;
  const Index dim = tasks.front().features->dim();
  for (const auto& task : tasks) {
    if (!task.features) fail(ErrorKind::kInvalidArgument, "pooled task has no features");
    if (task.features->dim() != dim) fail(ErrorKind::kDimensionMismatch, "pooled tasks disagree on dimension");
    rows += task.features->count();
  }
  Matrix x(rows, dim);
  Task out;
  out.pairs.feature_ref = "pooled";
  Index offset = 0;
  for (const auto& task : tasks) {
    x.middleRows(offset, task.features->count()) = task.features->matrix();
    for (auto c : task.pairs.constraints) {
      c.i += offset;
      c.j += offset;
      out.pairs.constraints.push_back(c);
    }
    offset += task.features->count();
  }
  out.features = std::make_shared<const FeatureSet>(std::move(x));
  return out;
}

}  // namespace cpmtml
