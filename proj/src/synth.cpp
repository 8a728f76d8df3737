#include "cpmtml/synth.hpp"

#include <cmath>

namespace cpmtml {

void SynthConfig::validate() const {
  if (D < 1 || k_shared < 0 || k_task < 0 || T < 1)
    fail(ErrorKind::kInvalidArgument, "synth: D and T must be >= 1, latent sizes >= 0");
  if (k_shared + T * k_task > D) fail(ErrorKind::kInvalidArgument, "synth: k_shared + T*k_task exceeds D");
  if (k_shared + k_task < 1) fail(ErrorKind::kInvalidArgument, "synth: tasks need at least one informative dimension");
  if (classes_per_task < 1 || samples_per_class < 2)
    fail(ErrorKind::kInvalidArgument, "synth: need >= 1 class and >= 2 samples per class");
  if (!(noise_sigma >= 0.0) || !(center_scale >= 0.0) || !(nuisance_scale >= 0.0))
    fail(ErrorKind::kInvalidArgument, "synth: scales must be >= 0");
}

SynthData gen_multitask(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
  };

  SynthData out;
  {
    Eigen::HouseholderQR<Matrix> qr(gaussian(cfg.D, cfg.D));
    out.embedding = qr.householderQ();
  }

  const Index per_task = cfg.classes_per_task * (cfg.samples_per_class - 1);
  auto block_start = [&](Index t) { return cfg.k_shared + t * cfg.k_task; };

  for (Index t = 0; t < cfg.T; ++t) {
    const Matrix shared_centers = cfg.center_scale * gaussian(cfg.classes_per_task, cfg.k_shared);
    const Matrix task_centers = cfg.center_scale * gaussian(cfg.classes_per_task, cfg.k_task);

    SynthTask task;
    task.train_latent.resize(per_task, cfg.D);
    task.query_latent.resize(cfg.classes_per_task, cfg.D);
    Index row = 0;
    for (Index c = 0; c < cfg.classes_per_task; ++c) {
      for (Index s = 0; s < cfg.samples_per_class; ++s) {
        Vector z = Vector::Zero(cfg.D);
        z.head(cfg.k_shared) = shared_centers.row(c).transpose();
        z.segment(block_start(t), cfg.k_task) = task_centers.row(c).transpose();
        for (Index u = 0; u < cfg.T; ++u) {
          if (u == t) continue;
          for (Index k = 0; k < cfg.k_task; ++k) z[block_start(u) + k] = cfg.nuisance_scale * normal(rng);
        }
        for (Index k = 0; k < cfg.D; ++k) z[k] += cfg.noise_sigma * normal(rng);

        if (s == 0) {
          task.query_latent.row(c) = z.transpose();
          task.query_labels.push_back(c);
        } else {
          task.train_latent.row(row++) = z.transpose();
          task.train_labels.push_back(c);
        }
      }
    }
    task.train = FeatureSet(task.train_latent * out.embedding.transpose());
    task.queries = FeatureSet(task.query_latent * out.embedding.transpose());
    out.tasks.push_back(std::move(task));
  }
  return out;
}

double marginal_std(const SynthData& data) {
  double sum = 0.0;
  Index terms = 0;
  for (const auto& task : data.tasks) {
    const Matrix& x = task.train.matrix();
    const Vector mean = x.colwise().mean().transpose();
    sum += (x.rowwise() - mean.transpose()).squaredNorm() / static_cast<double>(std::max<Index>(x.rows() - 1, 1));
    terms += x.cols();
  }
  return terms > 0 ? std::sqrt(sum / static_cast<double>(terms)) : 0.0;
}

FeatureSet gen_distractors(Index count, Index dim, double sigma, std::uint64_t seed) {
  if (count < 0 || dim < 1 || !(sigma >= 0.0)) fail(ErrorKind::kInvalidArgument, "bad distractor parameters");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Matrix x(count, dim);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < dim; ++c) x(r, c) = normal(rng);
  return FeatureSet(std::move(x));
}

}  // namespace cpmtml
