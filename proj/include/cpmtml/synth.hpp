#pragma once

// Synthetic multi-task data with a controllable shared latent subspace.
//
// Latent layout (length D): [shared | block_0 | ... | block_{T-1} | unused].
// A class of task t fixes the shared block and block t; every other task's block
// carries per-sample nuisance variation of scale `nuisance_scale`. Isotropic noise
// of scale `noise_sigma` is added everywhere and the latent vector is rotated into
// R^D by one random orthonormal map shared by all tasks.

#include "cpmtml/retrieval.hpp"

namespace cpmtml {

struct SynthConfig {
  Index D = 50;
  Index k_shared = 4;
  Index k_task = 4;
  Index classes_per_task = 20;
  Index samples_per_class = 40;  // including the one held out as a query
  double noise_sigma = 0.5;
  Index T = 2;
  std::uint64_t seed = 1;
  double center_scale = 1.0;
  double nuisance_scale = 3.0;

  void validate() const;
};

struct SynthTask {
  FeatureSet train;
  Labels train_labels;
  FeatureSet queries;  // one per class
  Labels query_labels;
  Matrix train_latent;
  Matrix query_latent;
};

struct SynthData {
  std::vector<SynthTask> tasks;
  Matrix embedding;  // D x D orthonormal, x = embedding * z
};

SynthData gen_multitask(const SynthConfig& cfg);

/// Root mean per-coordinate variance over all training samples of all tasks.
double marginal_std(const SynthData& data);

/// `count` i.i.d. N(0, sigma^2) vectors in R^D.
FeatureSet gen_distractors(Index count, Index dim, double sigma, std::uint64_t seed);

/// Streams `count` distractors into an index in chunks so the raw vectors are
/// never held in memory at once. Ids continue after the index's current ids.
template <typename CodeT>
void append_distractors(BasicRetrievalIndex<CodeT>& idx, Index count, double sigma, std::uint64_t seed,
                        Index chunk = 8192) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  idx.reserve(idx.size() + count);
  for (Index done = 0; done < count; done += chunk) {
    const Index rows = std::min(chunk, count - done);
    Matrix x(rows, idx.input_dim());
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < x.cols(); ++c) x(r, c) = normal(rng);
    idx.add(FeatureSet(std::move(x)), Labels(static_cast<std::size_t>(rows), kDistractorLabel));
  }
}

}  // namespace cpmtml
