#include "cpmtml/pairs.hpp"
#include "cpmtml/trainer.hpp"
#include "cpmtml/wpca.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace cpmtml;
using cpmtml::testing::random_matrix;
using cpmtml::testing::random_model;
using cpmtml::testing::random_vector;
using cpmtml::testing::rel_close;

namespace {

CoupledModel scalar_model(double l0, double l1, double b) {
  CoupledModel m;
  m.variant = Variant::kCpMtml;
  m.common = Matrix::Constant(1, 1, l0);
  m.task_mats = {Matrix::Constant(1, 1, l1)};
  m.biases = {b};
  return m;
}

TrainConfig scalar_config(double gamma) {
  TrainConfig cfg;
  cfg.gamma = gamma;
  cfg.d = 1;
  return cfg;
}

Vector scalar(double v) { return Vector::Constant(1, v); }

// Two labelled Gaussian blobs per class in `dim` dimensions.
Task blob_task(Index classes, Index per_class, Index dim, double spread, std::uint64_t seed, std::size_t pairs,
               Labels* labels_out = nullptr) {
  Rng rng(seed);
  const Matrix centers = random_matrix(classes, dim, rng, 3.0);
  Matrix x(classes * per_class, dim);
  Labels labels;
  for (Index c = 0; c < classes; ++c)
    for (Index k = 0; k < per_class; ++k) {
      x.row(c * per_class + k) = centers.row(c) + random_vector(dim, rng, spread).transpose();
      labels.push_back(c);
    }
  Task t;
  t.features = std::make_shared<const FeatureSet>(std::move(x));
  t.pairs = generate_pairs(labels, pairs / 2, pairs - pairs / 2, rng);
  if (labels_out) *labels_out = labels;
  return t;
}

// Central finite differences of ||L delta||^2 with respect to every entry of L.
Matrix finite_difference(const Matrix& L, const Vector& delta, double h) {
  Matrix g(L.rows(), L.cols());
  for (Index r = 0; r < L.rows(); ++r)
    for (Index c = 0; c < L.cols(); ++c) {
      Matrix plus = L, minus = L;
      plus(r, c) += h;
      minus(r, c) -= h;
      g(r, c) = ((plus * delta).squaredNorm() - (minus * delta).squaredNorm()) / (2 * h);
    }
  return g;
}

}  // namespace

TEST_CASE("distance_gradient") {
  Matrix L{{1.0, 0.0}};
  Vector delta(2);
  delta << 1, 0;
  const Matrix g = distance_gradient(L, delta);
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(distance_gradient(L, Vector::Zero(2)).isZero(0.0));

  Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    const Matrix R = random_matrix(3, 5, rng);
    const Vector dv = random_vector(5, rng);
    const Matrix analytic = 2.0 * distance_gradient(R, dv);
    const Matrix fd = finite_difference(R, dv, 1e-6);
    for (Index r = 0; r < 3; ++r)
      for (Index c = 0; c < 5; ++c) CHECK(rel_close(fd(r, c), analytic(r, c), 1e-5, 1e-9));
  }
  CHECK_THROWS_AS(distance_gradient(L, Vector::Zero(3)), Error);
}

TEST_CASE("sgd_step hand-evaluated examples") {
  SUBCASE("violated positive pair") {
    CoupledModel m = scalar_model(1, 1, 1);
    const auto rep = sgd_step(m, 0, scalar(2.0), +1, 0.1, scalar_config(0.5));
    CHECK(rep.violated);
    CHECK(rep.dsq == 8.0);
    CHECK(m.common(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(m.task_mats[0](0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(m.biases[0] == doctest::Approx(1.01).epsilon(1e-15));
  }
  SUBCASE("margin exactly 1 is not a violation") {
    CoupledModel m = scalar_model(1, 1, 1);
    const CoupledModel before = m;
    const auto rep = sgd_step(m, 0, scalar(0.0), +1, 0.1, scalar_config(0.5));
    CHECK_FALSE(rep.violated);
    CHECK(m.common == before.common);
    CHECK(m.task_mats[0] == before.task_mats[0]);
    CHECK(m.biases == before.biases);
  }
  SUBCASE("violated negative pair") {
    CoupledModel m = scalar_model(1, 1, 1);
    const double eta = 0.1, gamma = 0.5;
    const auto rep = sgd_step(m, 0, scalar(0.7), -1, eta, scalar_config(gamma));
    CHECK(rep.violated);
    CHECK(rep.dsq == doctest::Approx(0.98).epsilon(1e-15));
    CHECK(m.common(0, 0) == doctest::Approx(1 + gamma * eta * 0.49).epsilon(1e-15));
    CHECK(m.task_mats[0](0, 0) == doctest::Approx(1 + eta * 0.49).epsilon(1e-15));
    CHECK(m.biases[0] == doctest::Approx(1 - 0.1 * eta).epsilon(1e-15));
  }
}

TEST_CASE("update rule identity and non-violating steps") {
  Rng rng(32);
  TrainConfig cfg;
  cfg.gamma = 0.3;
  int violated = 0;
  for (int rep = 0; rep < 200; ++rep) {
    CoupledModel m = random_model(Variant::kCpMtml, 2, 3, 6, rng);
    const CoupledModel before = m;
    const Vector delta = random_vector(6, rng, 0.5);
    const int y = rep % 2 ? 1 : -1;
    const double eta = 0.01;
    const auto r = sgd_step(m, 1, delta, y, eta, cfg);
    if (r.violated) {
      ++violated;
      const Matrix want0 = before.common - (cfg.gamma * eta * y) * distance_gradient(before.common, delta);
      const Matrix want1 = before.task_mats[1] - (eta * y) * distance_gradient(before.task_mats[1], delta);
      CHECK((m.common - want0).cwiseAbs().maxCoeff() <= 1e-14);
      CHECK((m.task_mats[1] - want1).cwiseAbs().maxCoeff() <= 1e-14);
      CHECK(m.task_mats[0] == before.task_mats[0]);
      CHECK(m.biases[1] == before.biases[1] + cfg.bias_factor * eta * y);
      CHECK(m.biases[0] == before.biases[0]);
    } else {
      CHECK(m.common == before.common);
      CHECK(m.task_mats[0] == before.task_mats[0]);
      CHECK(m.task_mats[1] == before.task_mats[1]);
      CHECK(m.biases == before.biases);
    }
  }
  CHECK(violated > 0);
  CHECK(violated < 200);
}

TEST_CASE("single-projection and mtLMCA steps") {
  TrainConfig cfg;
  cfg.gamma = 0.5;
  CoupledModel st;
  st.variant = Variant::kStml;
  st.common = Matrix::Constant(1, 1, 1.0);
  st.biases = {1.0};
  sgd_step(st, 0, scalar(2.0), +1, 0.1, cfg);
  CHECK(st.common(0, 0) == doctest::Approx(1 - 0.1 * 4).epsilon(1e-15));  // full eta, not gamma * eta

  Rng rng(33);
  for (int rep = 0; rep < 50; ++rep) {
    CoupledModel m = random_model(Variant::kMtLmca, 2, 3, 5, rng);
    m.biases = {0.0, 0.0};  // every positive pair violates the margin
    const CoupledModel before = m;
    const Vector delta = random_vector(5, rng);
    const double eta = 1e-3;
    const auto r = sgd_step(m, 0, delta, +1, eta, cfg);
    REQUIRE(r.violated);
    // the update must be -eta/2 * y * (finite-difference gradient) for each block
    const Matrix L0 = before.common, R = before.task_rot[0];
    Matrix fd_r(3, 3), fd_l(3, 5);
    const double h = 1e-6;
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) {
        Matrix p = R, q = R;
        p(i, j) += h;
        q(i, j) -= h;
        fd_r(i, j) = ((p * L0 * delta).squaredNorm() - (q * L0 * delta).squaredNorm()) / (2 * h);
      }
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 5; ++j) {
        Matrix p = L0, q = L0;
        p(i, j) += h;
        q(i, j) -= h;
        fd_l(i, j) = ((R * p * delta).squaredNorm() - (R * q * delta).squaredNorm()) / (2 * h);
      }
    const Matrix step_r = (before.task_rot[0] - m.task_rot[0]) / eta;
    const Matrix step_l = (before.common - m.common) / (cfg.gamma * eta);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) CHECK(rel_close(2 * step_r(i, j), fd_r(i, j), 1e-4, 1e-6));
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 5; ++j) CHECK(rel_close(2 * step_l(i, j), fd_l(i, j), 1e-4, 1e-6));
    CHECK(m.task_rot[1] == before.task_rot[1]);
  }
}

TEST_CASE("init_model") {
  TrainConfig cfg;
  cfg.d = 3;
  cfg.seed = 5;
  cfg.wpca_sample_cap = 40;

  const Task one = blob_task(4, 20, 6, 1.0, 1, 400);
  const CoupledModel m1 = init_model(std::span(&one, 1), cfg);
  CHECK(m1.common == m1.task_mats[0]);
  CHECK(m1.biases == std::vector<double>{1.0});

  std::vector<Task> tasks{blob_task(4, 20, 6, 1.0, 2, 300), blob_task(2, 30, 6, 0.5, 3, 300)};
  const CoupledModel m2 = init_model(tasks, cfg);
  CHECK(m2.biases == std::vector<double>{1.0, 1.0});
  // oracle: refit each task's WPCA directly from its referenced items
  Rng rng(cfg.seed);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::vector<Index> idx = referenced_indices(tasks[t].pairs);
    if (static_cast<Index>(idx.size()) > cfg.wpca_sample_cap) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(cfg.wpca_sample_cap));
      std::sort(idx.begin(), idx.end());
    }
    const WpcaResult fit = fit_wpca(tasks[t].features->subset(idx), cfg.d, cfg.wpca_epsilon);
    CHECK(m2.task_mats[t] == fit.projection);
  }
  CHECK(m2.common == m2.task_mats[0]);

  cfg.variant = Variant::kMtLmca;
  const CoupledModel lm = init_model(tasks, cfg);
  CHECK(lm.task_rot.size() == 2);
  CHECK(lm.task_rot[1] == Matrix::Identity(3, 3));
  CHECK(lm.common == m2.task_mats[0]);

  cfg.variant = Variant::kStml;
  CHECK_THROWS_AS(init_model(tasks, cfg), Error);
}

TEST_CASE("round-robin schedule") {
  std::vector<Task> tasks{blob_task(3, 10, 4, 1.0, 4, 60), blob_task(3, 10, 4, 1.0, 5, 60)};
  TrainConfig cfg;
  cfg.d = 2;
  cfg.eta = 1e-3;
  cfg.niters = 6;
  const TrainResult r = train(tasks, cfg);
  CHECK(r.log.service_counts == std::vector<std::int64_t>{3, 3});
  CHECK(r.log.schedule == std::vector<Index>{0, 1, 0, 1, 0, 1});

  std::vector<Task> three{tasks[0], tasks[1], blob_task(3, 10, 4, 1.0, 6, 60)};
  for (std::int64_t n : {0, 1, 7, 10, 11}) {
    cfg.niters = n;
    const TrainResult rr = train(three, cfg);
    for (std::int64_t t = 0; t < 3; ++t) CHECK(rr.log.service_counts[t] == (n - t + 2) / 3 * (n > t ? 1 : 0));
  }
}

TEST_CASE("niters = 0 returns the initialization") {
  std::vector<Task> tasks{blob_task(3, 10, 4, 1.0, 7, 60), blob_task(3, 10, 4, 1.0, 8, 60)};
  TrainConfig cfg;
  cfg.d = 2;
  cfg.eta = 1e-2;
  cfg.niters = 0;
  const TrainResult r = train(tasks, cfg);
  const CoupledModel init = init_model(tasks, cfg);
  CHECK(r.model.common == init.common);
  CHECK(r.model.task_mats == init.task_mats);
  CHECK(r.model.biases == init.biases);
}

TEST_CASE("gamma = 0 freezes the common projection") {
  std::vector<Task> tasks{blob_task(3, 15, 5, 1.0, 9, 100), blob_task(3, 15, 5, 1.0, 10, 100)};
  TrainConfig cfg;
  cfg.d = 3;
  cfg.eta = 1e-2;
  cfg.gamma = 0.0;
  cfg.niters = 500;
  const TrainResult r = train(tasks, cfg);
  const CoupledModel init = init_model(tasks, cfg);
  CHECK(r.model.common == init.common);
  CHECK(r.model.task_mats[0] != init.task_mats[0]);
}

TEST_CASE("determinism and stML / utML equivalence") {
  const Task task = blob_task(4, 15, 6, 1.0, 11, 200);
  TrainConfig cfg;
  cfg.d = 3;
  cfg.eta = 5e-3;
  cfg.niters = 800;
  cfg.seed = 77;
  cfg.variant = Variant::kStml;
  const TrainResult a = train(std::span(&task, 1), cfg);
  const TrainResult b = train(std::span(&task, 1), cfg);
  CHECK(a.model.common == b.model.common);
  CHECK(a.model.biases == b.model.biases);

  cfg.variant = Variant::kUtml;
  const Task pooled = pool_tasks(std::span(&task, 1));
  const TrainResult u = train(std::span(&pooled, 1), cfg);
  CHECK(u.model.common == a.model.common);
  CHECK(u.model.biases == a.model.biases);
}

TEST_CASE("loss decreases on separable data") {
  // two well separated 2-D classes
  const Task task = blob_task(2, 50, 2, 0.3, 12, 400);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.eta = 1e-2;
  cfg.niters = 4000;
  cfg.log_every = 100;
  cfg.variant = Variant::kStml;
  const TrainResult r = train(std::span(&task, 1), cfg);
  const auto& rows = r.log.rows;
  REQUIRE(rows.size() == 40);
  double first = 0.0, last = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    first += rows[k].mean_loss;
    last += rows[rows.size() - 1 - k].mean_loss;
  }
  CHECK(last < first);
  for (std::size_t k = 1; k < rows.size(); ++k) CHECK(rows[k].iteration > rows[k - 1].iteration);

  std::ostringstream os;
  r.log.write_csv(os);
  CHECK(os.str().rfind("iteration,task,mean_loss,violation_rate\n", 0) == 0);
}

TEST_CASE("divergence is reported") {
  const Task task = blob_task(3, 10, 4, 1.0, 13, 60);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.eta = 1e6;
  cfg.niters = 200;
  cfg.variant = Variant::kStml;
  try {
    train(std::span(&task, 1), cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDivergence);
  }
}

TEST_CASE("config and input validation") {
  TrainConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.gamma = 0.5;
  cfg.eta = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  Task empty;
  empty.features = std::make_shared<const FeatureSet>(Matrix::Zero(3, 2));
  TrainConfig ok;
  ok.d = 1;
  CHECK_THROWS_AS(train(std::span(&empty, 1), ok), Error);

  std::vector<Task> mismatched{blob_task(3, 10, 4, 1.0, 14, 60), blob_task(3, 10, 5, 1.0, 15, 60)};
  CHECK_THROWS_AS(train(mismatched, ok), Error);
}

TEST_CASE("pool_tasks offsets indices") {
  std::vector<Task> tasks{blob_task(2, 3, 2, 1.0, 16, 4), blob_task(2, 4, 2, 1.0, 17, 4)};
  const Task pooled = pool_tasks(tasks);
  CHECK(pooled.features->count() == 14);
  REQUIRE(pooled.pairs.size() == 8);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& src = tasks[1].pairs.constraints[k];
    const auto& dst = pooled.pairs.constraints[4 + k];
    CHECK(dst.i == src.i + 6);
    CHECK(pooled.features->row(dst.j) == tasks[1].features->row(src.j));
  }
}
