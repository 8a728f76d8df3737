#include "cpmtml/retrieval.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <numeric>
#include <sstream>

using namespace cpmtml;
using cpmtml::testing::random_matrix;
using cpmtml::testing::random_model;
using cpmtml::testing::random_vector;
using cpmtml::testing::rel_close;

namespace {

struct LabelledSet {
  FeatureSet x;
  Labels labels;
};

LabelledSet clustered(Index classes, Index per_class, Index dim, double spread, Rng& rng) {
  const Matrix centers = random_matrix(classes, dim, rng);
  Matrix x(classes * per_class, dim);
  Labels labels;
  for (Index c = 0; c < classes; ++c)
    for (Index k = 0; k < per_class; ++k) {
      x.row(c * per_class + k) = centers.row(c) + random_vector(dim, rng, spread).transpose();
      labels.push_back(c);
    }
  return {FeatureSet(std::move(x)), std::move(labels)};
}

// Quadratic reimplementation: full distance matrix from the model, full sort, count.
std::vector<double> brute_force_scores(const CoupledModel& m, const LabelledSet& q, const LabelledSet& g,
                                       const std::vector<Index>& ks) {
  std::vector<double> sums(ks.size(), 0.0);
  for (Index i = 0; i < q.x.count(); ++i) {
    std::vector<std::pair<double, Index>> all;
    for (Index r = 0; r < g.x.count(); ++r) all.push_back({coupled_distance_sq(m, 0, q.x.row(i), g.x.row(r)), r});
    std::sort(all.begin(), all.end());
    for (std::size_t k = 0; k < ks.size(); ++k) {
      int hit = 0;
      for (Index r = 0; r < std::min<Index>(ks[k], g.x.count()); ++r)
        if (g.labels[all[r].second] == q.labels[i]) hit = 1;
      sums[k] += hit;
    }
  }
  for (auto& s : sums) s /= static_cast<double>(q.x.count());
  return sums;
}

}  // namespace

TEST_CASE("query_knn on 1-D codes") {
  const Matrix enc = Matrix::Identity(1, 1);
  RetrievalIndex idx(enc);
  idx.add(FeatureSet(Matrix{{0.0}, {1.0}, {3.0}}), {0, 0, 0});
  const auto nn = query_knn(idx, Vector::Constant(1, 0.9), 3);
  REQUIRE(nn.size() == 3);
  CHECK(nn[0].id == 1);
  CHECK(nn[1].id == 0);
  CHECK(nn[2].id == 2);
  CHECK(nn[0].dist_sq == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(nn[1].dist_sq == doctest::Approx(0.81).epsilon(1e-12));
  CHECK(nn[2].dist_sq == doctest::Approx(4.41).epsilon(1e-12));

  const auto exact = query_knn(idx, Vector::Constant(1, 3.0), 1);
  CHECK(exact[0].id == 2);
  CHECK(exact[0].dist_sq == 0.0);

  CHECK(query_knn(idx, Vector::Constant(1, 0.0), 10).size() == 3);
  CHECK_THROWS_AS(query_knn(idx, Vector::Zero(2), 1), Error);
  CHECK_THROWS_AS(query_knn(idx, Vector::Zero(1), 0), Error);
}

TEST_CASE("ties break by ascending id") {
  RetrievalIndex idx(Matrix::Identity(1, 1));
  const std::vector<std::int64_t> ids{9, 4, 7};
  idx.add(FeatureSet(Matrix{{1.0}, {-1.0}, {1.0}}), {0, 0, 0}, ids);
  const auto nn = query_knn(idx, Vector::Zero(1), 3);
  CHECK(nn[0].id == 4);
  CHECK(nn[1].id == 7);
  CHECK(nn[2].id == 9);
  CHECK_THROWS_AS(idx.add(FeatureSet(Matrix{{0.0}}), {0}, std::vector<std::int64_t>{7}), Error);
}

TEST_CASE("build_index") {
  CoupledModel m;
  m.common = Matrix::Identity(2, 2);
  m.task_mats = {Matrix::Identity(2, 2)};
  m.biases = {1.0};
  const FeatureSet g(Matrix{{1.0, 2.0}, {-3.0, 0.5}});
  const RetrievalIndex idx = build_index(g, {0, 1}, m, 0);
  CHECK(idx.code_length() == 4);
  const auto c = idx.code(1);
  CHECK(std::vector<double>(c.begin(), c.end()) == std::vector<double>{-3.0, 0.5, -3.0, 0.5});

  Rng rng(41);
  const CoupledModel r = random_model(Variant::kCpMtml, 2, 3, 7, rng);
  const FeatureSet big(random_matrix(30, 7, rng));
  const RetrievalIndex ridx = build_index(big, Labels(30, 0), r, 1);
  for (Index a = 0; a < 30; a += 3)
    for (Index b = 0; b < 30; b += 7) {
      Vector ca(ridx.code_length());
      for (Index k = 0; k < ca.size(); ++k) ca[k] = ridx.code(a)[k];
      CHECK(rel_close(ridx.code_distance_sq(ca, b), coupled_distance_sq(r, 1, big.row(a), big.row(b)), 1e-9, 1e-12));
    }

  CHECK_THROWS_AS(build_index(FeatureSet(Matrix(0, 7)), {}, r, 0), Error);
  CHECK_THROWS_AS(build_index(FeatureSet(random_matrix(3, 6, rng)), Labels(3, 0), r, 0), Error);
}

TEST_CASE("query_knn matches a full sort; sharding is exact") {
  Rng rng(42);
  const Index n = 200, dim = 8;
  RetrievalIndex idx(Matrix::Identity(dim, dim));
  const FeatureSet g(random_matrix(n, dim, rng));
  idx.add(g, Labels(n, 0));
  for (int rep = 0; rep < 10; ++rep) {
    const Vector q = random_vector(dim, rng);
    std::vector<std::pair<double, Index>> all;
    for (Index r = 0; r < n; ++r) all.push_back({(g.row(r) - q).squaredNorm(), r});
    std::sort(all.begin(), all.end());
    const auto nn = query_knn(idx, q, 15);
    for (std::size_t k = 0; k < 15; ++k) {
      CHECK(nn[k].id == all[k].second);
      CHECK(rel_close(nn[k].dist_sq, all[k].first, 1e-12));
    }
    for (Index shards : {2, 3, 7, 200, 500}) CHECK(query_knn(idx, q, 15, shards) == nn);
  }
}

TEST_CASE("results are invariant to gallery permutation") {
  Rng rng(43);
  const FeatureSet g(random_matrix(50, 4, rng));
  std::vector<Index> perm(50);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::int64_t> ids(perm.begin(), perm.end());

  RetrievalIndex a(Matrix::Identity(4, 4)), b(Matrix::Identity(4, 4));
  a.add(g, Labels(50, 0));
  b.add(g.subset(perm), Labels(50, 0), ids);
  const Vector q = random_vector(4, rng);
  const auto na = query_knn(a, q, 10), nb = query_knn(b, q, 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(na[k].id == nb[k].id);
    CHECK(na[k].dist_sq == nb[k].dist_sq);
  }
}

TEST_CASE("n_call_at_k") {
  const std::vector<std::uint8_t> a{0, 0, 1, 0};
  CHECK(n_call_at_k(a, 1, 2) == 0);
  CHECK(n_call_at_k(a, 1, 3) == 1);
  const std::vector<std::uint8_t> b{1, 0, 1};
  CHECK(n_call_at_k(b, 2, 2) == 0);
  CHECK(n_call_at_k(b, 2, 3) == 1);
  const std::vector<std::uint8_t> none(6, 0);
  for (Index n = 1; n < 3; ++n)
    for (Index k = 1; k < 8; ++k) CHECK(n_call_at_k(none, n, k) == 0);
  CHECK(n_call_at_k(b, 1, 100) == 1);
}

TEST_CASE("evaluate") {
  Rng rng(44);
  CoupledModel m;
  m.variant = Variant::kStml;
  m.common = random_matrix(3, 5, rng);
  m.biases = {1.0};

  SUBCASE("gallery holds exact copies of the queries") {
    const LabelledSet q = clustered(5, 2, 5, 1.0, rng);
    const EvalReport rep = evaluate(q.x, q.labels, q.x, q.labels, nullptr, m, 0, EvalOptions{{1}, 1, 1, false});
    CHECK(rep.scores[0] == 1.0);
  }
  SUBCASE("no label overlap scores zero") {
    const LabelledSet q = clustered(3, 2, 5, 1.0, rng);
    LabelledSet g = clustered(3, 5, 5, 1.0, rng);
    for (auto& l : g.labels) l += 100;
    const EvalReport rep = evaluate(q.x, q.labels, g.x, g.labels, nullptr, m, 0, EvalOptions{});
    for (double s : rep.scores) CHECK(s == 0.0);
  }
  SUBCASE("agrees exactly with the quadratic oracle") {
    for (Index n_per : {10, 50, 166}) {
      CoupledModel cp = random_model(Variant::kCpMtml, 1, 2, 6, rng);
      const LabelledSet g = clustered(3, n_per, 6, 1.5, rng);
      const LabelledSet q = clustered(3, 4, 6, 1.5, rng);
      const std::vector<Index> ks{2, 5, 10};
      const EvalReport rep = evaluate(q.x, q.labels, g.x, g.labels, nullptr, cp, 0, EvalOptions{ks, 1, 1, false});
      CHECK(rep.scores == brute_force_scores(cp, q, g, ks));
      for (std::size_t k = 1; k < ks.size(); ++k) CHECK(rep.scores[k] >= rep.scores[k - 1]);
    }
  }
  SUBCASE("distractors never help") {
    const LabelledSet g = clustered(4, 20, 5, 1.0, rng);
    const LabelledSet q = clustered(4, 5, 5, 1.0, rng);
    const FeatureSet dx(random_matrix(300, 5, rng));
    const EvalOptions opt{{1, 2, 5, 10, 20}, 1, 1, false};
    const EvalReport clean = evaluate(q.x, q.labels, g.x, g.labels, nullptr, m, 0, opt);
    const EvalReport noisy = evaluate(q.x, q.labels, g.x, g.labels, &dx, m, 0, opt);
    CHECK(noisy.n_distractors == 300);
    CHECK(clean.n_distractors == 0);
    for (std::size_t i = 0; i < clean.per_query.size(); ++i)
      for (std::size_t k = 0; k < opt.ks.size(); ++k) CHECK(noisy.per_query[i][k] <= clean.per_query[i][k]);
  }
  SUBCASE("errors") {
    const LabelledSet g = clustered(2, 3, 5, 1.0, rng);
    CHECK_THROWS_AS(evaluate(FeatureSet(Matrix(0, 5)), {}, g.x, g.labels, nullptr, m, 0, EvalOptions{}), Error);
    CHECK_THROWS_AS(evaluate(g.x, g.labels, FeatureSet(Matrix(0, 5)), {}, nullptr, m, 0, EvalOptions{}), Error);
  }
}

TEST_CASE("compact index keeps rankings close to the double index") {
  Rng rng(45);
  const FeatureSet g(random_matrix(500, 16, rng));
  const Matrix enc = random_matrix(8, 16, rng);
  RetrievalIndex full(enc);
  CompactIndex compact(enc);
  full.add(g, Labels(500, 0));
  compact.add(g, Labels(500, 0));
  CHECK(compact.code_bytes() == 500 * 8 * sizeof(float));
  const Vector q = random_vector(16, rng);
  const auto a = query_knn(full, q, 5), b = query_knn(compact, q, 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(rel_close(a[k].dist_sq, b[k].dist_sq, 1e-5));
}

TEST_CASE("report csv") {
  EvalReport rep;
  rep.ks = {1, 10};
  rep.scores = {0.25, 0.1};
  rep.n_queries = 20;
  rep.n_distractors = 3;
  const auto rows = report_rows(rep, "cpmtml", "aux1");
  std::ostringstream os;
  write_report_csv(os, rows);
  CHECK(os.str() ==
        "method,aux_task,K,score,n_queries,n_distractors\n"
        "cpmtml,aux1,1,0.25,20,3\n"
        "cpmtml,aux1,10,0.1,20,3\n");
  CHECK(rep.score_at(10) == 0.1);
  CHECK_THROWS_AS(rep.score_at(5), Error);
}
