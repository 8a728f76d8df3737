#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cpmtml {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using VectorRef = Eigen::Ref<const Vector>;

/// A d x D row-major projection (L, L0, Lt, or the d x d Rt of mtLMCA).
using Projection = Matrix;

using Label = std::int64_t;
using Labels = std::vector<Label>;

/// Reserved label carried by distractor gallery items; never relevant to a query.
inline constexpr Label kDistractorLabel = std::numeric_limits<Label>::min();

/// Every stochastic component draws from this engine, seeded explicitly.
using Rng = std::mt19937_64;

enum class ErrorKind {
  kDimensionMismatch,
  kTaskOutOfRange,
  kInvalidArgument,
  kEmptySet,
  kNoPositiveSupport,
  kNoNegativeSupport,
  kNonFinite,
  kDegenerateSpectrum,
  kDivergence,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kTrailingBytes,
  kIo,
  kConfig,
};

/// Stable, machine-parsable name of an error class ("dimension_mismatch", ...).
std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

/// N x D dense descriptors, one row per item. All entries are finite.
class FeatureSet {
 public:
  FeatureSet() = default;
  explicit FeatureSet(Matrix data);

  Index count() const { return data_.rows(); }
  Index dim() const { return data_.cols(); }
  bool empty() const { return data_.rows() == 0; }

  Vector row(Index i) const { return data_.row(i).transpose(); }
  const Matrix& matrix() const { return data_; }

  /// Rows selected by `indices`, in that order.
  FeatureSet subset(const std::vector<Index>& indices) const;

 private:
  Matrix data_;
};

struct PairConstraint {
  Index i = 0;
  Index j = 0;
  int y = 1;  // +1 similar, -1 dissimilar

  friend bool operator==(const PairConstraint&, const PairConstraint&) = default;
};

struct PairSet {
  int task_id = 0;
  std::string feature_ref;
  std::vector<PairConstraint> constraints;

  bool empty() const { return constraints.empty(); }
  std::size_t size() const { return constraints.size(); }
};

/// One task's training data: its constraints plus the features they index into.
struct Task {
  std::shared_ptr<const FeatureSet> features;
  PairSet pairs;
};

enum class Variant : std::uint8_t {
  kCpMtml = 0,
  kStml = 1,
  kUtml = 2,
  kMtLmca = 3,
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

bool all_finite(const Matrix& m);

}  // namespace cpmtml
