#include "cpmtml/wpca.hpp"

#include <cmath>
#include <sstream>

namespace cpmtml {

namespace {

// Flip so the first component that is not numerically zero is positive.
void canonical_sign(Eigen::Ref<Vector> u) {
  const double scale = u.cwiseAbs().maxCoeff();
  if (scale == 0.0) return;
  for (Index i = 0; i < u.size(); ++i) {
    if (std::abs(u[i]) > 1e-8 * scale) {
      if (u[i] < 0) u = -u;
      return;
    }
  }
}

Matrix centered(const Matrix& x, const Vector& mean) { return x.rowwise() - mean.transpose(); }

}  // namespace

Matrix sample_covariance(const Matrix& x) {
  const Vector mean = x.colwise().mean().transpose();
  const Matrix xc = centered(x, mean);
  return (xc.transpose() * xc) / static_cast<double>(x.rows() - 1);
}

WpcaResult fit_wpca(const FeatureSet& samples, Index d, double epsilon, WpcaSolver solver) {
  const Index n = samples.count();
  const Index dim = samples.dim();
  if (n < 2) fail(ErrorKind::kInvalidArgument, "WPCA needs at least 2 samples");
  if (d < 1 || d > std::min(dim, n - 1)) {
    std::ostringstream os;
    os << "WPCA target dimension " << d << " outside [1, " << std::min(dim, n - 1) << "]";
    fail(ErrorKind::kInvalidArgument, os.str());
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::kInvalidArgument, "WPCA epsilon must be >= 0");
  if (!samples.matrix().allFinite()) fail(ErrorKind::kNonFinite, "WPCA input has non-finite values");

  if (solver == WpcaSolver::kAuto) solver = (n < dim) ? WpcaSolver::kGramDual : WpcaSolver::kPrimal;

  WpcaResult out;
  out.mean = samples.matrix().colwise().mean().transpose();
  const Matrix xc = centered(samples.matrix(), out.mean);
  const double norm = static_cast<double>(n - 1);

  Matrix basis(d, dim);  // unit eigenvectors as rows, largest first
  out.eigenvalues.resize(d);
  double lambda_max = 0.0;

  if (solver == WpcaSolver::kPrimal) {
    const Matrix cov = (xc.transpose() * xc) / norm;
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success) fail(ErrorKind::kDegenerateSpectrum, "covariance eigendecomposition failed");
    lambda_max = std::max(0.0, es.eigenvalues()[dim - 1]);
    for (Index k = 0; k < d; ++k) {
      const Index src = dim - 1 - k;
      out.eigenvalues[k] = std::max(0.0, es.eigenvalues()[src]);
      basis.row(k) = es.eigenvectors().col(src).transpose();
    }
  } else {
    const Matrix gram = (xc * xc.transpose()) / norm;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    if (es.info() != Eigen::Success) fail(ErrorKind::kDegenerateSpectrum, "Gram eigendecomposition failed");
    lambda_max = std::max(0.0, es.eigenvalues()[n - 1]);
    for (Index k = 0; k < d; ++k) {
      const Index src = n - 1 - k;
      const double lambda = std::max(0.0, es.eigenvalues()[src]);
      if (lambda <= 1e-12 * lambda_max || lambda == 0.0)
        fail(ErrorKind::kDegenerateSpectrum, "Gram spectrum has a zero eigenvalue inside the requested rank");
      out.eigenvalues[k] = lambda;
      Vector u = xc.transpose() * es.eigenvectors().col(src);
      u /= std::sqrt(norm * lambda);
      u.normalize();
      basis.row(k) = u.transpose();
    }
  }

  const double reg = epsilon * lambda_max;
  out.projection.resize(d, dim);
  for (Index k = 0; k < d; ++k) {
    const double denom = out.eigenvalues[k] + reg;
    if (!(denom > 1e-12 * lambda_max) || denom <= 0.0) {
      std::ostringstream os;
      os << "eigenvalue " << k << " is numerically zero; lower d or raise epsilon";
      fail(ErrorKind::kDegenerateSpectrum, os.str());
    }
    Vector u = basis.row(k).transpose();
    canonical_sign(u);
    out.projection.row(k) = u.transpose() / std::sqrt(denom);
  }
  return out;
}

}  // namespace cpmtml
