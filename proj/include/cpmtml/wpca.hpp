#pragma once

#include "cpmtml/types.hpp"

namespace cpmtml {

struct WpcaResult {
  Projection projection;  // d x D, row k = (lambda_k + eps)^(-1/2) u_k^T
  Vector mean;            // D
  Vector eigenvalues;     // d, non-increasing
};

enum class WpcaSolver {
  kAuto,      // primal when D <= kWpcaPrimalMaxDim and D <= N, Gram dual otherwise
  kPrimal,    // eigendecomposition of the D x D covariance
  kGramDual,  // eigendecomposition of the N x N Gram matrix
};

inline constexpr Index kWpcaPrimalMaxDim = 4096;

/// Whitened PCA on `samples` (rows). `epsilon` is relative to the largest
/// eigenvalue: the regularizer added to every eigenvalue is epsilon * lambda_max.
/// Covariance uses the unbiased 1/(N-1) normalization.
WpcaResult fit_wpca(const FeatureSet& samples, Index d, double epsilon = 1e-5,
                    WpcaSolver solver = WpcaSolver::kAuto);

/// Sample covariance (1/(N-1)) of the rows of `x` after centering.
Matrix sample_covariance(const Matrix& x);

}  // namespace cpmtml
