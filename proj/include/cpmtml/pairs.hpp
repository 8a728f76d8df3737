#pragma once

#include "cpmtml/types.hpp"

namespace cpmtml {

/// Samples `n_pos` same-label and `n_neg` different-label constraints, each
/// uniformly with replacement over the valid unordered pairs, stored as i < j.
PairSet generate_pairs(const Labels& labels, std::size_t n_pos, std::size_t n_neg, Rng& rng);

/// Every valid unordered pair, positives first, each group in (i, j) lexicographic order.
PairSet enumerate_pairs(const Labels& labels);

/// Uniform draw with replacement.
const PairConstraint& sample_constraint(const PairSet& ps, Rng& rng);

/// Throws unless every constraint has i != j, y in {-1, +1}, and indices below `count`.
void validate_pairs(const PairSet& ps, Index count);

/// Sorted distinct item indices referenced by the constraints.
std::vector<Index> referenced_indices(const PairSet& ps);

/// Splits constraints into two halves after a seeded shuffle (first half gets the extra one).
std::pair<PairSet, PairSet> split_pairs(const PairSet& ps, Rng& rng);

}  // namespace cpmtml
