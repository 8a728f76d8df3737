#include "cpmtml/pairs.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

namespace cpmtml {

namespace {

// Items grouped by label: `order` lists item indices class by class, and
// group `g` occupies order[begin[g], begin[g+1]).
struct LabelGroups {
  std::vector<Index> order;
  std::vector<Index> begin;
  std::vector<Index> group_of;  // item -> group
  std::vector<Index> pos_in_order;

  explicit LabelGroups(const Labels& labels) {
    std::map<Label, std::vector<Index>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(static_cast<Index>(i));
    group_of.resize(labels.size());
    pos_in_order.resize(labels.size());
    for (const auto& [label, members] : by_label) {
      const Index g = static_cast<Index>(begin.size());
      begin.push_back(static_cast<Index>(order.size()));
      for (Index i : members) {
        group_of[i] = g;
        pos_in_order[i] = static_cast<Index>(order.size());
        order.push_back(i);
      }
    }
    begin.push_back(static_cast<Index>(order.size()));
  }

  Index size_of(Index g) const { return begin[g + 1] - begin[g]; }
};

PairConstraint canonical(Index a, Index b, int y) {
  return a < b ? PairConstraint{a, b, y} : PairConstraint{b, a, y};
}

}  // namespace

// Drawing the first endpoint with weight equal to its number of valid partners,
// then the partner uniformly, gives every unordered valid pair probability 2/W.
PairSet generate_pairs(const Labels& labels, std::size_t n_pos, std::size_t n_neg, Rng& rng) {
  const Index n = static_cast<Index>(labels.size());
  if (n < 2) fail(ErrorKind::kInvalidArgument, "pair generation needs at least 2 items");
  if (n_pos + n_neg == 0) return {};

  const LabelGroups groups(labels);
  std::vector<double> pos_weight(n), neg_weight(n);
  for (Index i = 0; i < n; ++i) {
    const Index size = groups.size_of(groups.group_of[i]);
    pos_weight[i] = static_cast<double>(size - 1);
    neg_weight[i] = static_cast<double>(n - size);
  }
  const bool has_pos = std::any_of(pos_weight.begin(), pos_weight.end(), [](double w) { return w > 0; });
  const bool has_neg = std::any_of(neg_weight.begin(), neg_weight.end(), [](double w) { return w > 0; });
  if (n_pos > 0 && !has_pos) fail(ErrorKind::kNoPositiveSupport, "no positive support: every label occurs once");
  if (n_neg > 0 && !has_neg) fail(ErrorKind::kNoNegativeSupport, "no negative support: all labels are identical");

  PairSet out;
  out.constraints.reserve(n_pos + n_neg);

  if (n_pos > 0) {
    std::discrete_distribution<Index> first(pos_weight.begin(), pos_weight.end());
    for (std::size_t k = 0; k < n_pos; ++k) {
      const Index i = first(rng);
      const Index g = groups.group_of[i];
      // uniform over the group minus i
      std::uniform_int_distribution<Index> pick(0, groups.size_of(g) - 2);
      Index slot = groups.begin[g] + pick(rng);
      if (slot >= groups.pos_in_order[i]) ++slot;
      out.constraints.push_back(canonical(i, groups.order[slot], +1));
    }
  }
  if (n_neg > 0) {
    std::discrete_distribution<Index> first(neg_weight.begin(), neg_weight.end());
    for (std::size_t k = 0; k < n_neg; ++k) {
      const Index i = first(rng);
      const Index g = groups.group_of[i];
      // uniform over order[] with the group's block removed
      std::uniform_int_distribution<Index> pick(0, n - groups.size_of(g) - 1);
      Index slot = pick(rng);
      if (slot >= groups.begin[g]) slot += groups.size_of(g);
      out.constraints.push_back(canonical(i, groups.order[slot], -1));
    }
  }
  return out;
}

PairSet enumerate_pairs(const Labels& labels) {
  PairSet out;
  const Index n = static_cast<Index>(labels.size());
  for (int y : {+1, -1})
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if ((labels[i] == labels[j]) == (y > 0)) out.constraints.push_back({i, j, y});
  return out;
}

const PairConstraint& sample_constraint(const PairSet& ps, Rng& rng) {
  if (ps.empty()) fail(ErrorKind::kEmptySet, "cannot sample from an empty pair set");
  std::uniform_int_distribution<std::size_t> pick(0, ps.size() - 1);
  return ps.constraints[pick(rng)];
}

void validate_pairs(const PairSet& ps, Index count) {
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto& c = ps.constraints[k];
    std::ostringstream os;
    if (c.y != 1 && c.y != -1) {
      os << "constraint " << k << " has label " << c.y << ", expected -1 or 1";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
    if (c.i == c.j) {
      os << "constraint " << k << " pairs item " << c.i << " with itself";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
    if (c.i < 0 || c.j < 0 || c.i >= count || c.j >= count) {
      os << "constraint " << k << " indexes outside [0, " << count << ")";
      fail(ErrorKind::kInvalidArgument, os.str());
    }
  }
}

std::vector<Index> referenced_indices(const PairSet& ps) {
  std::vector<Index> idx;
  idx.reserve(2 * ps.size());
  for (const auto& c : ps.constraints) {
    idx.push_back(c.i);
    idx.push_back(c.j);
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

std::pair<PairSet, PairSet> split_pairs(const PairSet& ps, Rng& rng) {
  std::vector<std::size_t> perm(ps.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  PairSet a, b;
  a.task_id = b.task_id = ps.task_id;
  a.feature_ref = b.feature_ref = ps.feature_ref;
  const std::size_t half = (ps.size() + 1) / 2;
  for (std::size_t k = 0; k < perm.size(); ++k)
    (k < half ? a : b).constraints.push_back(ps.constraints[perm[k]]);
  return {std::move(a), std::move(b)};
}

}  // namespace cpmtml
