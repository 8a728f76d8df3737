#pragma once

// Compressed exact nearest-neighbour retrieval and n-call@K evaluation.

#include "cpmtml/core.hpp"

#include <algorithm>
#include <iosfwd>
#include <queue>
#include <span>
#include <sstream>
#include <unordered_set>

namespace cpmtml {

struct Neighbor {
  std::int64_t id = 0;
  double dist_sq = 0.0;
  Index row = 0;  // position inside the index

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Ascending distance, ties by ascending id.
inline bool closer(const Neighbor& a, const Neighbor& b) {
  return a.dist_sq < b.dist_sq || (a.dist_sq == b.dist_sq && a.id < b.id);
}

/// Gallery encoded through a fixed encoder matrix (see `task_encoder`), stored
/// contiguously row-major as `CodeT`. Squared code distances are accumulated in
/// double regardless of storage type.
template <typename CodeT>
class BasicRetrievalIndex {
 public:
  explicit BasicRetrievalIndex(Matrix encoder) : encoder_(std::move(encoder)) {
    if (encoder_.rows() < 1 || encoder_.cols() < 1) fail(ErrorKind::kInvalidArgument, "empty encoder");
    if (!encoder_.allFinite()) fail(ErrorKind::kNonFinite, "encoder has non-finite entries");
  }

  /// Appends items; ids default to consecutive integers after the largest id so far.
  void add(const FeatureSet& items, const Labels& labels, std::span<const std::int64_t> ids = {}) {
    if (items.dim() != input_dim())
      fail(ErrorKind::kDimensionMismatch, "gallery dimension does not match the encoder");
    if (static_cast<Index>(labels.size()) != items.count())
      fail(ErrorKind::kInvalidArgument, "gallery label count does not match item count");
    if (!ids.empty() && static_cast<Index>(ids.size()) != items.count())
      fail(ErrorKind::kInvalidArgument, "gallery id count does not match item count");

    const Matrix codes = items.matrix() * encoder_.transpose();
    if (!codes.allFinite()) fail(ErrorKind::kNonFinite, "encoded gallery has non-finite entries");
    const Index len = code_length();
    for (Index r = 0; r < items.count(); ++r) {
      const std::int64_t id = ids.empty() ? next_id_ : ids[static_cast<std::size_t>(r)];
      if (!id_set_.insert(id).second) {
        std::ostringstream os;
        os << "duplicate gallery id " << id;
        fail(ErrorKind::kInvalidArgument, os.str());
      }
      next_id_ = std::max(next_id_, id + 1);
      ids_.push_back(id);
      labels_.push_back(labels[static_cast<std::size_t>(r)]);
      if (labels[static_cast<std::size_t>(r)] == kDistractorLabel) ++distractors_;
      for (Index k = 0; k < len; ++k) codes_.push_back(static_cast<CodeT>(codes(r, k)));
    }
  }

  /// Pre-allocates storage for `items` rows in total.
  void reserve(Index items) {
    codes_.reserve(static_cast<std::size_t>(items * code_length()));
    ids_.reserve(static_cast<std::size_t>(items));
    labels_.reserve(static_cast<std::size_t>(items));
    id_set_.reserve(static_cast<std::size_t>(items));
  }

  Index size() const { return static_cast<Index>(ids_.size()); }
  Index code_length() const { return encoder_.rows(); }
  Index input_dim() const { return encoder_.cols(); }
  Index distractor_count() const { return distractors_; }
  const Matrix& encoder() const { return encoder_; }

  std::int64_t id(Index r) const { return ids_[static_cast<std::size_t>(r)]; }
  Label label(Index r) const { return labels_[static_cast<std::size_t>(r)]; }
  std::span<const CodeT> code(Index r) const {
    return {codes_.data() + r * code_length(), static_cast<std::size_t>(code_length())};
  }
  std::size_t code_bytes() const { return codes_.size() * sizeof(CodeT); }

  Vector encode(const VectorRef& x) const {
    if (x.size() != input_dim()) fail(ErrorKind::kDimensionMismatch, "query dimension does not match the encoder");
    return encoder_ * x;
  }

  double code_distance_sq(const VectorRef& query_code, Index r) const {
    const CodeT* c = codes_.data() + r * code_length();
    double acc = 0.0;
    for (Index k = 0; k < code_length(); ++k) {
      const double diff = query_code[k] - static_cast<double>(c[k]);
      acc += diff * diff;
    }
    return acc;
  }

  /// K nearest rows to an already-encoded query, scanning `num_shards`
  /// contiguous shards and merging their partial top-K lists.
  std::vector<Neighbor> search(const VectorRef& query_code, Index k, Index num_shards = 1) const {
    if (k < 1) fail(ErrorKind::kInvalidArgument, "K must be >= 1");
    if (query_code.size() != code_length()) fail(ErrorKind::kDimensionMismatch, "query code length mismatch");
    if (size() == 0) fail(ErrorKind::kEmptySet, "index is empty");
    num_shards = std::clamp<Index>(num_shards, 1, size());
    const Index keep = std::min(k, size());

    std::vector<Neighbor> merged;
    merged.reserve(static_cast<std::size_t>(keep * num_shards));
    for (Index s = 0; s < num_shards; ++s) {
      const Index begin = size() * s / num_shards;
      const Index end = size() * (s + 1) / num_shards;
      auto part = scan(query_code, begin, end, keep);
      merged.insert(merged.end(), part.begin(), part.end());
    }
    std::sort(merged.begin(), merged.end(), closer);
    merged.resize(static_cast<std::size_t>(keep));
    return merged;
  }

 private:
  std::vector<Neighbor> scan(const VectorRef& query_code, Index begin, Index end, Index keep) const {
    auto worse_on_top = [](const Neighbor& a, const Neighbor& b) { return closer(a, b); };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse_on_top)> heap(worse_on_top);
    for (Index r = begin; r < end; ++r) {
      const Neighbor cand{ids_[static_cast<std::size_t>(r)], code_distance_sq(query_code, r), r};
      if (static_cast<Index>(heap.size()) < keep) {
        heap.push(cand);
      } else if (closer(cand, heap.top())) {
        heap.pop();
        heap.push(cand);
      }
    }
    std::vector<Neighbor> out;
    out.reserve(heap.size());
    while (!heap.empty()) {
      out.push_back(heap.top());
      heap.pop();
    }
    return out;
  }

  Matrix encoder_;
  std::vector<CodeT> codes_;
  std::vector<std::int64_t> ids_;
  Labels labels_;
  std::unordered_set<std::int64_t> id_set_;
  std::int64_t next_id_ = 0;
  Index distractors_ = 0;
};

using RetrievalIndex = BasicRetrievalIndex<double>;
/// 32-bit code storage for large galleries.
using CompactIndex = BasicRetrievalIndex<float>;

/// Index over `gallery` encoded with the task-t encoder of `m`.
RetrievalIndex build_index(const FeatureSet& gallery, const Labels& labels, const CoupledModel& m, Index t);

/// K nearest gallery items to `q`, ascending by squared code distance, ties by id.
template <typename CodeT>
std::vector<Neighbor> query_knn(const BasicRetrievalIndex<CodeT>& idx, const VectorRef& q, Index k,
                                Index num_shards = 1) {
  return idx.search(idx.encode(q), k, num_shards);
}

/// 1 iff at least n of the first min(K, size) entries are relevant.
int n_call_at_k(std::span<const std::uint8_t> relevance, Index n, Index k);

struct EvalReport {
  std::vector<Index> ks;
  std::vector<double> scores;  // mean n-call@K, aligned with ks
  Index n_call = 1;
  Index n_queries = 0;
  Index n_distractors = 0;
  std::vector<std::vector<std::uint8_t>> per_query;  // [query][k index] hit flags
  std::vector<std::vector<Neighbor>> ranked;         // filled when requested

  double score_at(Index k) const;
};

struct EvalOptions {
  std::vector<Index> ks{1, 2, 5, 10, 20};
  Index n_call = 1;
  Index num_shards = 1;
  bool keep_ranked = false;
};

/// Scores every query against a prebuilt index. Relevant means same label;
/// distractor-labelled items are never relevant.
template <typename CodeT>
EvalReport evaluate(const BasicRetrievalIndex<CodeT>& idx, const FeatureSet& queries, const Labels& query_labels,
                    const EvalOptions& opt);

/// Builds an index over gallery plus optional distractors and evaluates.
EvalReport evaluate(const FeatureSet& queries, const Labels& query_labels, const FeatureSet& gallery,
                    const Labels& gallery_labels, const FeatureSet* distractors, const Matrix& encoder,
                    const EvalOptions& opt);
EvalReport evaluate(const FeatureSet& queries, const Labels& query_labels, const FeatureSet& gallery,
                    const Labels& gallery_labels, const FeatureSet* distractors, const CoupledModel& m, Index t,
                    const EvalOptions& opt);

struct ReportRow {
  std::string method;
  std::string aux_task;
  Index k = 0;
  double score = 0.0;
  Index n_queries = 0;
  Index n_distractors = 0;
};

std::vector<ReportRow> report_rows(const EvalReport& rep, const std::string& method, const std::string& aux_task);

/// CSV with header method,aux_task,K,score,n_queries,n_distractors; scores are
/// written in shortest round-trip form.
void write_report_csv(std::ostream& os, std::span<const ReportRow> rows);

extern template EvalReport evaluate<double>(const RetrievalIndex&, const FeatureSet&, const Labels&,
                                            const EvalOptions&);
extern template EvalReport evaluate<float>(const CompactIndex&, const FeatureSet&, const Labels&,
                                           const EvalOptions&);

}  // namespace cpmtml
