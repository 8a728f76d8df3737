#include "cpmtml/retrieval.hpp"

#include <charconv>
#include <ostream>

namespace cpmtml {

RetrievalIndex build_index(const FeatureSet& gallery, const Labels& labels, const CoupledModel& m, Index t) {
  if (gallery.empty()) fail(ErrorKind::kEmptySet, "cannot build an index over an empty gallery");
  RetrievalIndex idx(task_encoder(m, t));
  idx.add(gallery, labels);
  return idx;
}

int n_call_at_k(std::span<const std::uint8_t> relevance, Index n, Index k) {
  const auto limit = std::min<std::size_t>(relevance.size(), static_cast<std::size_t>(std::max<Index>(k, 0)));
  Index hits = 0;
  for (std::size_t r = 0; r < limit; ++r) hits += relevance[r] ? 1 : 0;
  return hits >= n ? 1 : 0;
}

double EvalReport::score_at(Index k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return scores[i];
  fail(ErrorKind::kInvalidArgument, "report has no score for K=" + std::to_string(k));
}

template <typename CodeT>
EvalReport evaluate(const BasicRetrievalIndex<CodeT>& idx, const FeatureSet& queries, const Labels& query_labels,
                    const EvalOptions& opt) {
  if (queries.empty()) fail(ErrorKind::kEmptySet, "no queries to evaluate");
  if (idx.size() == 0) fail(ErrorKind::kEmptySet, "empty gallery");
  if (static_cast<Index>(query_labels.size()) != queries.count())
    fail(ErrorKind::kInvalidArgument, "query label count does not match query count");
  if (opt.ks.empty()) fail(ErrorKind::kInvalidArgument, "no K values requested");
  if (opt.n_call < 1) fail(ErrorKind::kInvalidArgument, "n must be >= 1");
  for (Index k : opt.ks)
    if (k < 1) fail(ErrorKind::kInvalidArgument, "K must be >= 1");
  for (Label l : query_labels)
    if (l == kDistractorLabel) fail(ErrorKind::kInvalidArgument, "a query carries the distractor label");

  EvalReport rep;
  rep.ks = opt.ks;
  rep.n_call = opt.n_call;
  rep.n_queries = queries.count();
  rep.n_distractors = idx.distractor_count();
  const Index kmax = *std::max_element(opt.ks.begin(), opt.ks.end());

  std::vector<double> sums(opt.ks.size(), 0.0);
  rep.per_query.resize(static_cast<std::size_t>(queries.count()));
  for (Index q = 0; q < queries.count(); ++q) {
    auto nn = idx.search(idx.encode(queries.row(q)), kmax, opt.num_shards);
    std::vector<std::uint8_t> rel(nn.size());
    for (std::size_t r = 0; r < nn.size(); ++r) {
      const Label l = idx.label(nn[r].row);
      rel[r] = (l != kDistractorLabel && l == query_labels[static_cast<std::size_t>(q)]) ? 1 : 0;
    }
    auto& hits = rep.per_query[static_cast<std::size_t>(q)];
    hits.resize(opt.ks.size());
    for (std::size_t i = 0; i < opt.ks.size(); ++i) {
      hits[i] = static_cast<std::uint8_t>(n_call_at_k(rel, opt.n_call, opt.ks[i]));
      sums[i] += hits[i];
    }
    if (opt.keep_ranked) rep.ranked.push_back(std::move(nn));
  }
  for (double s : sums) rep.scores.push_back(s / static_cast<double>(queries.count()));
  return rep;
}

template EvalReport evaluate<double>(const RetrievalIndex&, const FeatureSet&, const Labels&, const EvalOptions&);
template EvalReport evaluate<float>(const CompactIndex&, const FeatureSet&, const Labels&, const EvalOptions&);

EvalReport evaluate(const FeatureSet& queries, const Labels& query_labels, const FeatureSet& gallery,
                    const Labels& gallery_labels, const FeatureSet* distractors, const Matrix& encoder,
                    const EvalOptions& opt) {
  if (gallery.empty()) fail(ErrorKind::kEmptySet, "empty gallery");
  if (queries.dim() != gallery.dim()) fail(ErrorKind::kDimensionMismatch, "queries and gallery differ in dimension");
  RetrievalIndex idx(encoder);
  idx.add(gallery, gallery_labels);
  if (distractors && !distractors->empty())
    idx.add(*distractors, Labels(static_cast<std::size_t>(distractors->count()), kDistractorLabel));
  return evaluate(idx, queries, query_labels, opt);
}

EvalReport evaluate(const FeatureSet& queries, const Labels& query_labels, const FeatureSet& gallery,
                    const Labels& gallery_labels, const FeatureSet* distractors, const CoupledModel& m, Index t,
                    const EvalOptions& opt) {
  return evaluate(queries, query_labels, gallery, gallery_labels, distractors, task_encoder(m, t), opt);
}

std::vector<ReportRow> report_rows(const EvalReport& rep, const std::string& method, const std::string& aux_task) {
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < rep.ks.size(); ++i)
    rows.push_back({method, aux_task, rep.ks[i], rep.scores[i], rep.n_queries, rep.n_distractors});
  return rows;
}

void write_report_csv(std::ostream& os, std::span<const ReportRow> rows) {
  os << "method,aux_task,K,score,n_queries,n_distractors\n";
  char buf[64];
  for (const auto& r : rows) {
    auto res = std::to_chars(buf, buf + sizeof buf, r.score);
    os << r.method << ',' << r.aux_task << ',' << r.k << ',' << std::string_view(buf, res.ptr - buf) << ','
       << r.n_queries << ',' << r.n_distractors << '\n';
  }
}

}  // namespace cpmtml
