#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"
#include "wr/page.hpp"

namespace wr::retrieval {

/// a.b / (|a| |b|). Throws ValidationError on a zero vector or size mismatch.
double cosine_similarity(const Vector& a, const Vector& b);

/// Leave-one-out result for one query: the whole gallery ordered by
/// descending cosine similarity, ties by ascending page_id.
struct RankedList {
  std::string query;
  std::vector<std::string> gallery;
  std::vector<double> scores;
};

/// One RankedList per page, in input order. Requires >= 2 pages, unique ids and
/// nonzero vectors.
std::vector<RankedList> rank_all(const PageSet& pages);

/// How queries without any same-writer gallery page are scored.
enum class IsolatedPolicy {
  exclude,  // left out of mAP / Top-1, counted separately
  score_zero,
};

struct QueryResult {
  std::string query;
  double average_precision = 0.0;
  bool top1_hit = false;
  Index relevant = 0;              // same-writer gallery size R
  Index first_relevant_rank = 0;   // 1-based; 0 when R = 0
  bool isolated = false;
};

struct RetrievalReport {
  std::vector<QueryResult> queries;
  double mean_average_precision = 0.0;
  double top1 = 0.0;
  Index scored_queries = 0;
  Index isolated_queries = 0;
  std::vector<RankedList> ranked;  // filled only when requested

  nlohmann::json to_json() const;
  /// Rows: query,ap,top1_hit,first_relevant_rank
  std::string to_csv() const;
};

/// AP(q) = (1/R) sum over relevant positions i of (hits up to i) / i.
RetrievalReport evaluate(const std::vector<RankedList>& ranked,
                         const std::map<std::string, std::string>& writer_of,
                         IsolatedPolicy policy = IsolatedPolicy::exclude, bool keep_ranked = false);

/// rank_all + evaluate using the writer ids carried by the pages.
RetrievalReport evaluate_pages(const PageSet& pages, IsolatedPolicy policy = IsolatedPolicy::exclude,
                               bool keep_ranked = false);

/// mAP of leave-one-out retrieval driven by a precomputed similarity matrix,
/// with integer class labels. Ties resolve to the lower index. Queries without
/// relevant items are skipped. Used for validation during training.
double mean_average_precision(const Matrix& similarity, std::span<const Index> labels);

}  // namespace wr::retrieval
