#include "wr/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace wr::retrieval {

double cosine_similarity(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::vector<RankedList> rank_all(const PageSet& pages) {
  require(pages.size() >= 2, "rank_all: need at least two pages");
  std::set<std::string> seen;
  for (const auto& page : pages) {
    require(seen.insert(page.page_id).second, "rank_all: duplicate page_id '" + page.page_id + "'");
  }
  const std::size_t n = pages.size();
  std::vector<Vector> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = pages[i].vector.norm();
    require(norm > 0.0, "rank_all: page '" + pages[i].page_id + "' has a zero embedding");
    unit[i] = pages[i].vector / norm;
  }

  std::vector<RankedList> out(n);
  std::vector<std::size_t> order;
  std::vector<double> score(n);
  for (std::size_t q = 0; q < n; ++q) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q) continue;
      score[j] = std::clamp(unit[q].dot(unit[j]), -1.0, 1.0);
      order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return pages[a].page_id < pages[b].page_id;
    });
    out[q].query = pages[q].page_id;
    out[q].gallery.reserve(order.size());
    out[q].scores.reserve(order.size());
    for (std::size_t j : order) {
      out[q].gallery.push_back(pages[j].page_id);
      out[q].scores.push_back(score[j]);
    }
  }
  return out;
}

RetrievalReport evaluate(const std::vector<RankedList>& ranked,
                         const std::map<std::string, std::string>& writer_of, IsolatedPolicy policy,
                         bool keep_ranked) {
  auto writer = [&](const std::string& page) -> const std::string& {
    auto it = writer_of.find(page);
    if (it == writer_of.end()) throw ValidationError("evaluate: page '" + page + "' has no writer_id");
    return it->second;
  };

  RetrievalReport report;
  double ap_sum = 0.0;
  double top1_sum = 0.0;
  for (const auto& list : ranked) {
    QueryResult result;
    result.query = list.query;
    const std::string& query_writer = writer(list.query);
    Index hits = 0;
    double precision_sum = 0.0;
    for (std::size_t i = 0; i < list.gallery.size(); ++i) {
      if (writer(list.gallery[i]) != query_writer) continue;
      ++hits;
      if (result.first_relevant_rank == 0) result.first_relevant_rank = static_cast<Index>(i + 1);
      precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    result.relevant = hits;
    result.top1_hit = !list.gallery.empty() && writer(list.gallery.front()) == query_writer;
    result.isolated = hits == 0;
    result.average_precision = hits > 0 ? precision_sum / static_cast<double>(hits) : 0.0;

    if (result.isolated) ++report.isolated_queries;
    if (!result.isolated || policy == IsolatedPolicy::score_zero) {
      ap_sum += result.average_precision;
      top1_sum += result.top1_hit ? 1.0 : 0.0;
      ++report.scored_queries;
    }
    report.queries.push_back(std::move(result));
  }
  if (report.scored_queries > 0) {
    report.mean_average_precision = ap_sum / static_cast<double>(report.scored_queries);
    report.top1 = top1_sum / static_cast<double>(report.scored_queries);
  }
  if (keep_ranked) report.ranked = ranked;
  return report;
}

RetrievalReport evaluate_pages(const PageSet& pages, IsolatedPolicy policy, bool keep_ranked) {
  std::map<std::string, std::string> writer_of;
  for (const auto& page : pages) writer_of[page.page_id] = page.writer_id;
  return evaluate(rank_all(pages), writer_of, policy, keep_ranked);
}

nlohmann::json RetrievalReport::to_json() const {
  nlohmann::json j;
  j["mAP"] = mean_average_precision;
  j["top1"] = top1;
  j["scored_queries"] = scored_queries;
  j["isolated_queries"] = isolated_queries;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& q : queries) {
    rows.push_back({{"query", q.query},
                    {"ap", q.average_precision},
                    {"top1_hit", q.top1_hit},
                    {"relevant", q.relevant},
                    {"first_relevant_rank", q.first_relevant_rank},
                    {"isolated", q.isolated}});
  }
  j["queries"] = std::move(rows);
  if (!ranked.empty()) {
    nlohmann::json lists = nlohmann::json::array();
    for (const auto& r : ranked) lists.push_back({{"query", r.query}, {"gallery", r.gallery}, {"scores", r.scores}});
    j["ranked"] = std::move(lists);
  }
  return j;
}

std::string RetrievalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "query,ap,top1_hit,first_relevant_rank\n";
  for (const auto& q : queries) {
    out << q.query << ',' << q.average_precision << ',' << (q.top1_hit ? 1 : 0) << ','
        << q.first_relevant_rank << '\n';
  }
  return out.str();
}

double mean_average_precision(const Matrix& similarity, std::span<const Index> labels) {
  const Index n = similarity.rows();
  require(similarity.cols() == n, "mean_average_precision: similarity must be square");
  require(static_cast<Index>(labels.size()) == n, "mean_average_precision: label count mismatch");
  std::vector<Index> order;
  double sum = 0.0;
  Index counted = 0;
  for (Index q = 0; q < n; ++q) {
    order.clear();
    for (Index j = 0; j < n; ++j) {
      if (j != q) order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (similarity(q, a) != similarity(q, b)) return similarity(q, a) > similarity(q, b);
      return a < b;
    });
    Index hits = 0;
    double precision_sum = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (labels[order[i]] != labels[q]) continue;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
    if (hits == 0) continue;
    sum += precision_sum / static_cast<double>(hits);
    ++counted;
  }
  return counted > 0 ? sum / static_cast<double>(counted) : 0.0;
}

}  // namespace wr::retrieval
