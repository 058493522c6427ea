#include "wr/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wr::rerank {

namespace {

constexpr double kNormTolerance = 1e-6;

// Explicit loops keep every entry's summation order independent of the page's
// position, which makes results permutation-equivariant bit for bit.
Matrix cosine_matrix(const PageSet& pages, bool require_unit) {
  const Index n = static_cast<Index>(pages.size());
  std::vector<Vector> unit(pages.size());
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const double norm = pages[i].vector.norm();
    if (require_unit) {
      require(std::abs(norm - 1.0) <= kNormTolerance,
              "rerank: page '" + pages[i].page_id + "' is not l2-normalized (norm " + std::to_string(norm) + ")");
      unit[i] = pages[i].vector;
    } else {
      require(norm > 0.0, "rerank: page '" + pages[i].page_id + "' has a zero embedding");
      unit[i] = pages[i].vector / norm;
    }
    if (i > 0) require(unit[i].size() == unit[0].size(), "rerank: embedding dimensions differ");
  }
  Matrix s(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Index d = 0; d < unit[i].size(); ++d) acc += unit[i][d] * unit[j][d];
      s(i, j) = acc;
    }
  }
  return s;
}

// h_i + sum_j w_ij h_j over the fixed neighbor lists, then l2 per row.
Matrix propagate(const Matrix& features, const std::vector<std::vector<Index>>& neighbors, const Matrix& weights,
                 Index layers) {
  Matrix h = features;
  for (Index l = 0; l < layers; ++l) {
    Matrix next(h.rows(), h.cols());
    for (Index i = 0; i < h.rows(); ++i) {
      Vector row = h.row(i).transpose();
      for (Index j : neighbors[static_cast<std::size_t>(i)]) row += weights(i, j) * h.row(j).transpose();
      next.row(i) = l2_normalized(row).transpose();
    }
    h = std::move(next);
  }
  return h;
}

PageSet with_vectors(const PageSet& pages, const Matrix& rows) {
  PageSet out = pages;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].vector = rows.row(static_cast<Index>(i)).transpose();
  return out;
}

}  // namespace

double edge_weight(double similarity, double gamma) {
  const double d = 1.0 - similarity;
  return std::exp(-(d * d) / gamma);
}

SimilarityGraph build_similarity_graph(const PageSet& pages, double gamma) {
  require(gamma > 0.0, "build_similarity_graph: gamma must be positive");
  require(!pages.empty(), "build_similarity_graph: no pages");
  SimilarityGraph g;
  g.gamma = gamma;
  g.similarity = cosine_matrix(pages, true);
  g.adjacency.resize(g.similarity.rows(), g.similarity.cols());
  for (Index i = 0; i < g.similarity.rows(); ++i) {
    for (Index j = 0; j < g.similarity.cols(); ++j) g.adjacency(i, j) = edge_weight(g.similarity(i, j), gamma);
  }
  return g;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::sgr: return "sgr";
    case Method::krnn_qe: return "krnn_qe";
    case Method::hard_graph: return "hard_graph";
  }
  return "sgr";
}

Method method_from_string(const std::string& name) {
  if (name == "sgr") return Method::sgr;
  if (name == "krnn_qe") return Method::krnn_qe;
  if (name == "hard_graph") return Method::hard_graph;
  throw ValidationError("unknown rerank method '" + name + "' (expected sgr, krnn_qe or hard_graph)");
}

std::string to_string(Weighting weighting) {
  return weighting == Weighting::similarity ? "similarity" : "adjacency";
}

Weighting weighting_from_string(const std::string& name) {
  if (name == "similarity") return Weighting::similarity;
  if (name == "adjacency") return Weighting::adjacency;
  throw ValidationError("unknown rerank weighting '" + name + "' (expected similarity or adjacency)");
}

void RerankConfig::validate() const {
  require(k >= 1, "rerank: k must be at least 1");
  require(layers >= 1, "rerank: layers must be at least 1");
  require(gamma > 0.0, "rerank: gamma must be positive");
  if (method == Method::hard_graph) {
    require(k2 >= 1 && k2 <= k1, "rerank: hard_graph needs 1 <= k2 <= k1");
  }
}

nlohmann::json RerankConfig::to_json() const {
  return {{"method", to_string(method)}, {"k", k},   {"layers", layers},
          {"gamma", gamma},              {"k1", k1}, {"k2", k2},
          {"weighting", to_string(weighting)}};
}

std::vector<std::vector<Index>> nearest_neighbors(const Matrix& similarity, Index k) {
  const Index n = similarity.rows();
  require(k >= 0 && k < n, "nearest_neighbors: k = " + std::to_string(k) + " needs at least k + 1 = " +
                               std::to_string(k + 1) + " pages, got " + std::to_string(n));
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(n));
  std::vector<Index> order;
  for (Index i = 0; i < n; ++i) {
    order.clear();
    for (Index j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    auto closer = [&](Index a, Index b) {
      if (similarity(i, a) != similarity(i, b)) return similarity(i, a) > similarity(i, b);
      return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
    out[static_cast<std::size_t>(i)].assign(order.begin(), order.begin() + k);
  }
  return out;
}

PageSet sgr(const PageSet& pages, const RerankConfig& cfg) {
  cfg.validate();
  const Index n = static_cast<Index>(pages.size());
  require(cfg.k < n, "sgr: k = " + std::to_string(cfg.k) + " must be smaller than the page count " +
                         std::to_string(n));
  const SimilarityGraph g = build_similarity_graph(pages, cfg.gamma);
  const auto neighbors = nearest_neighbors(g.similarity, cfg.k);
  const Matrix& weights = cfg.weighting == Weighting::similarity ? g.similarity : g.adjacency;
  return with_vectors(pages, propagate(g.adjacency, neighbors, weights, cfg.layers));
}

PageSet krnn_qe(const PageSet& pages, Index k) {
  const Index n = static_cast<Index>(pages.size());
  require(n >= 2, "krnn_qe: need at least two pages");
  require(k >= 1, "krnn_qe: k must be at least 1");
  const Index kk = std::min(k, n - 1);
  const Matrix s = cosine_matrix(pages, false);
  const auto knn = nearest_neighbors(s, kk);
  auto contains = [&](Index i, Index j) {
    const auto& list = knn[static_cast<std::size_t>(i)];
    return std::find(list.begin(), list.end(), j) != list.end();
  };
  PageSet out = pages;
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> members{i};
    for (Index j : knn[static_cast<std::size_t>(i)]) {
      if (contains(j, i)) members.push_back(j);
    }
    std::sort(members.begin(), members.end());
    Vector sum = Vector::Zero(pages[0].vector.size());
    for (Index j : members) sum += pages[static_cast<std::size_t>(j)].vector;
    out[static_cast<std::size_t>(i)].vector = l2_normalized(sum / static_cast<double>(members.size()));
  }
  return out;
}

PageSet hard_graph_rerank(const PageSet& pages, Index k1, Index k2, Index layers) {
  const Index n = static_cast<Index>(pages.size());
  require(k2 >= 1 && k2 <= k1, "hard_graph: need 1 <= k2 <= k1");
  require(k1 < n, "hard_graph: k1 = " + std::to_string(k1) + " must be smaller than the page count " +
                      std::to_string(n));
  require(layers >= 1, "hard_graph: layers must be at least 1");
  const Matrix s = cosine_matrix(pages, false);
  const auto knn1 = nearest_neighbors(s, k1);
  Matrix member = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j : knn1[static_cast<std::size_t>(i)]) member(i, j) = 1.0;
  }
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) a(i, j) = i == j ? 1.0 : 0.5 * (member(i, j) + member(j, i));
  }
  const auto knn2 = nearest_neighbors(s, k2);
  return with_vectors(pages, propagate(a, knn2, a, layers));
}

PageSet rerank(const PageSet& pages, const RerankConfig& cfg) {
  cfg.validate();
  switch (cfg.method) {
    case Method::sgr: return sgr(pages, cfg);
    case Method::krnn_qe: return krnn_qe(pages, cfg.k);
    case Method::hard_graph: return hard_graph_rerank(pages, cfg.k1, cfg.k2, cfg.layers);
  }
  return pages;
}

}  // namespace wr::rerank
