#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"
#include "wr/page.hpp"

namespace wr::rerank {

/// s_ij = x_i . x_j over unit-norm embeddings and A_ij = exp(-(1 - s_ij)^2 / gamma).
struct SimilarityGraph {
  Matrix similarity;
  Matrix adjacency;
  double gamma = 0.0;
};

/// Inputs must have unit norm within 1e-6.
SimilarityGraph build_similarity_graph(const PageSet& pages, double gamma);

double edge_weight(double similarity, double gamma);

enum class Method { sgr, krnn_qe, hard_graph };
/// Which weight multiplies a neighbor's features during propagation.
enum class Weighting { similarity, adjacency };

std::string to_string(Method method);
Method method_from_string(const std::string& name);
std::string to_string(Weighting weighting);
Weighting weighting_from_string(const std::string& name);

struct RerankConfig {
  Method method = Method::sgr;
  Index k = 2;
  Index layers = 1;
  double gamma = 0.4;
  Index k1 = 4;  // hard_graph: neighborhood defining A
  Index k2 = 2;  // hard_graph: neighbors aggregated per layer
  Weighting weighting = Weighting::similarity;

  void validate() const;
  nlohmann::json to_json() const;
};

/// The k most similar other vertices of every row (self excluded), most
/// similar first, ties by ascending index.
std::vector<std::vector<Index>> nearest_neighbors(const Matrix& similarity, Index k);

/// Vertex features are the rows of A. Each layer adds the k nearest
/// neighbors' features weighted by s_ij (or A_ij) and l2-normalizes.
PageSet sgr(const PageSet& pages, const RerankConfig& cfg);

/// Mean of x_i and its reciprocal k nearest neighbors, l2-normalized.
PageSet krnn_qe(const PageSet& pages, Index k);

/// A_ij = 1 for mutual k1-NN, 1/2 for one-directional, 0 otherwise; A_ii = 1.
/// Rows of A are propagated over the k2 nearest neighbors with weight A_ij.
PageSet hard_graph_rerank(const PageSet& pages, Index k1, Index k2, Index layers);

/// Dispatches on cfg.method.
PageSet rerank(const PageSet& pages, const RerankConfig& cfg);

}  // namespace wr::rerank
