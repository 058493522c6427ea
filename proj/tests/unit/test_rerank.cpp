#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "wr/rerank.hpp"
#include "wr/retrieval.hpp"

using namespace wr;
using namespace wr::rerank;
using wr::test::vec;

namespace {

// Dense SGR: H <- rownorm(H + (M .* S) H), M the k-NN mask.
Matrix dense_sgr(const Matrix& x, Index k, Index layers, double gamma) {
  const Index n = x.rows();
  const Matrix s = x * x.transpose();
  Matrix h = (-(1.0 - s.array()).square() / gamma).exp().matrix();
  Matrix mask = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> others;
    for (Index j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    std::stable_sort(others.begin(), others.end(), [&](Index a, Index b) { return s(i, a) > s(i, b); });
    for (Index t = 0; t < k; ++t) mask(i, others[t]) = 1.0;
  }
  for (Index l = 0; l < layers; ++l) {
    Matrix next = h + mask.cwiseProduct(s) * h;
    for (Index i = 0; i < n; ++i) next.row(i).normalize();
    h = next;
  }
  return h;
}

Matrix stack(const PageSet& pages) { return stack_vectors(pages); }

}  // namespace

TEST(Graph, EdgeWeights) {
  EXPECT_DOUBLE_EQ(edge_weight(1.0, 0.4), 1.0);
  EXPECT_NEAR(edge_weight(0.0, 0.4), 0.0820849986238988, 1e-12);
  EXPECT_NEAR(edge_weight(-1.0, 1e6), 1.0, 1e-5);
  EXPECT_NEAR(edge_weight(0.0, 1e6), 1.0, 1e-6);
}

TEST(Graph, MonotoneGrids) {
  for (double gamma : {0.1, 0.4, 1.0, 3.0}) {
    for (double s = -0.95; s < 0.99; s += 0.05) EXPECT_LT(edge_weight(s, gamma), edge_weight(s + 0.05, gamma));
  }
  for (double s = -0.9; s < 0.99; s += 0.1) {
    for (double gamma = 0.1; gamma < 2.0; gamma += 0.1) EXPECT_GT(edge_weight(s, gamma + 0.1), edge_weight(s, gamma));
  }
}

TEST(Graph, BuildChecksNorm) {
  Rng rng(1);
  PageSet pages = wr::test::random_pages(5, 3, 2, rng);
  const auto g = build_similarity_graph(pages, 0.4);
  for (Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(g.adjacency(i, i), 1.0, 1e-12);
    for (Index j = 0; j < 5; ++j) EXPECT_NEAR(g.adjacency(i, j), g.adjacency(j, i), 1e-12);
  }
  pages[2].vector *= 2.0;
  EXPECT_THROW(build_similarity_graph(pages, 0.4), ValidationError);
  pages[2].vector /= 2.0;
  EXPECT_THROW(build_similarity_graph(pages, 0.0), ValidationError);
}

TEST(Sgr, TwoPagesOrthogonal) {
  PageSet pages{{"a", "A", vec({1, 0})}, {"b", "B", vec({0, 1})}};
  RerankConfig cfg;
  cfg.k = 1;
  const auto out = sgr(pages, cfg);
  const double e = std::exp(-2.5);
  const double norm = std::sqrt(1.0 + e * e);
  EXPECT_NEAR(out[0].vector[0], 1.0 / norm, 1e-12);
  EXPECT_NEAR(out[0].vector[1], e / norm, 1e-12);
  EXPECT_NEAR(out[1].vector[0], e / norm, 1e-12);
  EXPECT_NEAR(out[1].vector[1], 1.0 / norm, 1e-12);
}

TEST(Sgr, IdenticalPagesStayIdentical) {
  PageSet pages;
  for (int i = 0; i < 4; ++i) pages.push_back({wr::test::page_name(i), "w", wr::l2_normalized(vec({1, 2, 3}))});
  const auto out = sgr(pages, RerankConfig{});
  for (const auto& p : out) EXPECT_LT((p.vector - out[0].vector).norm(), 1e-12);
  EXPECT_NEAR(out[0].vector.dot(out[3].vector), 1.0, 1e-12);
}

TEST(Sgr, MatchesDenseOracle) {
  Rng rng(2);
  for (Index n = 3; n <= 10; ++n) {
    const PageSet pages = wr::test::random_pages(n, 4, 3, rng);
    for (Index layers : {1, 2, 3}) {
      RerankConfig cfg;
      cfg.k = std::min<Index>(2, n - 1);
      cfg.layers = layers;
      const Matrix got = stack(sgr(pages, cfg));
      const Matrix expected = dense_sgr(stack(pages), cfg.k, layers, cfg.gamma);
      EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-9) << "n=" << n << " L=" << layers;
      for (Index i = 0; i < n; ++i) EXPECT_NEAR(got.row(i).norm(), 1.0, 1e-9);
    }
  }
}

TEST(Sgr, PermutationEquivariant) {
  Rng rng(3);
  const PageSet pages = wr::test::random_pages(9, 5, 3, rng);
  const std::vector<std::size_t> perm{3, 7, 0, 8, 1, 5, 2, 6, 4};
  PageSet permuted;
  for (auto p : perm) permuted.push_back(pages[p]);
  const auto a = sgr(pages, RerankConfig{});
  const auto b = sgr(permuted, RerankConfig{});
  // Output coordinates follow page order, so they move with the permutation.
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < perm.size(); ++j) {
      EXPECT_NEAR(b[i].vector[static_cast<Index>(j)], a[perm[i]].vector[static_cast<Index>(perm[j])], 1e-15);
    }
  }
  const auto ra = retrieval::evaluate_pages(a, retrieval::IsolatedPolicy::exclude, true);
  const auto rb = retrieval::evaluate_pages(b, retrieval::IsolatedPolicy::exclude, true);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_EQ(rb.ranked[i].gallery, ra.ranked[perm[i]].gallery);
    EXPECT_EQ(rb.queries[i].average_precision, ra.queries[perm[i]].average_precision);
  }
  EXPECT_NEAR(ra.mean_average_precision, rb.mean_average_precision, 1e-15);
}

TEST(Sgr, Preconditions) {
  Rng rng(4);
  const PageSet pages = wr::test::random_pages(3, 2, 2, rng);
  RerankConfig cfg;
  cfg.k = 3;
  EXPECT_THROW(sgr(pages, cfg), ValidationError);
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Sgr, AdjacencyWeightingDiffers) {
  Rng rng(5);
  const PageSet pages = wr::test::random_pages(6, 3, 2, rng);
  RerankConfig cfg;
  cfg.weighting = Weighting::adjacency;
  const auto a = sgr(pages, cfg);
  cfg.weighting = Weighting::similarity;
  const auto s = sgr(pages, cfg);
  EXPECT_GT((stack(a) - stack(s)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NearestNeighbors, ExcludesSelfAndBreaksTiesByIndex) {
  Matrix s(4, 4);
  s << 1, 0.5, 0.5, 0.9, 0.5, 1, 0.2, 0.2, 0.5, 0.2, 1, 0.2, 0.9, 0.2, 0.2, 1;
  const auto nn = nearest_neighbors(s, 2);
  EXPECT_EQ(nn[0], (std::vector<Index>{3, 1}));
  EXPECT_EQ(nn[1], (std::vector<Index>{0, 2}));
}

TEST(KrnnQe, Cases) {
  PageSet lonely{{"a", "A", vec({1, 0})}, {"b", "A", wr::l2_normalized(vec({1, 0.1}))}, {"c", "B", vec({0, 1})}};
  const auto out = krnn_qe(lonely, 1);
  EXPECT_EQ(out[2].vector, lonely[2].vector);
  const Vector expected = wr::l2_normalized(lonely[0].vector + lonely[1].vector);
  EXPECT_LT((out[0].vector - expected).norm(), 1e-15);

  PageSet twins{{"a", "A", vec({0.6, 0.8})}, {"b", "A", vec({0.6, 0.8})}, {"c", "B", vec({1, 0})}};
  const auto t = krnn_qe(twins, 1);
  EXPECT_LT((t[0].vector - twins[0].vector).norm(), 1e-15);
}

TEST(KrnnQe, MatchesBruteForceOracle) {
  Rng rng(6);
  const PageSet pages = wr::test::random_pages(4, 3, 2, rng);
  const Index k = 2;
  auto knn = [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> c;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j != i) c.emplace_back(-pages[i].vector.dot(pages[j].vector), j);
    }
    std::sort(c.begin(), c.end());
    return std::vector<std::size_t>{c[0].second, c[1].second};
  };
  const auto out = krnn_qe(pages, k);
  for (std::size_t i = 0; i < 4; ++i) {
    Vector sum = pages[i].vector;
    for (std::size_t j : knn(i)) {
      const auto back = knn(j);
      if (std::find(back.begin(), back.end(), i) != back.end()) sum += pages[j].vector;
    }
    EXPECT_LT((out[i].vector - wr::l2_normalized(sum)).norm(), 1e-12);
  }
}

TEST(HardGraph, SaturatedNeighborhoodsAndOracle) {
  Rng rng(7);
  const PageSet pages = wr::test::random_pages(5, 4, 2, rng);
  const Matrix x = stack(pages);
  const Matrix s = x * x.transpose();
  auto knn = [&](Index i, Index k) {
    std::vector<Index> others;
    for (Index j = 0; j < 5; ++j) {
      if (j != i) others.push_back(j);
    }
    std::stable_sort(others.begin(), others.end(), [&](Index a, Index b) { return s(i, a) > s(i, b); });
    others.resize(static_cast<std::size_t>(k));
    return others;
  };
  for (Index k1 : {2, 4}) {
    const Index k2 = 2;
    Matrix member = Matrix::Zero(5, 5);
    for (Index i = 0; i < 5; ++i) {
      for (Index j : knn(i, k1)) member(i, j) = 1.0;
    }
    Matrix a = 0.5 * (member + member.transpose());
    a.diagonal().setOnes();
    if (k1 == 4) EXPECT_EQ(a, Matrix::Ones(5, 5));
    Matrix mask = Matrix::Zero(5, 5);
    for (Index i = 0; i < 5; ++i) {
      for (Index j : knn(i, k2)) mask(i, j) = 1.0;
    }
    Matrix h = a;
    for (int l = 0; l < 3; ++l) {
      Matrix next = h + mask.cwiseProduct(a) * h;
      for (Index i = 0; i < 5; ++i) next.row(i).normalize();
      h = next;
    }
    const Matrix got = stack(hard_graph_rerank(pages, k1, k2, 3));
    EXPECT_LT((got - h).cwiseAbs().maxCoeff(), 1e-9) << "k1=" << k1;
  }
  EXPECT_THROW(hard_graph_rerank(pages, 1, 2, 1), ValidationError);
  EXPECT_THROW(hard_graph_rerank(pages, 5, 2, 1), ValidationError);
}

TEST(RerankConfig, NamesRoundTrip) {
  for (auto m : {Method::sgr, Method::krnn_qe, Method::hard_graph}) EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("magic"), ValidationError);
  EXPECT_EQ(weighting_from_string("adjacency"), Weighting::adjacency);
}
