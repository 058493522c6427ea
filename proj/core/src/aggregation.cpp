#include "wr/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wr::aggregation {

Vector pool_page(const Matrix& encodings, const std::optional<std::vector<std::string>>& patch_ids) {
  require(encodings.rows() > 0, "pool_page: page has no patch encodings");
  std::vector<Index> order(static_cast<std::size_t>(encodings.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  if (patch_ids) {
    require(static_cast<Index>(patch_ids->size()) == encodings.rows(), "pool_page: patch id count mismatch");
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return (*patch_ids)[a] < (*patch_ids)[b]; });
  }
  Vector sum = Vector::Zero(encodings.cols());
  for (Index row : order) {
    const double norm = encodings.row(row).norm();
    if (!(norm > 0.0)) {
      const std::string name = patch_ids ? "'" + (*patch_ids)[row] + "'" : std::to_string(row);
      throw ValidationError("pool_page: patch " + name + " has a zero encoding");
    }
    sum += encodings.row(row).transpose() / norm;
  }
  return sum;
}

Vector signed_power(const Vector& v, double alpha) {
  require(alpha > 0.0 && alpha <= 1.0, "power_normalize: alpha must lie in (0, 1]");
  Vector out(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double a = std::pow(std::abs(v[i]), alpha);
    out[i] = v[i] < 0.0 ? -a : a;
  }
  return out;
}

Vector power_normalize(const Vector& v, double alpha) { return l2_normalized(signed_power(v, alpha)); }

namespace {

Matrix stack(const std::vector<RawPage>& pages) {
  require(!pages.empty(), "whiten_pages: no pages");
  const Index dim = pages.front().vector.size();
  Matrix out(static_cast<Index>(pages.size()), dim);
  for (std::size_t i = 0; i < pages.size(); ++i) {
    require(pages[i].vector.size() == dim, "whiten_pages: page '" + pages[i].page_id + "' has dimension " +
                                               std::to_string(pages[i].vector.size()) + ", expected " +
                                               std::to_string(dim));
    out.row(static_cast<Index>(i)) = pages[i].vector.transpose();
  }
  return out;
}

}  // namespace

PageSet apply_whitening(const std::vector<RawPage>& pages, const features::PcaModel& model) {
  PageSet out;
  out.reserve(pages.size());
  for (const auto& page : pages) {
    require(page.vector.size() == model.input_dim(), "apply_whitening: page '" + page.page_id +
                                                         "' does not match the whitening input dimension");
    Vector v = l2_normalized(model.transform(page.vector));
    require(v.norm() > 0.0, "apply_whitening: page '" + page.page_id + "' whitens to the zero vector");
    out.push_back({page.page_id, page.writer_id, std::move(v)});
  }
  return out;
}

WhitenResult whiten_pages(const std::vector<RawPage>& pages, Index target_dim, const std::vector<RawPage>* fit_set) {
  const auto& fit = fit_set ? *fit_set : pages;
  const Matrix data = stack(fit);
  const Index n = data.rows();
  require(n > 2, "whiten_pages: need more than two pages to fit whitening, got " + std::to_string(n));
  require(target_dim >= 1, "whiten_pages: target_dim must be positive");
  require(target_dim <= std::min(n - 1, data.cols()),
          "whiten_pages: target_dim " + std::to_string(target_dim) + " exceeds min(pages - 1, dim) = " +
              std::to_string(std::min(n - 1, data.cols())));
  WhitenResult result;
  result.model = features::fit_pca(data, target_dim, true);
  result.pages = apply_whitening(pages, result.model);
  return result;
}

}  // namespace wr::aggregation
