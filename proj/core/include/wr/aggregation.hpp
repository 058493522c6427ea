#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wr/common.hpp"
#include "wr/features.hpp"
#include "wr/page.hpp"

namespace wr::aggregation {

/// l2-normalizes every encoding (one per row) and sums them. When `patch_ids`
/// is given, rows are summed in ascending id order so the result does not
/// depend on input order; otherwise in row order. Throws ValidationError on an
/// empty page or an all-zero encoding (the message names the patch).
Vector pool_page(const Matrix& encodings, const std::optional<std::vector<std::string>>& patch_ids = std::nullopt);

/// sign(x) |x|^alpha elementwise, then l2 normalization. Zero stays zero.
Vector power_normalize(const Vector& v, double alpha);

/// Elementwise signed power without the l2 step.
Vector signed_power(const Vector& v, double alpha);

struct RawPage {
  std::string page_id;
  std::string writer_id;
  Vector vector;
};

struct WhitenResult {
  PageSet pages;
  features::PcaModel model;
};

/// Fits a whitening PCA on `fit_set` (defaults to `pages` itself), projects
/// every page to `target_dim` and l2-normalizes. Requires more than two fit
/// pages and target_dim <= min(fit pages - 1, raw dim).
WhitenResult whiten_pages(const std::vector<RawPage>& pages, Index target_dim,
                          const std::vector<RawPage>* fit_set = nullptr);

/// Applies an already fitted model, then l2-normalizes.
PageSet apply_whitening(const std::vector<RawPage>& pages, const features::PcaModel& model);

}  // namespace wr::aggregation
