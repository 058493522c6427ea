#pragma once

#include <cstdint>
#include <vector>

#include "wr/common.hpp"

namespace wr::io {
class ModelFile;
}

namespace wr::features {

/// Elementwise square root followed by l1 normalization (Hellinger kernel
/// map for histogram descriptors such as SIFT). Zero input maps to zero.
/// Throws ValidationError on negative or non-finite entries.
Vector hellinger_normalize(const Vector& descriptor);

/// Row-wise hellinger_normalize.
Matrix hellinger_normalize_rows(const Matrix& descriptors);

/// Linear projection `scale .* (basis * (x - mean))`.
///
/// `basis` holds one principal axis per row, sorted by decreasing variance;
/// `scale` is all-ones unless whitening, in which case it holds the reciprocal
/// square roots of the eigenvalues of the sample covariance (divisor n - 1).
struct PcaModel {
  Vector mean;
  Matrix basis;
  Vector scale;
  Vector eigenvalues;
  bool whiten = false;

  Index input_dim() const { return mean.size(); }
  Index output_dim() const { return basis.rows(); }

  Vector transform(const Vector& x) const;
  Matrix transform_rows(const Matrix& xs) const;

  void save_to(io::ModelFile& file, const std::string& prefix) const;
  static PcaModel load_from(const io::ModelFile& file, const std::string& prefix);
};

/// Fits the top `target_dim` principal components of `data` (one sample per
/// row). Uses the covariance eigenproblem when samples outnumber dimensions and
/// the Gram eigenproblem otherwise; both give the same axes.
///
/// Requires more samples than `target_dim`; throws ValidationError naming the
/// achieved rank when the centered data cannot support `target_dim` axes.
PcaModel fit_pca(const Matrix& data, Index target_dim, bool whiten);

Vector pca_transform(const PcaModel& model, const Vector& x);

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  // stop when no center moves farther than this
};

struct ClusterModel {
  Matrix centers;
  double inertia = 0.0;
  /// Inertia after every Lloyd assignment step; non-increasing.
  std::vector<double> inertia_trace;
  int iterations = 0;

  Index n_clusters() const { return centers.rows(); }
  Index dim() const { return centers.cols(); }
};

/// k-means++ seeding followed by Lloyd iterations (Euclidean). Deterministic in
/// (data, n_clusters, seed). Empty clusters are re-seeded at the point with the
/// largest distance to its center. Assignment ties go to the lowest index.
ClusterModel fit_kmeans(const Matrix& data, Index n_clusters, std::uint64_t seed,
                        const KMeansOptions& options = {});

/// Index of the nearest center, lowest index on ties.
Index nearest_center(const Matrix& centers, const Vector& x);

struct PseudoLabel {
  Index descriptor;
  Index label;
};

/// `items` and `rejected` partition the input indices; both ascending.
struct PseudoLabeledSet {
  std::vector<PseudoLabel> items;
  std::vector<Index> rejected;
};

/// Labels every descriptor with its nearest center and drops ambiguous ones:
/// kept iff ||d - mu_1|| / ||d - mu_2|| <= rho, mu_1 and mu_2 being the nearest
/// and second-nearest centers. Exact ties (ratio 1 with equal distances) are
/// always rejected. Requires 0 < rho <= 1 and at least two centers.
PseudoLabeledSet assign_and_filter(const ClusterModel& model, const Matrix& data, double rho);

}  // namespace wr::features
