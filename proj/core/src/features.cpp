#include "wr/features.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <string>

#include "wr/io.hpp"
#include "wr/rng.hpp"

namespace wr::features {

namespace {

double squared_distance(const double* a, const double* b, Index dim) {
  double sum = 0.0;
  for (Index j = 0; j < dim; ++j) {
    const double diff = a[j] - b[j];
    sum += diff * diff;
  }
  return sum;
}

// Flip each axis so its largest-magnitude coordinate is positive; eigen
// solvers leave the sign arbitrary.
void canonicalize_signs(Matrix& basis) {
  for (Index r = 0; r < basis.rows(); ++r) {
    Index arg = 0;
    basis.row(r).cwiseAbs().maxCoeff(&arg);
    if (basis(r, arg) < 0.0) basis.row(r) *= -1.0;
  }
}

}  // namespace

Vector hellinger_normalize(const Vector& descriptor) {
  require(descriptor.allFinite(), "hellinger_normalize: non-finite descriptor entry");
  for (Index i = 0; i < descriptor.size(); ++i) {
    if (descriptor[i] < 0.0) {
      throw ValidationError("hellinger_normalize: negative entry " + std::to_string(descriptor[i]) +
                            " at index " + std::to_string(i));
    }
  }
  Vector root = descriptor.cwiseSqrt();
  const double l1 = root.sum();
  if (l1 == 0.0) return Vector::Zero(descriptor.size());
  return root / l1;
}

Matrix hellinger_normalize_rows(const Matrix& descriptors) {
  Matrix out(descriptors.rows(), descriptors.cols());
  for (Index i = 0; i < descriptors.rows(); ++i) {
    out.row(i) = hellinger_normalize(descriptors.row(i).transpose()).transpose();
  }
  return out;
}

Vector PcaModel::transform(const Vector& x) const {
  require(x.size() == input_dim(), "pca_transform: dimension " + std::to_string(x.size()) +
                                       " does not match model input " + std::to_string(input_dim()));
  return scale.cwiseProduct(basis * (x - mean));
}

Matrix PcaModel::transform_rows(const Matrix& xs) const {
  require(xs.cols() == input_dim(), "pca_transform: dimension " + std::to_string(xs.cols()) +
                                        " does not match model input " + std::to_string(input_dim()));
  Matrix centered = xs.rowwise() - mean.transpose();
  Matrix projected = centered * basis.transpose();
  return projected * scale.asDiagonal();
}

void PcaModel::save_to(io::ModelFile& file, const std::string& prefix) const {
  file.add(prefix + ".mean", mean);
  file.add(prefix + ".basis", basis);
  file.add(prefix + ".scale", scale);
  file.add(prefix + ".eigenvalues", eigenvalues);
  file.meta()[prefix + ".whiten"] = whiten;
}

PcaModel PcaModel::load_from(const io::ModelFile& file, const std::string& prefix) {
  PcaModel model;
  model.mean = file.get_vector(prefix + ".mean");
  model.basis = file.get(prefix + ".basis");
  model.scale = file.get_vector(prefix + ".scale");
  model.eigenvalues = file.get_vector(prefix + ".eigenvalues");
  model.whiten = file.meta().at(prefix + ".whiten").get<bool>();
  if (model.basis.cols() != model.mean.size() || model.scale.size() != model.basis.rows()) {
    throw IoError("inconsistent PCA model shapes under '" + prefix + "'");
  }
  return model;
}

PcaModel fit_pca(const Matrix& data, Index target_dim, bool whiten) {
  const Index n = data.rows();
  const Index dim = data.cols();
  require(target_dim >= 1, "fit_pca: target_dim must be at least 1");
  require(target_dim <= dim, "fit_pca: target_dim " + std::to_string(target_dim) +
                                 " exceeds input dimension " + std::to_string(dim));
  require(n > target_dim, "fit_pca: need more samples than target_dim (" + std::to_string(n) +
                              " samples, target_dim " + std::to_string(target_dim) + ")");
  require(data.allFinite(), "fit_pca: non-finite data");

  PcaModel model;
  model.whiten = whiten;
  model.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  Vector eigenvalues;  // descending
  Matrix axes;         // one axis per row, matching eigenvalues

  if (n > dim) {
    const Matrix cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw ValidationError("fit_pca: eigensolver failed");
    eigenvalues = solver.eigenvalues().reverse();
    axes = solver.eigenvectors().rowwise().reverse().transpose();
  } else {
    const Matrix gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw ValidationError("fit_pca: eigensolver failed");
    eigenvalues = solver.eigenvalues().reverse();
    const Eigen::MatrixXd u = solver.eigenvectors().rowwise().reverse();
    axes.resize(std::min(n, dim), dim);
    for (Index k = 0; k < axes.rows(); ++k) {
      const double lambda = std::max(eigenvalues[k], 0.0);
      if (lambda > 0.0) {
        axes.row(k) = (centered.transpose() * u.col(k)).transpose() / std::sqrt(denom * lambda);
      } else {
        axes.row(k).setZero();
      }
    }
    eigenvalues.conservativeResize(axes.rows());
  }

  const double largest = std::max(eigenvalues.size() > 0 ? eigenvalues[0] : 0.0, 0.0);
  const double tolerance =
      largest * static_cast<double>(std::max(n, dim)) * std::numeric_limits<double>::epsilon() * 16.0;
  Index rank = 0;
  for (Index k = 0; k < eigenvalues.size(); ++k) {
    if (eigenvalues[k] > tolerance && eigenvalues[k] > 0.0) ++rank;
  }
  if (rank < target_dim) {
    throw ValidationError("fit_pca: degenerate data, centered rank is " + std::to_string(rank) +
                          " but target_dim is " + std::to_string(target_dim));
  }

  model.basis = axes.topRows(target_dim);
  canonicalize_signs(model.basis);
  model.eigenvalues = eigenvalues.head(target_dim);
  model.scale = whiten ? Vector(model.eigenvalues.cwiseSqrt().cwiseInverse())
                       : Vector(Vector::Ones(target_dim));
  return model;
}

Vector pca_transform(const PcaModel& model, const Vector& x) { return model.transform(x); }

Index nearest_center(const Matrix& centers, const Vector& x) {
  require(centers.rows() > 0, "nearest_center: no centers");
  require(x.size() == centers.cols(), "nearest_center: dimension mismatch");
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < centers.rows(); ++k) {
    const double d = squared_distance(x.data(), centers.row(k).data(), x.size());
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ClusterModel fit_kmeans(const Matrix& data, Index n_clusters, std::uint64_t seed,
                        const KMeansOptions& options) {
  const Index n = data.rows();
  const Index dim = data.cols();
  require(n_clusters >= 1, "fit_kmeans: n_clusters must be positive");
  require(n >= n_clusters, "fit_kmeans: " + std::to_string(n) + " points cannot form " +
                               std::to_string(n_clusters) + " clusters");
  require(data.allFinite(), "fit_kmeans: non-finite data");

  Rng rng(seed);
  ClusterModel model;
  model.centers.resize(n_clusters, dim);

  // k-means++ seeding
  std::vector<double> closest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Index pick = static_cast<Index>(rng.index(static_cast<std::size_t>(n)));
  for (Index k = 0; k < n_clusters; ++k) {
    if (k > 0) {
      double total = 0.0;
      for (double c : closest) total += c;
      if (total <= 0.0) {
        throw ValidationError("fit_kmeans: data has fewer than " + std::to_string(n_clusters) +
                              " distinct points");
      }
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      pick = -1;
      for (Index i = 0; i < n; ++i) {
        if (closest[i] <= 0.0) continue;
        cumulative += closest[i];
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        // rounding pushed target past the sum; take the last eligible point
        for (Index i = n - 1; i >= 0; --i) {
          if (closest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    model.centers.row(k) = data.row(pick);
    for (Index i = 0; i < n; ++i) {
      closest[i] = std::min(closest[i], squared_distance(data.row(i).data(), data.row(pick).data(), dim));
    }
  }

  std::vector<Index> assignment(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  auto assign = [&]() {
    double inertia = 0.0;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      const double* row = data.row(i).data();
      for (Index k = 0; k < n_clusters; ++k) {
        const double d = squared_distance(row, model.centers.row(k).data(), dim);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      assignment[i] = best;
      dist[i] = best_d;
      inertia += best_d;
    }
    return inertia;
  };

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const double inertia = assign();
    assert(model.inertia_trace.empty() ||
           inertia <= model.inertia_trace.back() * (1.0 + 1e-9) + 1e-12);
    model.inertia_trace.push_back(inertia);
    model.iterations = iter + 1;

    Matrix sums = Matrix::Zero(n_clusters, dim);
    std::vector<Index> counts(static_cast<std::size_t>(n_clusters), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assignment[i]) += data.row(i);
      ++counts[assignment[i]];
    }
    Matrix updated(n_clusters, dim);
    for (Index k = 0; k < n_clusters; ++k) {
      if (counts[k] > 0) {
        updated.row(k) = sums.row(k) / static_cast<double>(counts[k]);
      } else {
        Index far = 0;
        for (Index i = 1; i < n; ++i) {
          if (dist[i] > dist[far]) far = i;
        }
        updated.row(k) = data.row(far);
        dist[far] = 0.0;
      }
    }
    double movement = 0.0;
    for (Index k = 0; k < n_clusters; ++k) {
      movement = std::max(movement, (updated.row(k) - model.centers.row(k)).norm());
    }
    model.centers = std::move(updated);
    if (movement < options.tolerance) break;
  }

  model.inertia = assign();
  assert(model.inertia_trace.empty() || model.inertia <= model.inertia_trace.back() * (1.0 + 1e-9) + 1e-12);
  model.inertia_trace.push_back(model.inertia);
  return model;
}

PseudoLabeledSet assign_and_filter(const ClusterModel& model, const Matrix& data, double rho) {
  require(rho > 0.0 && rho <= 1.0, "assign_and_filter: rho must lie in (0, 1], got " + std::to_string(rho));
  require(model.n_clusters() >= 2, "assign_and_filter: need at least two centers");
  require(data.cols() == model.dim(), "assign_and_filter: descriptor dimension " +
                                          std::to_string(data.cols()) + " does not match centers " +
                                          std::to_string(model.dim()));
  PseudoLabeledSet out;
  for (Index i = 0; i < data.rows(); ++i) {
    Index first = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < model.n_clusters(); ++k) {
      const double d = squared_distance(data.row(i).data(), model.centers.row(k).data(), data.cols());
      if (d < d1) {
        d2 = d1;
        d1 = d;
        first = k;
      } else if (d < d2) {
        d2 = d;
      }
    }
    const double near = std::sqrt(d1);
    const double far = std::sqrt(d2);
    // An exact tie has no nearest center, so it is rejected even at rho = 1.
    const bool keep = d1 < d2 && (near == 0.0 || near / far <= rho);
    if (keep) {
      out.items.push_back({i, first});
    } else {
      out.rejected.push_back(i);
    }
  }
  return out;
}

}  // namespace wr::features
