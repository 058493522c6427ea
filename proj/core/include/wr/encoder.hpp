#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wr/common.hpp"

namespace wr::io {
class ModelFile;
}

namespace wr::encoder {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::relu;
};

/// Affine/activation stack mapping a local descriptor to the embedding fed to
/// the codebook. Stands in for a convolutional backbone; any model producing a
/// fixed-size vector per descriptor can replace it.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(std::vector<DenseLayer> layers);

  /// One identity-activation layer with identity weights and zero bias.
  static Backbone identity(Index dim);
  /// He-uniform weights (half-width sqrt(6 / fan_in)), zero biases. Hidden
  /// layers use `activation`, the last one `output_activation`. `dims` lists
  /// input, hidden and output sizes.
  static Backbone random(std::span<const Index> dims, std::uint64_t seed,
                         Activation activation = Activation::relu,
                         Activation output_activation = Activation::relu);

  Index input_dim() const;
  Index output_dim() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Vector forward(const Vector& descriptor) const;

 private:
  void validate() const;
  std::vector<DenseLayer> layers_;
};

Vector backbone_forward(const Backbone& backbone, const Vector& descriptor);

enum class EncodingMode { netvlad, netrvlad };

std::string to_string(EncodingMode mode);
std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);
EncodingMode encoding_mode_from_string(const std::string& name);

/// Learnable VLAD parameters: centers c_k, soft-assignment weights w_k and
/// biases b_k. Rows index clusters.
struct Codebook {
  Matrix centers;
  Matrix assign_weights;
  Vector assign_bias;
  EncodingMode mode = EncodingMode::netrvlad;

  Index n_clusters() const { return centers.rows(); }
  Index dim() const { return centers.cols(); }
  void validate() const;
};

/// Softmax over clusters of w_k . x + b_k (max-subtracted).
Vector soft_assign(const Codebook& codebook, const Vector& x);

/// Residual matrix V (n_clusters x dim) of one embedding. The flattened form
/// is row-major: all of cluster 0, then cluster 1, ...
struct PatchEncoding {
  Matrix residuals;

  Vector flatten() const;
  static PatchEncoding unflatten(const Vector& flat, Index n_clusters, Index dim);
};

/// V_k = alpha_k(x) (x - c_k). In netvlad mode x is l2-normalized before the
/// assignment and each row V_k is l2-normalized afterwards; netrvlad applies
/// neither.
PatchEncoding encode_patch(const Codebook& codebook, const Vector& x);

/// Classic VLAD with hard assignment: v_k sums x - c_k over the inputs whose
/// nearest center (Euclidean, lowest index on ties) is k.
PatchEncoding encode_vlad_hard(const Matrix& centers, const Matrix& xs);

/// netrvlad: centers and weights uniform in [-1/sqrt(D), 1/sqrt(D)], biases 0.
/// netvlad: `data_sample` rows are l2-normalized and clustered into the
/// centers; w_k = 2a c_k, b_k = -a ||c_k||^2 with
/// a = log(alpha_init) / mean(||x - c_2nd||^2 - ||x - c_1st||^2), so the ratio
/// of the two largest assignments averages alpha_init in the log domain.
Codebook init_codebook(EncodingMode mode, Index n_clusters, Index dim, std::uint64_t seed,
                       const std::optional<Matrix>& data_sample = std::nullopt,
                       double alpha_init = 100.0);

/// Backbone followed by codebook: maps a local descriptor to its flattened
/// patch encoding.
struct EncoderModel {
  Backbone backbone;
  Codebook codebook;
  std::uint64_t seed = 0;

  Index input_dim() const { return backbone.input_dim(); }
  Index encoding_dim() const { return codebook.n_clusters() * codebook.dim(); }

  Vector encode(const Vector& descriptor) const;
  /// Encodes every row; output row i is the flattened encoding of row i.
  Matrix encode_rows(const Matrix& descriptors) const;

  void save_to(io::ModelFile& file) const;
  static EncoderModel load_from(const io::ModelFile& file);
};

}  // namespace wr::encoder
