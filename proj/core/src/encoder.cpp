#include "wr/encoder.hpp"

#include <cmath>
#include <limits>

#include "wr/features.hpp"
#include "wr/io.hpp"
#include "wr/rng.hpp"

namespace wr::encoder {

namespace {

void check_dim(Index got, Index expected, const char* what) {
  if (got != expected) {
    throw ValidationError(std::string(what) + ": dimension " + std::to_string(got) + ", expected " +
                          std::to_string(expected));
  }
}

Vector activate(const Vector& z, Activation activation) {
  return activation == Activation::relu ? Vector(z.cwiseMax(0.0)) : z;
}

}  // namespace

std::string to_string(Activation activation) { return activation == Activation::relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + name + "' (expected relu or identity)");
}

Backbone::Backbone(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

Backbone Backbone::identity(Index dim) {
  return Backbone({DenseLayer{Matrix::Identity(dim, dim), Vector::Zero(dim), Activation::identity}});
}

Backbone Backbone::random(std::span<const Index> dims, std::uint64_t seed, Activation activation,
                          Activation output_activation) {
  require(dims.size() >= 2, "Backbone::random: need at least input and output dims");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l];
    const Index out = dims[l + 1];
    require(in > 0 && out > 0, "Backbone::random: layer sizes must be positive");
    const double half_width = std::sqrt(6.0 / static_cast<double>(in));
    DenseLayer layer{Matrix(out, in), Vector::Zero(out), l + 2 == dims.size() ? output_activation : activation};
    for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-half_width, half_width);
    layers.push_back(std::move(layer));
  }
  return Backbone(std::move(layers));
}

void Backbone::validate() const {
  require(!layers_.empty(), "backbone needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    require(layer.bias.size() == layer.weight.rows(),
            "backbone layer " + std::to_string(l) + ": bias size does not match weight rows");
    if (l > 0) {
      require(layer.weight.cols() == layers_[l - 1].weight.rows(),
              "backbone layer " + std::to_string(l) + ": input size does not chain");
    }
    require(layer.weight.allFinite() && layer.bias.allFinite(),
            "backbone layer " + std::to_string(l) + ": non-finite parameters");
  }
}

Index Backbone::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
Index Backbone::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

Vector Backbone::forward(const Vector& descriptor) const {
  check_dim(descriptor.size(), input_dim(), "backbone_forward");
  Vector h = descriptor;
  for (const auto& layer : layers_) h = activate(layer.weight * h + layer.bias, layer.activation);
  return h;
}

Vector backbone_forward(const Backbone& backbone, const Vector& descriptor) {
  return backbone.forward(descriptor);
}

std::string to_string(EncodingMode mode) { return mode == EncodingMode::netvlad ? "netvlad" : "netrvlad"; }

EncodingMode encoding_mode_from_string(const std::string& name) {
  if (name == "netvlad") return EncodingMode::netvlad;
  if (name == "netrvlad") return EncodingMode::netrvlad;
  throw ValidationError("unknown encoding mode '" + name + "' (expected netvlad or netrvlad)");
}

void Codebook::validate() const {
  require(n_clusters() >= 1, "codebook needs at least one cluster");
  require(assign_weights.rows() == n_clusters() && assign_weights.cols() == dim(),
          "codebook: assignment weights must be n_clusters x dim");
  require(assign_bias.size() == n_clusters(), "codebook: assignment bias must have n_clusters entries");
  require(centers.allFinite() && assign_weights.allFinite() && assign_bias.allFinite(),
          "codebook: non-finite parameters");
}

Vector soft_assign(const Codebook& codebook, const Vector& x) {
  check_dim(x.size(), codebook.dim(), "soft_assign");
  Vector logits = codebook.assign_weights * x + codebook.assign_bias;
  logits.array() -= logits.maxCoeff();
  Vector alpha = logits.array().exp();
  return alpha / alpha.sum();
}

Vector PatchEncoding::flatten() const {
  return Eigen::Map<const Vector>(residuals.data(), residuals.size());
}

PatchEncoding PatchEncoding::unflatten(const Vector& flat, Index n_clusters, Index dim) {
  require(flat.size() == n_clusters * dim, "PatchEncoding::unflatten: size mismatch");
  return PatchEncoding{Eigen::Map<const Matrix>(flat.data(), n_clusters, dim)};
}

PatchEncoding encode_patch(const Codebook& codebook, const Vector& x) {
  check_dim(x.size(), codebook.dim(), "encode_patch");
  const bool netvlad = codebook.mode == EncodingMode::netvlad;
  const Vector input = netvlad ? l2_normalized(x) : x;
  const Vector alpha = soft_assign(codebook, input);
  PatchEncoding out{Matrix(codebook.n_clusters(), codebook.dim())};
  for (Index k = 0; k < codebook.n_clusters(); ++k) {
    out.residuals.row(k) = alpha[k] * (input.transpose() - codebook.centers.row(k));
    if (netvlad) {
      const double norm = out.residuals.row(k).norm();
      if (norm > 0.0) out.residuals.row(k) /= norm;
    }
  }
  return out;
}

PatchEncoding encode_vlad_hard(const Matrix& centers, const Matrix& xs) {
  require(xs.rows() > 0, "encode_vlad_hard: no descriptors");
  require(centers.rows() > 0, "encode_vlad_hard: no centers");
  check_dim(xs.cols(), centers.cols(), "encode_vlad_hard");
  PatchEncoding out{Matrix::Zero(centers.rows(), centers.cols())};
  for (Index i = 0; i < xs.rows(); ++i) {
    const Index k = features::nearest_center(centers, xs.row(i).transpose());
    out.residuals.row(k) += xs.row(i) - centers.row(k);
  }
  return out;
}

Codebook init_codebook(EncodingMode mode, Index n_clusters, Index dim, std::uint64_t seed,
                       const std::optional<Matrix>& data_sample, double alpha_init) {
  require(n_clusters >= 1, "init_codebook: n_clusters must be positive");
  require(dim >= 1, "init_codebook: dim must be positive");
  Codebook cb;
  cb.mode = mode;

  if (mode == EncodingMode::netrvlad) {
    Rng rng(seed);
    const double half_width = 1.0 / std::sqrt(static_cast<double>(dim));
    cb.centers.resize(n_clusters, dim);
    cb.assign_weights.resize(n_clusters, dim);
    for (Index i = 0; i < cb.centers.size(); ++i) cb.centers.data()[i] = rng.uniform(-half_width, half_width);
    for (Index i = 0; i < cb.assign_weights.size(); ++i) {
      cb.assign_weights.data()[i] = rng.uniform(-half_width, half_width);
    }
    cb.assign_bias = Vector::Zero(n_clusters);
    cb.validate();
    return cb;
  }

  require(data_sample.has_value(), "init_codebook: netvlad mode needs a data sample");
  require(alpha_init > 1.0, "init_codebook: alpha_init must exceed 1");
  const Matrix& raw = *data_sample;
  require(raw.cols() == dim, "init_codebook: data sample dimension " + std::to_string(raw.cols()) +
                                 " does not match " + std::to_string(dim));
  Matrix sample(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.rows(); ++i) sample.row(i) = l2_normalized(raw.row(i).transpose()).transpose();

  const auto clusters = features::fit_kmeans(sample, n_clusters, seed);
  cb.centers = clusters.centers;

  double scale = 0.0;
  if (n_clusters >= 2) {
    double gap_sum = 0.0;
    for (Index i = 0; i < sample.rows(); ++i) {
      double d1 = std::numeric_limits<double>::infinity();
      double d2 = std::numeric_limits<double>::infinity();
      for (Index k = 0; k < n_clusters; ++k) {
        const double d = (sample.row(i) - cb.centers.row(k)).squaredNorm();
        if (d < d1) {
          d2 = d1;
          d1 = d;
        } else if (d < d2) {
          d2 = d;
        }
      }
      gap_sum += d2 - d1;
    }
    const double mean_gap = gap_sum / static_cast<double>(sample.rows());
    require(mean_gap > 0.0, "init_codebook: sample gives zero nearest/second-nearest gap");
    scale = std::log(alpha_init) / mean_gap;
  }
  cb.assign_weights = 2.0 * scale * cb.centers;
  cb.assign_bias = -scale * cb.centers.rowwise().squaredNorm();
  cb.validate();
  return cb;
}

Vector EncoderModel::encode(const Vector& descriptor) const {
  return encode_patch(codebook, backbone.forward(descriptor)).flatten();
}

Matrix EncoderModel::encode_rows(const Matrix& descriptors) const {
  Matrix out(descriptors.rows(), encoding_dim());
  for (Index i = 0; i < descriptors.rows(); ++i) {
    out.row(i) = encode(descriptors.row(i).transpose()).transpose();
  }
  return out;
}

void EncoderModel::save_to(io::ModelFile& file) const {
  auto& meta = file.meta();
  meta["mode"] = to_string(codebook.mode);
  meta["seed"] = seed;
  meta["n_clusters"] = codebook.n_clusters();
  meta["embedding_dim"] = codebook.dim();
  meta["input_dim"] = backbone.input_dim();
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < backbone.layers().size(); ++l) {
    const auto& layer = backbone.layers()[l];
    layers.push_back({{"in", layer.weight.cols()},
                      {"out", layer.weight.rows()},
                      {"activation", to_string(layer.activation)}});
    file.add("backbone." + std::to_string(l) + ".weight", layer.weight);
    file.add("backbone." + std::to_string(l) + ".bias", layer.bias);
  }
  meta["layers"] = std::move(layers);
  file.add("codebook.centers", codebook.centers);
  file.add("codebook.assign_weights", codebook.assign_weights);
  file.add("codebook.assign_bias", codebook.assign_bias);
}

EncoderModel EncoderModel::load_from(const io::ModelFile& file) {
  EncoderModel model;
  const auto& meta = file.meta();
  model.seed = meta.at("seed").get<std::uint64_t>();
  std::vector<DenseLayer> layers;
  const auto& spec = meta.at("layers");
  for (std::size_t l = 0; l < spec.size(); ++l) {
    DenseLayer layer;
    layer.weight = file.get("backbone." + std::to_string(l) + ".weight");
    layer.bias = file.get_vector("backbone." + std::to_string(l) + ".bias");
    try {
      layer.activation = activation_from_string(spec[l].at("activation").get<std::string>());
    } catch (const ValidationError& e) {
      throw IoError(std::string("corrupt encoder model: ") + e.what());
    }
    layers.push_back(std::move(layer));
  }
  try {
    model.backbone = Backbone(std::move(layers));
    model.codebook.mode = encoding_mode_from_string(meta.at("mode").get<std::string>());
    model.codebook.centers = file.get("codebook.centers");
    model.codebook.assign_weights = file.get("codebook.assign_weights");
    model.codebook.assign_bias = file.get_vector("codebook.assign_bias");
    model.codebook.validate();
    require(model.codebook.dim() == model.backbone.output_dim(), "codebook dim does not match backbone output");
  } catch (const ValidationError& e) {
    throw IoError(std::string("corrupt encoder model: ") + e.what());
  }
  return model;
}

}  // namespace wr::encoder
