#include "wr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "wr/retrieval.hpp"

namespace wr::trainer {

using encoder::Activation;
using encoder::EncoderModel;
using encoder::EncodingMode;

double triplet_loss(double d_ap, double d_an, double margin) { return std::max(0.0, d_ap - d_an + margin); }

std::string to_string(MiningRule rule) {
  switch (rule) {
    case MiningRule::hard: return "hard";
    case MiningRule::semi_hard: return "semi_hard";
    case MiningRule::batch_hard: return "batch_hard";
  }
  return "hard";
}

MiningRule mining_rule_from_string(const std::string& name) {
  if (name == "hard") return MiningRule::hard;
  if (name == "semi_hard") return MiningRule::semi_hard;
  if (name == "batch_hard") return MiningRule::batch_hard;
  throw ValidationError("unknown mining rule '" + name + "' (expected hard, semi_hard or batch_hard)");
}

namespace {

Matrix pairwise_distances(const Matrix& encodings) {
  const Index n = encodings.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (encodings.row(i) - encodings.row(j)).norm();
    }
  }
  return d;
}

struct Candidate {
  Index positive = -1;
  Index negative = -1;
};

// Hardest positive (max distance) and hardest negative (min distance); ties
// keep the lowest index because comparisons are strict.
Candidate hardest(const Matrix& dist, std::span<const Index> labels, Index anchor) {
  Candidate c;
  double pos_d = -1.0;
  double neg_d = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < dist.rows(); ++j) {
    if (j == anchor) continue;
    if (labels[j] == labels[anchor]) {
      if (dist(anchor, j) > pos_d) {
        pos_d = dist(anchor, j);
        c.positive = j;
      }
    } else if (dist(anchor, j) < neg_d) {
      neg_d = dist(anchor, j);
      c.negative = j;
    }
  }
  return c;
}

}  // namespace

std::vector<Triplet> mine_hard_triplets(const Matrix& encodings, std::span<const Index> labels, double margin,
                                        MiningRule rule) {
  require(static_cast<Index>(labels.size()) == encodings.rows(), "mine_hard_triplets: label count mismatch");
  const Matrix dist = pairwise_distances(encodings);
  std::vector<Triplet> out;
  for (Index a = 0; a < encodings.rows(); ++a) {
    const Candidate c = hardest(dist, labels, a);
    if (c.positive < 0 || c.negative < 0) continue;
    const double d_ap = dist(a, c.positive);
    switch (rule) {
      case MiningRule::hard:
        if (dist(a, c.negative) < d_ap - margin) out.push_back({a, c.positive, c.negative});
        break;
      case MiningRule::batch_hard:
        if (dist(a, c.negative) < d_ap + margin) out.push_back({a, c.positive, c.negative});
        break;
      case MiningRule::semi_hard: {
        Index best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (Index j = 0; j < encodings.rows(); ++j) {
          if (labels[j] == labels[a] || dist(a, j) <= d_ap) continue;
          if (dist(a, j) < best_d) {
            best_d = dist(a, j);
            best = j;
          }
        }
        if (best >= 0 && best_d < d_ap + margin) out.push_back({a, c.positive, best});
        break;
      }
    }
  }
  return out;
}

double batch_hard_loss(const Matrix& encodings, std::span<const Index> labels, double margin) {
  require(static_cast<Index>(labels.size()) == encodings.rows(), "batch_hard_loss: label count mismatch");
  const Matrix dist = pairwise_distances(encodings);
  double sum = 0.0;
  Index count = 0;
  for (Index a = 0; a < encodings.rows(); ++a) {
    const Candidate c = hardest(dist, labels, a);
    if (c.positive < 0 || c.negative < 0) continue;
    sum += triplet_loss(dist(a, c.positive), dist(a, c.negative), margin);
    ++count;
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

namespace {

// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardCache {
  std::vector<Vector> layer_inputs;  // input of every backbone layer
  std::vector<Vector> pre_activations;
  Vector embedding;  // backbone output x
  double embedding_norm = 0.0;
  Vector assign_input;  // x, or x / |x| in netvlad mode
  Vector alpha;
  Matrix residuals;  // alpha_k (u - c_k), before intra-normalization
  Vector row_norms;
  Vector encoding;  // flattened output
};

ForwardCache forward_cached(const EncoderModel& model, const Vector& input) {
  ForwardCache cache;
  Vector h = input;
  for (const auto& layer : model.backbone.layers()) {
    cache.layer_inputs.push_back(h);
    Vector z = layer.weight * h + layer.bias;
    h = layer.activation == Activation::relu ? Vector(z.cwiseMax(0.0)) : z;
    cache.pre_activations.push_back(std::move(z));
  }
  cache.embedding = h;
  cache.embedding_norm = h.norm();

  const auto& cb = model.codebook;
  const bool netvlad = cb.mode == EncodingMode::netvlad;
  cache.assign_input = netvlad ? l2_normalized(h) : h;
  cache.alpha = encoder::soft_assign(cb, cache.assign_input);
  cache.residuals.resize(cb.n_clusters(), cb.dim());
  cache.row_norms.resize(cb.n_clusters());
  Matrix out(cb.n_clusters(), cb.dim());
  for (Index k = 0; k < cb.n_clusters(); ++k) {
    cache.residuals.row(k) = cache.alpha[k] * (cache.assign_input.transpose() - cb.centers.row(k));
    cache.row_norms[k] = cache.residuals.row(k).norm();
    out.row(k) = cache.residuals.row(k);
    if (netvlad && cache.row_norms[k] > 0.0) out.row(k) /= cache.row_norms[k];
  }
  cache.encoding = Eigen::Map<const Vector>(out.data(), out.size());
  return cache;
}

EncoderModel zeros_like(const EncoderModel& model) {
  EncoderModel g = model;
  for (auto& layer : g.backbone.layers()) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  g.codebook.centers.setZero();
  g.codebook.assign_weights.setZero();
  g.codebook.assign_bias.setZero();
  return g;
}

// Accumulates d(loss)/d(params) for one item given d(loss)/d(encoding).
void backprop_item(const EncoderModel& model, const ForwardCache& cache, const Vector& grad_encoding,
                   EncoderModel& grad) {
  const auto& cb = model.codebook;
  const bool netvlad = cb.mode == EncodingMode::netvlad;
  const Index n_c = cb.n_clusters();
  const Index dim = cb.dim();

  Matrix g_res = Eigen::Map<const Matrix>(grad_encoding.data(), n_c, dim);
  if (netvlad) {
    for (Index k = 0; k < n_c; ++k) {
      const double norm = cache.row_norms[k];
      if (norm > 0.0) {
        const Vector y = cache.residuals.row(k).transpose() / norm;
        const Vector g = g_res.row(k).transpose();
        g_res.row(k) = ((g - y * y.dot(g)) / norm).transpose();
      } else {
        g_res.row(k).setZero();
      }
    }
  }

  const Vector& u = cache.assign_input;
  Vector g_u = Vector::Zero(dim);
  Vector g_alpha(n_c);
  for (Index k = 0; k < n_c; ++k) {
    const Vector resid = u - cb.centers.row(k).transpose();
    g_alpha[k] = g_res.row(k).dot(resid);
    grad.codebook.centers.row(k) -= cache.alpha[k] * g_res.row(k);
    g_u += cache.alpha[k] * g_res.row(k).transpose();
  }
  const double mean_g = cache.alpha.dot(g_alpha);
  for (Index k = 0; k < n_c; ++k) {
    const double delta = cache.alpha[k] * (g_alpha[k] - mean_g);
    grad.codebook.assign_weights.row(k) += delta * u.transpose();
    grad.codebook.assign_bias[k] += delta;
    g_u += delta * cb.assign_weights.row(k).transpose();
  }

  Vector g_h;
  if (netvlad) {
    g_h = cache.embedding_norm > 0.0 ? Vector((g_u - u * u.dot(g_u)) / cache.embedding_norm) : Vector(Vector::Zero(dim));
  } else {
    g_h = g_u;
  }

  const auto& layers = model.backbone.layers();
  for (std::size_t l = layers.size(); l-- > 0;) {
    Vector g_z = g_h;
    if (layers[l].activation == Activation::relu) {
      for (Index i = 0; i < g_z.size(); ++i) {
        if (cache.pre_activations[l][i] <= 0.0) g_z[i] = 0.0;
      }
    }
    grad.backbone.layers()[l].weight.noalias() += g_z * cache.layer_inputs[l].transpose();
    grad.backbone.layers()[l].bias += g_z;
    if (l > 0) g_h = layers[l].weight.transpose() * g_z;
  }
}

}  // namespace

Matrix forward_batch(const EncoderModel& model, const Matrix& inputs) {
  Matrix out(inputs.rows(), model.encoding_dim());
  for (Index i = 0; i < inputs.rows(); ++i) {
    require(inputs.cols() == model.input_dim(), "forward_batch: input dimension mismatch");
    out.row(i) = forward_cached(model, inputs.row(i).transpose()).encoding.transpose();
  }
  return out;
}

std::vector<ParameterBlock> parameter_blocks(EncoderModel& model) {
  std::vector<ParameterBlock> blocks;
  auto add = [&](std::string name, auto& array) {
    blocks.push_back({std::move(name), std::span<double>(array.data(), static_cast<std::size_t>(array.size()))});
  };
  for (std::size_t l = 0; l < model.backbone.layers().size(); ++l) {
    add("backbone." + std::to_string(l) + ".weight", model.backbone.layers()[l].weight);
    add("backbone." + std::to_string(l) + ".bias", model.backbone.layers()[l].bias);
  }
  add("codebook.centers", model.codebook.centers);
  add("codebook.assign_weights", model.codebook.assign_weights);
  add("codebook.assign_bias", model.codebook.assign_bias);
  return blocks;
}

BackwardResult backward(const TripletBatch& batch, const EncoderModel& model, double margin) {
  require(!batch.triplets.empty(), "backward: empty triplet list");
  const Index n = batch.inputs.rows();
  require(batch.inputs.cols() == model.input_dim(), "backward: input dimension mismatch");

  std::vector<ForwardCache> caches;
  caches.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) caches.push_back(forward_cached(model, batch.inputs.row(i).transpose()));

  const double inv_count = 1.0 / static_cast<double>(batch.triplets.size());
  std::vector<Vector> grad_enc(static_cast<std::size_t>(n));
  std::vector<bool> touched(static_cast<std::size_t>(n), false);
  auto accumulate = [&](Index item, const Vector& g) {
    if (!touched[item]) {
      grad_enc[item] = Vector::Zero(g.size());
      touched[item] = true;
    }
    grad_enc[item] += g;
  };

  BackwardResult result;
  double loss_sum = 0.0;
  for (const auto& t : batch.triplets) {
    require(t.anchor >= 0 && t.anchor < n && t.positive >= 0 && t.positive < n && t.negative >= 0 &&
                t.negative < n,
            "backward: triplet index out of range");
    const Vector diff_ap = caches[t.anchor].encoding - caches[t.positive].encoding;
    const Vector diff_an = caches[t.anchor].encoding - caches[t.negative].encoding;
    const double d_ap = diff_ap.norm();
    const double d_an = diff_an.norm();
    // max(0, NaN) would quietly clamp to 0
    if (!std::isfinite(d_ap) || !std::isfinite(d_an)) {
      throw TrainingError("backward: non-finite encoding distance for anchor " + std::to_string(t.anchor));
    }
    const double loss = triplet_loss(d_ap, d_an, margin);
    loss_sum += loss;
    if (loss <= 0.0) continue;

    // d|u|/du = u/|u|, with subgradient 0 at u = 0
    if (d_ap > 0.0) {
      const Vector g = diff_ap * (inv_count / d_ap);
      accumulate(t.anchor, g);
      accumulate(t.positive, -g);
    }
    if (d_an > 0.0) {
      const Vector g = diff_an * (inv_count / d_an);
      accumulate(t.anchor, -g);
      accumulate(t.negative, g);
    }
  }
  result.loss = loss_sum * inv_count;
  if (!std::isfinite(result.loss)) throw TrainingError("backward: non-finite loss");

  result.gradient = zeros_like(model);
  for (Index i = 0; i < n; ++i) {
    if (touched[i]) backprop_item(model, caches[i], grad_enc[i], result.gradient);
  }
  for (const auto& block : parameter_blocks(result.gradient)) {
    for (double v : block.values) {
      if (!std::isfinite(v)) throw TrainingError("backward: non-finite gradient in " + block.name);
    }
  }
  return result;
}

void Adam::step(EncoderModel& model, EncoderModel& gradient, double learning_rate) {
  auto params = parameter_blocks(model);
  auto grads = parameter_blocks(gradient);
  require(params.size() == grads.size(), "Adam::step: gradient layout mismatch");
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.values.size(), 0.0);
      second_.emplace_back(p.values.size(), 0.0);
    }
  }
  ++step_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].values.size() == grads[b].values.size(), "Adam::step: block size mismatch");
    auto& m = first_[b];
    auto& v = second_[b];
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      const double g = grads[b].values[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[b].values[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

void TrainConfig::validate() const {
  require(margin > 0.0, "train: margin must be positive");
  require(learning_rate > 0.0, "train: learning_rate must be positive");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, "train: validation_fraction must lie in (0, 1)");
  require(per_class >= 2, "train: per_class must be at least 2");
  require(batch_size >= 2 * per_class, "train: batch_size must hold at least two classes");
  require(epochs_max >= 1, "train: epochs_max must be at least 1");
  require(warmup_epochs >= 0 && warmup_epochs <= epochs_max, "train: warmup_epochs must lie in [0, epochs_max]");
  require(patience >= 1, "train: patience must be at least 1");
  require(validation_pool >= 2, "train: validation_pool must be at least 2");
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  const double base = config.learning_rate;
  const int warmup = config.warmup_epochs;
  if (epoch < warmup) {
    return base / 10.0 + (base - base / 10.0) * static_cast<double>(epoch) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(config.epochs_max - warmup);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch - warmup) / span));
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"learning_rate", e.learning_rate},
                    {"loss", e.loss},
                    {"validation_map", e.validation_map},
                    {"steps", e.steps},
                    {"triplets", e.triplets}});
  }
  j["epochs"] = std::move(rows);
  j["stopping_epoch"] = stopping_epoch;
  j["best_epoch"] = best_epoch;
  j["best_validation_map"] = best_validation_map;
  j["train_items"] = train_items;
  j["validation_items"] = validation_items;
  j["total_steps"] = total_steps;
  return j;
}

ClassBalancedSampler::ClassBalancedSampler(std::span<const Index> item_labels, Index batch_size, Index per_class,
                                           std::uint64_t seed)
    : classes_per_batch_(batch_size / per_class), per_class_(per_class), rng_(seed) {
  std::map<Index, std::vector<Index>> groups;
  for (std::size_t i = 0; i < item_labels.size(); ++i) groups[item_labels[i]].push_back(static_cast<Index>(i));
  for (auto& [_, members] : groups) {
    if (static_cast<Index>(members.size()) >= per_class) eligible_.push_back(std::move(members));
  }
  require(eligible_.size() >= 2, "train: need at least two classes with " + std::to_string(per_class) +
                                      " members, found " + std::to_string(eligible_.size()));
}

std::vector<Index> ClassBalancedSampler::next_batch() {
  std::vector<Index> classes(eligible_.size());
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<Index>(i);
  const std::size_t take = std::min(classes.size(), static_cast<std::size_t>(classes_per_batch_));
  // partial Fisher-Yates
  for (std::size_t i = 0; i < take; ++i) std::swap(classes[i], classes[i + rng_.index(classes.size() - i)]);

  std::vector<Index> batch;
  batch.reserve(take * static_cast<std::size_t>(per_class_));
  for (std::size_t c = 0; c < take; ++c) {
    std::vector<Index> members = eligible_[classes[c]];
    for (Index i = 0; i < per_class_; ++i) {
      std::swap(members[i], members[i + rng_.index(members.size() - i)]);
      batch.push_back(members[i]);
    }
  }
  return batch;
}

EncoderModel initial_model(const Matrix& sample_inputs, const ModelConfig& model_config, std::uint64_t seed) {
  require(model_config.n_clusters >= 1, "model: n_clusters must be positive");
  std::vector<Index> dims{sample_inputs.cols()};
  dims.insert(dims.end(), model_config.hidden_dims.begin(), model_config.hidden_dims.end());
  require(dims.size() >= 2, "model: need at least one backbone layer");

  EncoderModel model;
  model.seed = seed;
  model.backbone = encoder::Backbone::random(dims, derive_seed(seed, "backbone"), Activation::relu,
                                            model_config.output_activation);
  const Index dim = model.backbone.output_dim();
  if (model_config.mode == EncodingMode::netvlad) {
    Matrix embedded(sample_inputs.rows(), dim);
    for (Index i = 0; i < sample_inputs.rows(); ++i) {
      embedded.row(i) = model.backbone.forward(sample_inputs.row(i).transpose()).transpose();
    }
    model.codebook = encoder::init_codebook(model_config.mode, model_config.n_clusters, dim,
                                            derive_seed(seed, "codebook"), embedded, model_config.alpha_init);
  } else {
    model.codebook = encoder::init_codebook(model_config.mode, model_config.n_clusters, dim,
                                            derive_seed(seed, "codebook"));
  }
  return model;
}

namespace {

double validation_map(const EncoderModel& model, const Matrix& inputs, std::span<const Index> labels) {
  Matrix enc = forward_batch(model, inputs);
  for (Index i = 0; i < enc.rows(); ++i) {
    const double norm = enc.row(i).norm();
    if (norm > 0.0) enc.row(i) /= norm;
  }
  const Matrix similarity = enc * enc.transpose();
  return retrieval::mean_average_precision(similarity, labels);
}

}  // namespace

TrainResult train(const Matrix& descriptors, const features::PseudoLabeledSet& labels,
                  const ModelConfig& model_config, const TrainConfig& config) {
  config.validate();
  Rng split_rng(derive_seed(config.seed, "split"));

  // stratified validation split
  std::map<Index, std::vector<Index>> by_class;
  for (const auto& item : labels.items) {
    require(item.descriptor >= 0 && item.descriptor < descriptors.rows(), "train: descriptor index out of range");
    by_class[item.label].push_back(item.descriptor);
  }
  std::vector<Index> train_rows, train_labels, val_rows;
  std::vector<std::pair<Index, Index>> val_items;  // (descriptor, label)
  for (auto& [label, members] : by_class) {
    split_rng.shuffle(members);
    const auto n_val = static_cast<std::size_t>(
        std::llround(config.validation_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < n_val) {
        val_items.emplace_back(members[i], label);
      } else {
        train_rows.push_back(members[i]);
        train_labels.push_back(label);
      }
    }
  }
  split_rng.shuffle(val_items);
  if (static_cast<Index>(val_items.size()) > config.validation_pool) val_items.resize(static_cast<std::size_t>(config.validation_pool));
  std::sort(val_items.begin(), val_items.end());

  ClassBalancedSampler sampler(train_labels, config.batch_size, config.per_class, derive_seed(config.seed, "sampler"));

  Matrix val_inputs(static_cast<Index>(val_items.size()), descriptors.cols());
  std::vector<Index> val_labels;
  for (std::size_t i = 0; i < val_items.size(); ++i) {
    val_inputs.row(static_cast<Index>(i)) = descriptors.row(val_items[i].first);
    val_labels.push_back(val_items[i].second);
  }

  Matrix init_sample(std::min<Index>(static_cast<Index>(train_rows.size()), 1000), descriptors.cols());
  for (Index i = 0; i < init_sample.rows(); ++i) init_sample.row(i) = descriptors.row(train_rows[static_cast<std::size_t>(i)]);

  TrainResult result;
  EncoderModel model = initial_model(init_sample, model_config, config.seed);
  Adam adam;

  TrainReport& report = result.report;
  report.train_items = static_cast<Index>(train_rows.size());
  report.validation_items = static_cast<Index>(val_items.size());
  const Index steps_per_epoch =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : std::max<Index>(1, (report.train_items + config.batch_size - 1) / config.batch_size);

  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  result.model = model;
  for (int epoch = 0; epoch < config.epochs_max; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = learning_rate_at(config, epoch);
    double loss_sum = 0.0;
    for (Index step = 0; step < steps_per_epoch; ++step) {
      if (config.max_steps > 0 && report.total_steps >= config.max_steps) break;
      const std::vector<Index> picks = sampler.next_batch();
      TripletBatch batch;
      batch.inputs.resize(static_cast<Index>(picks.size()), descriptors.cols());
      for (std::size_t i = 0; i < picks.size(); ++i) {
        batch.inputs.row(static_cast<Index>(i)) = descriptors.row(train_rows[static_cast<std::size_t>(picks[i])]);
        batch.labels.push_back(train_labels[static_cast<std::size_t>(picks[i])]);
      }
      const Matrix encodings = forward_batch(model, batch.inputs);
      loss_sum += batch_hard_loss(encodings, batch.labels, config.margin);
      batch.triplets = mine_hard_triplets(encodings, batch.labels, config.margin, config.mining);
      if (!batch.triplets.empty()) {
        BackwardResult grad = backward(batch, model, config.margin);
        adam.step(model, grad.gradient, record.learning_rate);
        record.triplets += static_cast<Index>(batch.triplets.size());
      }
      ++record.steps;
      ++report.total_steps;
    }
    if (record.steps == 0) break;
    record.loss = loss_sum / static_cast<double>(record.steps);
    record.validation_map = val_items.size() >= 2 ? validation_map(model, val_inputs, val_labels) : 0.0;
    report.epochs.push_back(record);
    report.stopping_epoch = epoch;

    if (record.validation_map > best) {
      best = record.validation_map;
      report.best_epoch = epoch;
      report.best_validation_map = best;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    if (config.max_steps > 0 && report.total_steps >= config.max_steps) break;
  }
  return result;
}

}  // namespace wr::trainer
