#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"
#include "wr/rerank.hpp"
#include "wr/retrieval.hpp"
#include "wr/trainer.hpp"

namespace wr::pipeline {

struct FeatureConfig {
  bool hellinger = true;
  Index pca_dim = 32;
  bool pca_whiten = true;
  Index n_clusters = 64;  // pseudo-label classes
  double rho = 0.9;
  Index max_descriptors_per_page = 2000;
};

struct AggregationConfig {
  double power_alpha = 0.4;
  Index whiten_dim = 0;                 // 0: about pages / 7, see auto_whiten_dim
  std::string whiten_fit = "evaluated";  // or "train"
};

struct EvaluateConfig {
  std::string isolated = "exclude";  // or "score_zero"
  bool keep_ranked = false;
};

struct SweepConfig {
  std::string method = "sgr";
  std::vector<double> gammas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<Index> layers{1, 2, 3};
  std::vector<Index> ks{1};
};

struct PipelineConfig {
  std::string workdir = "work";
  std::string manifest;        // evaluated collection
  std::string train_manifest;  // empty: train on `manifest`
  std::uint64_t seed = 0;
  FeatureConfig features;
  trainer::ModelConfig model;
  trainer::TrainConfig train;  // train.seed is derived from `seed`
  AggregationConfig aggregation;
  EvaluateConfig evaluate;
  rerank::RerankConfig rerank;
  SweepConfig sweep;

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  void validate() const;

  retrieval::IsolatedPolicy isolated_policy() const;
  /// 16 hex digits of FNV-1a over the canonical JSON dump, workdir excluded.
  std::string hash() const;
};

/// Parses `text` into a JSON value shaped like `like` (used for key=value
/// files and command line flags). Arrays accept "[..]" or comma lists.
nlohmann::json parse_value(const std::string& key, const std::string& text, const nlohmann::json& like);

/// Overlays `patch` onto `base`; every key of `patch` must already exist.
void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

/// JSON object, or key = value lines with optional [section] headers and
/// dotted keys. Returns a patch to overlay on the defaults.
nlohmann::json read_config_patch(const std::filesystem::path& path);

/// Leaf keys of `j` in dotted form, in document order.
std::vector<std::string> leaf_keys(const nlohmann::json& j);

/// Sets a dotted key, converting the text according to the current value.
void set_dotted(nlohmann::json& j, const std::string& key, const std::string& text);

}  // namespace wr::pipeline
