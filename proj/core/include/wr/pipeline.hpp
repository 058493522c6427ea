#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/config.hpp"
#include "wr/dataset.hpp"
#include "wr/encoder.hpp"
#include "wr/features.hpp"
#include "wr/page.hpp"

namespace wr::pipeline {

namespace fs = std::filesystem;

enum class Stage { cluster, train, encode, evaluate, rerank, sweep, report };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

/// Files (relative to the workdir) a stage reads and writes.
struct StageSpec {
  Stage stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

const std::vector<StageSpec>& stage_graph();

/// Throws std::logic_error when a stage reads its own output, an input has no
/// producer, or the graph has a cycle. Returns stages in topological order.
std::vector<Stage> check_stage_graph(const std::vector<StageSpec>& graph);

/// Exclusive lock on a workdir, held for the object's lifetime.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
};

/// Hellinger flag plus descriptor PCA, as fitted by the cluster stage.
struct FeatureModel {
  bool hellinger = true;
  features::PcaModel pca;

  Matrix preprocess(const Matrix& raw) const;
};

/// Descriptors -> per-patch encodings -> pooled, power-normalized page vector
/// (before whitening).
Vector encode_page(const FeatureModel& features, const encoder::EncoderModel& model, const Matrix& raw,
                   double power_alpha);

/// Whitening dimension used when `aggregation.whiten_dim` is 0.
Index auto_whiten_dim(Index fit_pages, Index raw_dim);

struct StageResult {
  nlohmann::json report;
  std::vector<fs::path> artifacts;
};

/// Runs one stage inside `config.workdir` (created if needed) under the lock.
/// Missing upstream artifacts raise IoError naming the file and the stage
/// that produces it.
StageResult run_stage(Stage stage, const PipelineConfig& config);

/// cluster, train, encode, evaluate and rerank for every seed in
/// `workdir/seed_<s>`, then `workdir/summary.json` with mean and spread.
nlohmann::json run_seeds(const PipelineConfig& config, const std::vector<std::uint64_t>& seeds);

}  // namespace wr::pipeline
