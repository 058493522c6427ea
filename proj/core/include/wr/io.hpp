#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"
#include "wr/page.hpp"

namespace wr::io {

namespace fs = std::filesystem;
using nlohmann::json;

// Descriptor file "WRDS": magic, u32 version = 1, u32 dim, u64 count, then
// count * dim float32, all little-endian.
void write_descriptors(const fs::path& path, const Matrix& descriptors);
Matrix read_descriptors(const fs::path& path);

// Embedding dump "WREM": magic, u32 version = 1, u32 dim, u64 count, then
// count * dim float64, little-endian. A JSON sidecar with the same stem lists
// page_id / writer_id per row plus free-form metadata.
void write_embeddings(const fs::path& wrem_path, const PageSet& pages, const json& meta);
PageSet read_embeddings(const fs::path& wrem_path, json* meta = nullptr);
fs::path sidecar_path(const fs::path& wrem_path);

/// Generic model container "WRMF": magic, u32 version = 1, u64 header length,
/// JSON header, float64 little-endian blob. The header carries `kind`, `meta`
/// and an `arrays` table of {name, rows, cols, offset} (offset in doubles).
class ModelFile {
 public:
  ModelFile() = default;
  explicit ModelFile(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  json& meta() { return meta_; }
  const json& meta() const { return meta_; }

  void add(const std::string& name, Matrix values);
  void add(const std::string& name, const Vector& values);
  bool has(const std::string& name) const;
  const Matrix& get(const std::string& name) const;
  Vector get_vector(const std::string& name) const;

  void save(const fs::path& path) const;
  static ModelFile load(const fs::path& path, const std::string& expected_kind = {});

 private:
  std::string kind_;
  json meta_ = json::object();
  std::vector<std::pair<std::string, Matrix>> arrays_;
};

json read_json(const fs::path& path);
/// Writes `value` with two-space indentation and a trailing newline.
void write_json(const fs::path& path, const json& value);
void write_text(const fs::path& path, const std::string& text);

/// True when both files exist and hold identical bytes.
bool files_identical(const fs::path& a, const fs::path& b);

}  // namespace wr::io
