#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wr/common.hpp"

namespace wr::dataset {

namespace fs = std::filesystem;

struct PageRecord {
  std::string page_id;
  std::string writer_id;
  fs::path descriptor_file;  // absolute once loaded
};

/// JSON: {"name": ..., "split": "train" | "test", "pages": [{page_id,
/// writer_id, descriptor_file}, ...]}. A bare array of page objects is also
/// accepted. Relative descriptor paths resolve against the manifest's folder.
struct Manifest {
  std::string name;
  std::string split = "test";
  std::vector<PageRecord> pages;
};

/// Checks unique page ids and that every descriptor file exists.
Manifest load_manifest(const fs::path& path);

/// Descriptor paths are stored relative to the manifest folder when possible.
void save_manifest(const fs::path& path, const Manifest& manifest);

/// Reads a page's descriptors, keeping at most `cap` rows (the first ones).
Matrix load_page_descriptors(const PageRecord& page, Index cap);

struct SynthSpec {
  Index n_writers = 20;
  std::vector<Index> pages_per_writer{5};  // one entry: same for every writer
  Index descriptors_per_page = 200;
  Index n_prototypes = 8;
  Index dim = 40;
  double writer_style_strength = 1.0;
  double noise_sigma = 0.25;
  double prototype_base = 4.0;   // prototype entries uniform in
  double prototype_range = 4.0;  // [base, base + range]
  std::uint64_t seed = 0;

  void validate() const;
  Index pages_of(Index writer) const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

/// Descriptor j of a page is max(0, p_{j mod P} + o_{w, j mod P} + e) with
/// prototypes p uniform in [base, base + range], writer offsets o of norm
/// `writer_style_strength` in a random direction, and noise e ~ N(0, sigma^2)
/// per entry. Writes
/// `out_dir/pages/<page_id>.wrds` and `out_dir/manifest.json`.
Manifest synth_generate(const SynthSpec& spec, const fs::path& out_dir);

}  // namespace wr::dataset
