#include "wr/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "wr/io.hpp"
#include "wr/rng.hpp"

namespace wr::dataset {

using nlohmann::json;

Manifest load_manifest(const fs::path& path) {
  const json j = io::read_json(path);
  Manifest m;
  const json* pages = &j;
  if (j.is_object()) {
    m.name = j.value("name", std::string());
    m.split = j.value("split", std::string("test"));
    if (!j.contains("pages")) throw ValidationError("manifest " + path.string() + " has no 'pages' list");
    pages = &j.at("pages");
  }
  require(pages->is_array(), "manifest " + path.string() + ": pages must be a list");
  require(m.split == "train" || m.split == "test", "manifest " + path.string() + ": split must be train or test");

  const fs::path base = path.parent_path();
  std::set<std::string> seen;
  for (const auto& entry : *pages) {
    PageRecord page;
    try {
      page.page_id = entry.at("page_id").get<std::string>();
      page.writer_id = entry.at("writer_id").get<std::string>();
      page.descriptor_file = entry.at("descriptor_file").get<std::string>();
    } catch (const json::exception&) {
      throw ValidationError("manifest " + path.string() + ": every page needs page_id, writer_id, descriptor_file");
    }
    require(seen.insert(page.page_id).second, "manifest " + path.string() + ": duplicate page_id '" +
                                                  page.page_id + "'");
    if (page.descriptor_file.is_relative()) page.descriptor_file = base / page.descriptor_file;
    if (!fs::exists(page.descriptor_file)) {
      throw IoError("manifest " + path.string() + ": descriptor file " + page.descriptor_file.string() +
                    " for page '" + page.page_id + "' does not exist");
    }
    m.pages.push_back(std::move(page));
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  json pages = json::array();
  for (const auto& page : manifest.pages) {
    fs::path file = page.descriptor_file;
    std::error_code ec;
    const fs::path rel = fs::relative(file, base, ec);
    if (!ec && !rel.empty() && *rel.begin() != "..") file = rel;
    pages.push_back({{"page_id", page.page_id}, {"writer_id", page.writer_id}, {"descriptor_file", file.generic_string()}});
  }
  io::write_json(path, {{"name", manifest.name}, {"split", manifest.split}, {"pages", std::move(pages)}});
}

Matrix load_page_descriptors(const PageRecord& page, Index cap) {
  require(cap >= 1, "descriptor cap must be positive");
  Matrix d = io::read_descriptors(page.descriptor_file);
  require(d.rows() > 0, "page '" + page.page_id + "' has no descriptors");
  if (d.rows() > cap) d.conservativeResize(cap, Eigen::NoChange);
  return d;
}

void SynthSpec::validate() const {
  require(n_writers >= 1, "synth: n_writers must be at least 1");
  require(pages_per_writer.size() == 1 || static_cast<Index>(pages_per_writer.size()) == n_writers,
          "synth: pages_per_writer must hold one value or one per writer");
  for (Index p : pages_per_writer) require(p >= 1, "synth: pages_per_writer entries must be at least 1");
  require(descriptors_per_page >= 1, "synth: descriptors_per_page must be at least 1");
  require(n_prototypes >= 1, "synth: n_prototypes must be at least 1");
  require(dim >= 1, "synth: dim must be at least 1");
  require(writer_style_strength >= 0.0, "synth: writer_style_strength must be >= 0");
  require(noise_sigma >= 0.0, "synth: noise_sigma must be >= 0");
  require(prototype_range >= 0.0, "synth: prototype_range must be >= 0");
}

Index SynthSpec::pages_of(Index writer) const {
  return pages_per_writer.size() == 1 ? pages_per_writer[0] : pages_per_writer[static_cast<std::size_t>(writer)];
}

json SynthSpec::to_json() const {
  return {{"n_writers", n_writers},
          {"pages_per_writer", pages_per_writer},
          {"descriptors_per_page", descriptors_per_page},
          {"n_prototypes", n_prototypes},
          {"dim", dim},
          {"writer_style_strength", writer_style_strength},
          {"noise_sigma", noise_sigma},
          {"prototype_base", prototype_base},
          {"prototype_range", prototype_range},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec s;
  const json defaults = s.to_json();
  for (const auto& [key, _] : j.items()) require(defaults.contains(key), "synth: unknown key '" + key + "'");
  try {
    s.n_writers = j.value("n_writers", s.n_writers);
    if (j.contains("pages_per_writer")) {
      const auto& p = j.at("pages_per_writer");
      s.pages_per_writer = p.is_array() ? p.get<std::vector<Index>>() : std::vector<Index>{p.get<Index>()};
    }
    s.descriptors_per_page = j.value("descriptors_per_page", s.descriptors_per_page);
    s.n_prototypes = j.value("n_prototypes", s.n_prototypes);
    s.dim = j.value("dim", s.dim);
    s.writer_style_strength = j.value("writer_style_strength", s.writer_style_strength);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.prototype_base = j.value("prototype_base", s.prototype_base);
    s.prototype_range = j.value("prototype_range", s.prototype_range);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth: bad spec field: ") + e.what());
  }
  s.validate();
  return s;
}

Manifest synth_generate(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth"));
  const Index P = spec.n_prototypes;
  const Index D = spec.dim;

  Matrix prototypes(P, D);
  for (Index i = 0; i < prototypes.size(); ++i) {
    prototypes.data()[i] = spec.prototype_base + spec.prototype_range * rng.uniform();
  }

  Manifest manifest;
  manifest.name = "synthetic";
  manifest.split = "test";
  const fs::path pages_dir = out_dir / "pages";
  std::error_code ec;
  fs::create_directories(pages_dir, ec);
  if (ec) throw IoError("cannot create " + pages_dir.string() + ": " + ec.message());

  for (Index w = 0; w < spec.n_writers; ++w) {
    // one unit-norm style direction per prototype, scaled by the strength
    Matrix offsets(P, D);
    for (Index i = 0; i < offsets.size(); ++i) offsets.data()[i] = rng.normal();
    for (Index p = 0; p < P; ++p) {
      const double norm = offsets.row(p).norm();
      if (norm > 0.0) offsets.row(p) *= spec.writer_style_strength / norm;
    }
    char writer[32];
    std::snprintf(writer, sizeof writer, "w%03lld", static_cast<long long>(w));
    for (Index p = 0; p < spec.pages_of(w); ++p) {
      Matrix d(spec.descriptors_per_page, D);
      for (Index j = 0; j < d.rows(); ++j) {
        const Index proto = j % P;
        for (Index c = 0; c < D; ++c) {
          const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
          d(j, c) = std::max(0.0, prototypes(proto, c) + offsets(proto, c) + noise);
        }
      }
      char page[64];
      std::snprintf(page, sizeof page, "%s_p%02lld", writer, static_cast<long long>(p));
      const fs::path file = pages_dir / (std::string(page) + ".wrds");
      io::write_descriptors(file, d);
      manifest.pages.push_back({page, writer, file});
    }
  }
  save_manifest(out_dir / "manifest.json", manifest);
  io::write_json(out_dir / "synth_spec.json", spec.to_json());
  return manifest;
}

}  // namespace wr::dataset
