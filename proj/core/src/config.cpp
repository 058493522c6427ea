#include "wr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wr/io.hpp"
#include "wr/rng.hpp"

namespace wr::pipeline {

using nlohmann::json;

nlohmann::json PipelineConfig::to_json() const {
  json j;
  j["workdir"] = workdir;
  j["manifest"] = manifest;
  j["train_manifest"] = train_manifest;
  j["seed"] = seed;
  j["features"] = {{"hellinger", features.hellinger},
                   {"pca_dim", features.pca_dim},
                   {"pca_whiten", features.pca_whiten},
                   {"n_clusters", features.n_clusters},
                   {"rho", features.rho},
                   {"max_descriptors_per_page", features.max_descriptors_per_page}};
  j["model"] = {{"hidden_dims", model.hidden_dims},
                {"output_activation", encoder::to_string(model.output_activation)},
                {"n_clusters", model.n_clusters},
                {"mode", encoder::to_string(model.mode)},
                {"alpha_init", model.alpha_init}};
  j["train"] = {{"margin", train.margin},
                {"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size},
                {"per_class", train.per_class},
                {"epochs_max", train.epochs_max},
                {"warmup_epochs", train.warmup_epochs},
                {"patience", train.patience},
                {"validation_fraction", train.validation_fraction},
                {"validation_pool", train.validation_pool},
                {"steps_per_epoch", train.steps_per_epoch},
                {"max_steps", train.max_steps},
                {"mining", trainer::to_string(train.mining)}};
  j["aggregation"] = {{"power_alpha", aggregation.power_alpha},
                      {"whiten_dim", aggregation.whiten_dim},
                      {"whiten_fit", aggregation.whiten_fit}};
  j["evaluate"] = {{"isolated", evaluate.isolated}, {"keep_ranked", evaluate.keep_ranked}};
  j["rerank"] = rerank.to_json();
  j["sweep"] = {{"method", sweep.method}, {"gammas", sweep.gammas}, {"layers", sweep.layers}, {"ks", sweep.ks}};
  return j;
}

namespace {

template <typename T>
T field(const json& j, const char* section, const char* key) {
  const json& v = section[0] ? j.at(section).at(key) : j.at(key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: ") + section + (section[0] ? "." : "") + key +
                          " has the wrong type (" + v.dump() + ")");
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& patch) {
  json j = PipelineConfig{}.to_json();
  overlay(j, patch);
  PipelineConfig c;
  c.workdir = field<std::string>(j, "", "workdir");
  c.manifest = field<std::string>(j, "", "manifest");
  c.train_manifest = field<std::string>(j, "", "train_manifest");
  c.seed = field<std::uint64_t>(j, "", "seed");

  c.features.hellinger = field<bool>(j, "features", "hellinger");
  c.features.pca_dim = field<Index>(j, "features", "pca_dim");
  c.features.pca_whiten = field<bool>(j, "features", "pca_whiten");
  c.features.n_clusters = field<Index>(j, "features", "n_clusters");
  c.features.rho = field<double>(j, "features", "rho");
  c.features.max_descriptors_per_page = field<Index>(j, "features", "max_descriptors_per_page");

  c.model.hidden_dims = field<std::vector<Index>>(j, "model", "hidden_dims");
  c.model.output_activation =
      encoder::activation_from_string(field<std::string>(j, "model", "output_activation"));
  c.model.n_clusters = field<Index>(j, "model", "n_clusters");
  c.model.mode = encoder::encoding_mode_from_string(field<std::string>(j, "model", "mode"));
  c.model.alpha_init = field<double>(j, "model", "alpha_init");

  c.train.margin = field<double>(j, "train", "margin");
  c.train.learning_rate = field<double>(j, "train", "learning_rate");
  c.train.batch_size = field<Index>(j, "train", "batch_size");
  c.train.per_class = field<Index>(j, "train", "per_class");
  c.train.epochs_max = field<int>(j, "train", "epochs_max");
  c.train.warmup_epochs = field<int>(j, "train", "warmup_epochs");
  c.train.patience = field<int>(j, "train", "patience");
  c.train.validation_fraction = field<double>(j, "train", "validation_fraction");
  c.train.validation_pool = field<Index>(j, "train", "validation_pool");
  c.train.steps_per_epoch = field<Index>(j, "train", "steps_per_epoch");
  c.train.max_steps = field<Index>(j, "train", "max_steps");
  c.train.mining = trainer::mining_rule_from_string(field<std::string>(j, "train", "mining"));
  c.train.seed = derive_seed(c.seed, "train");

  c.aggregation.power_alpha = field<double>(j, "aggregation", "power_alpha");
  c.aggregation.whiten_dim = field<Index>(j, "aggregation", "whiten_dim");
  c.aggregation.whiten_fit = field<std::string>(j, "aggregation", "whiten_fit");

  c.evaluate.isolated = field<std::string>(j, "evaluate", "isolated");
  c.evaluate.keep_ranked = field<bool>(j, "evaluate", "keep_ranked");

  c.rerank.method = rerank::method_from_string(field<std::string>(j, "rerank", "method"));
  c.rerank.k = field<Index>(j, "rerank", "k");
  c.rerank.layers = field<Index>(j, "rerank", "layers");
  c.rerank.gamma = field<double>(j, "rerank", "gamma");
  c.rerank.k1 = field<Index>(j, "rerank", "k1");
  c.rerank.k2 = field<Index>(j, "rerank", "k2");
  c.rerank.weighting = rerank::weighting_from_string(field<std::string>(j, "rerank", "weighting"));

  c.sweep.method = field<std::string>(j, "sweep", "method");
  c.sweep.gammas = field<std::vector<double>>(j, "sweep", "gammas");
  c.sweep.layers = field<std::vector<Index>>(j, "sweep", "layers");
  c.sweep.ks = field<std::vector<Index>>(j, "sweep", "ks");
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  require(!workdir.empty(), "config: workdir must not be empty");
  require(features.pca_dim >= 1, "config: features.pca_dim must be positive");
  require(features.n_clusters >= 2, "config: features.n_clusters must be at least 2");
  require(features.rho > 0.0 && features.rho <= 1.0, "config: features.rho must lie in (0, 1]");
  require(features.max_descriptors_per_page >= 1, "config: features.max_descriptors_per_page must be positive");
  require(!model.hidden_dims.empty(), "config: model.hidden_dims must list at least one layer");
  for (Index d : model.hidden_dims) require(d >= 1, "config: model.hidden_dims entries must be positive");
  require(model.n_clusters >= 1, "config: model.n_clusters must be positive");
  train.validate();
  require(aggregation.power_alpha > 0.0 && aggregation.power_alpha <= 1.0,
          "config: aggregation.power_alpha must lie in (0, 1]");
  require(aggregation.whiten_dim >= 0, "config: aggregation.whiten_dim must be >= 0");
  require(aggregation.whiten_fit == "evaluated" || aggregation.whiten_fit == "train",
          "config: aggregation.whiten_fit must be 'evaluated' or 'train'");
  require(evaluate.isolated == "exclude" || evaluate.isolated == "score_zero",
          "config: evaluate.isolated must be 'exclude' or 'score_zero'");
  rerank.validate();
  rerank::method_from_string(sweep.method);
}

retrieval::IsolatedPolicy PipelineConfig::isolated_policy() const {
  return evaluate.isolated == "score_zero" ? retrieval::IsolatedPolicy::score_zero
                                           : retrieval::IsolatedPolicy::exclude;
}

std::string PipelineConfig::hash() const {
  json j = to_json();
  j.erase("workdir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

json parse_scalar(const std::string& key, const std::string& raw, const json& like) {
  const std::string text = trim(raw);
  auto fail = [&]() -> json {
    throw ValidationError("config: cannot parse '" + text + "' for " + key + " (expected " + like.type_name() + ")");
  };
  if (like.is_string()) {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"') return text.substr(1, text.size() - 2);
    return text;
  }
  if (like.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    return fail();
  }
  if (like.is_number_integer()) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) return fail();
    if (like.is_number_unsigned() && v < 0) return fail();
    return like.is_number_unsigned() ? json(static_cast<std::uint64_t>(v)) : json(v);
  }
  if (like.is_number()) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) return fail();
      return v;
    } catch (const std::logic_error&) {
      return fail();
    }
  }
  return fail();
}

}  // namespace

json parse_value(const std::string& key, const std::string& raw, const json& like) {
  const std::string text = trim(raw);
  if (!like.is_array()) return parse_scalar(key, text, like);
  std::string body = text;
  if (!body.empty() && body.front() == '[') {
    require(body.back() == ']', "config: unterminated list for " + key);
    body = body.substr(1, body.size() - 2);
  }
  const json element = like.empty() ? json(0.0) : like.front();
  json out = json::array();
  std::stringstream in(body);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_scalar(key, item, element));
  }
  return out;
}

void overlay(json& base, const json& patch, const std::string& where) {
  require(patch.is_object(), "config: expected an object" + (where.empty() ? std::string() : " at " + where));
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    require(base.contains(key), "config: unknown key '" + path + "'");
    json& target = base[key];
    if (target.is_object()) {
      overlay(target, value, path);
    } else {
      const bool both_numbers = target.is_number() && value.is_number();
      require(both_numbers || target.type() == value.type() || (target.is_array() && value.is_array()),
              "config: " + path + " expects " + std::string(target.type_name()) + ", got " + value.dump());
      target = value;
    }
  }
}

std::vector<std::string> leaf_keys(const json& j) {
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      for (const auto& sub : leaf_keys(value)) out.push_back(key + "." + sub);
    } else {
      out.push_back(key);
    }
  }
  return out;
}

void set_dotted(json& j, const std::string& key, const std::string& text) {
  json* node = &j;
  std::stringstream in(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(in, part, '.')) parts.push_back(part);
  require(!parts.empty(), "config: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    require(node->is_object() && node->contains(parts[i]), "config: unknown key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  require(node->is_object() && node->contains(parts.back()) && !(*node)[parts.back()].is_object(),
          "config: unknown key '" + key + "'");
  (*node)[parts.back()] = parse_value(key, text, (*node)[parts.back()]);
}

json read_config_patch(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
  }

  // key = value, converted against the defaults so types are known
  json patched = PipelineConfig{}.to_json();
  std::stringstream lines(text);
  std::string line, section;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', "config: " + path.string() + ":" + std::to_string(number) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: " + path.string() + ":" + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    set_dotted(patched, section.empty() ? key : section + "." + key, line.substr(eq + 1));
  }
  return patched;
}

}  // namespace wr::pipeline
