// Command line front end for the writer-retrieval pipeline.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wr/config.hpp"
#include "wr/dataset.hpp"
#include "wr/io.hpp"
#include "wr/pipeline.hpp"

namespace {

using nlohmann::json;
namespace pl = wr::pipeline;

// Every leaf of a JSON template becomes a "--dotted.key" flag.
struct FlagSet {
  json defaults;
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "JSON or key=value config file")->check(CLI::ExistingFile);
    for (const auto& key : pl::leaf_keys(defaults)) {
      const json& leaf = defaults.at(json::json_pointer("/" + replace_dots(key)));
      options[key] = cmd.add_option("--" + key, values[key], "default: " + leaf.dump())
                         ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  json resolve(bool from_pipeline_config) const {
    json merged = defaults;
    if (!config_path.empty()) {
      if (from_pipeline_config) {
        pl::overlay(merged, pl::read_config_patch(config_path));
      } else {
        merged = read_plain_patch(config_path, merged);
      }
    }
    for (const auto& [key, option] : options) {
      if (option->count() > 0) pl::set_dotted(merged, key, values.at(key));
    }
    return merged;
  }

  static std::string replace_dots(std::string key) {
    for (auto& c : key) {
      if (c == '.') c = '/';
    }
    return key;
  }

  // Flat spec files (synth): JSON object or key = value lines.
  static json read_plain_patch(const std::string& path, json base) {
    std::ifstream in(path);
    if (!in) throw wr::IoError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      try {
        pl::overlay(base, json::parse(text));
      } catch (const json::parse_error& e) {
        throw wr::ValidationError("config: " + path + " is not valid JSON: " + e.what());
      }
      return base;
    }
    std::string line;
    while (std::getline(buffer, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos) throw wr::ValidationError("config: " + path + ": expected key = value");
      std::string key = line.substr(0, eq);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t\r") + 1);
      pl::set_dotted(base, key, line.substr(eq + 1));
    }
    return base;
  }
};

void print_result(const pl::StageResult& result) {
  for (const auto& path : result.artifacts) std::cout << "wrote " << path.string() << '\n';
  json brief = result.report;
  brief.erase("queries");
  brief.erase("epochs");
  brief.erase("ranked");
  std::cout << brief.dump(2) << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const auto value = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      seeds.push_back(value);
    } catch (const std::logic_error&) {
      throw wr::ValidationError("--seeds: '" + item + "' is not a non-negative integer");
    }
  }
  return seeds;
}

int run(int argc, char** argv) {
  CLI::App app{"Writer retrieval pipeline: synthetic data, clustering, training, encoding, evaluation, reranking"};
  app.require_subcommand(1);

  FlagSet synth_flags;
  synth_flags.defaults = wr::dataset::SynthSpec{}.to_json();
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic descriptor collection and its manifest");
  synth->add_option("--out", synth_out, "output folder");
  synth_flags.attach(*synth);

  const json defaults = pl::PipelineConfig{}.to_json();
  std::map<std::string, FlagSet> stage_flags;
  std::map<std::string, CLI::App*> stage_cmds;
  const std::vector<std::pair<std::string, std::string>> stages{
      {"cluster", "Fit descriptor PCA and k-means; write pseudo-labeled training set"},
      {"train", "Train the encoder with hard-triplet loss"},
      {"encode", "Encode every page into a whitened global embedding"},
      {"evaluate", "Leave-one-out retrieval: mAP and Top-1"},
      {"rerank", "Rerank embeddings (sgr, krnn_qe, hard_graph) and compare metrics"},
      {"sweep", "Grid over rerank parameters; CSV of mAP and Top-1"},
      {"report", "Summarize reports; with --seeds run the pipeline per seed"},
  };
  std::string seeds_text;
  for (const auto& [name, help] : stages) {
    auto* cmd = app.add_subcommand(name, help);
    stage_flags[name].defaults = defaults;
    stage_flags[name].attach(*cmd);
    stage_cmds[name] = cmd;
  }
  stage_cmds["report"]->add_option("--seeds", seeds_text, "comma-separated seeds, e.g. 1,2,3");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (synth->parsed()) {
    const auto spec = wr::dataset::SynthSpec::from_json(synth_flags.resolve(false));
    const auto manifest = wr::dataset::synth_generate(spec, synth_out);
    std::cout << "wrote " << manifest.pages.size() << " pages and " << (std::filesystem::path(synth_out) / "manifest.json").string()
              << '\n';
    return 0;
  }

  for (const auto& [name, cmd] : stage_cmds) {
    if (!cmd->parsed()) continue;
    const auto config = pl::PipelineConfig::from_json(stage_flags.at(name).resolve(true));
    if (name == "report" && !seeds_text.empty()) {
      const json summary = pl::run_seeds(config, parse_seeds(seeds_text));
      std::cout << summary.dump(2) << '\n';
      return 0;
    }
    print_result(pl::run_stage(pl::stage_from_string(name), config));
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const wr::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const wr::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return 1;
  } catch (const wr::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "I/O error: malformed JSON content: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  }
}
