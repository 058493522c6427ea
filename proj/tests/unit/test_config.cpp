#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"
#include "wr/config.hpp"

using namespace wr;
using namespace wr::pipeline;
using nlohmann::json;

TEST(Config, DefaultsRoundTrip) {
  const PipelineConfig cfg;
  const auto back = PipelineConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());
  EXPECT_EQ(cfg.hash().size(), 16u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, TrainSeedDerivesFromRoot) {
  const auto cfg = PipelineConfig::from_json({{"seed", 7}});
  EXPECT_EQ(cfg.train.seed, derive_seed(7, "train"));
}

TEST(Config, HashIgnoresWorkdirButNotSettings) {
  auto a = PipelineConfig::from_json({{"workdir", "x"}});
  auto b = PipelineConfig::from_json({{"workdir", "y"}});
  EXPECT_EQ(a.hash(), b.hash());
  auto c = PipelineConfig::from_json({{"rerank", {{"gamma", 0.5}}}});
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, UnknownKeysAndTypeErrorsRejected) {
  EXPECT_THROW(PipelineConfig::from_json({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"rerank", {{"gama", 1}}}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"rerank", {{"gamma", "high"}}}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"rerank", {{"method", "magic"}}}}), ValidationError);
}

TEST(Config, ValidateCatchesRanges) {
  PipelineConfig cfg;
  cfg.features.rho = 1.5;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = PipelineConfig{};
  cfg.aggregation.whiten_fit = "both";
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"features", {{"rho", 1.5}}}}), ValidationError);
}

TEST(ParseValue, Types) {
  EXPECT_EQ(parse_value("k", "3", json(1)), json(3));
  EXPECT_EQ(parse_value("k", "0.25", json(1.0)), json(0.25));
  EXPECT_EQ(parse_value("k", "true", json(false)), json(true));
  EXPECT_EQ(parse_value("k", "abc", json("x")), json("abc"));
  EXPECT_EQ(parse_value("k", "[1, 2]", json::array({0})), json::array({1, 2}));
  EXPECT_EQ(parse_value("k", "0.1,0.4", json::array({0.5})), json::array({0.1, 0.4}));
  EXPECT_THROW(parse_value("k", "many", json(1)), ValidationError);
}

TEST(SetDotted, UpdatesLeaf) {
  json j = PipelineConfig{}.to_json();
  set_dotted(j, "rerank.k", "5");
  EXPECT_EQ(j["rerank"]["k"], 5);
  EXPECT_THROW(set_dotted(j, "rerank.nope", "5"), ValidationError);
  EXPECT_THROW(set_dotted(j, "rerank", "5"), ValidationError);
}

TEST(ReadConfigPatch, KeyValueAndJson) {
  const auto dir = wr::test::temp_dir("config_patch");
  {
    std::ofstream out(dir / "a.conf");
    out << "# comment\nseed = 3\n[rerank]\ngamma = 0.7\nlayers = 2\n[sweep]\nks = 1,2\n";
  }
  auto cfg = PipelineConfig{}.to_json();
  overlay(cfg, read_config_patch(dir / "a.conf"));
  const auto parsed = PipelineConfig::from_json(cfg);
  EXPECT_EQ(parsed.seed, 3u);
  EXPECT_DOUBLE_EQ(parsed.rerank.gamma, 0.7);
  EXPECT_EQ(parsed.rerank.layers, 2);
  EXPECT_EQ(parsed.sweep.ks, (std::vector<Index>{1, 2}));

  {
    std::ofstream out(dir / "b.json");
    out << R"({"train": {"margin": 0.2}})";
  }
  const auto patch = read_config_patch(dir / "b.json");
  EXPECT_DOUBLE_EQ(patch["train"]["margin"].get<double>(), 0.2);
  EXPECT_THROW(read_config_patch(dir / "missing.json"), IoError);
}

TEST(LeafKeys, DottedInOrder) {
  const json j = {{"a", 1}, {"b", {{"c", 2}, {"d", {1, 2}}}}};
  EXPECT_EQ(leaf_keys(j), (std::vector<std::string>{"a", "b.c", "b.d"}));
}
