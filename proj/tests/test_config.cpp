#include "support/doctest.hpp"

#include <fstream>

#include "segbench/config.hpp"
#include "segbench/errors.hpp"
#include "support/temp_dir.hpp"

using namespace segbench;

TEST_CASE("every preset validates and round-trips through JSON") {
  for (const auto& name : config::preset_names()) {
    const auto cfg = config::preset(name);
    CHECK_NOTHROW(cfg.validate());
    const auto doc = config::to_json(cfg);
    const auto back = config::from_json(nlohmann::json::parse(doc.dump()));
    CHECK(config::to_json(back) == doc);
    CHECK(config::config_hash(back) == config::config_hash(cfg));
  }
  CHECK_THROWS_AS(config::preset("huge"), ConfigError);
}

TEST_CASE("presets carry their distinguishing settings") {
  const auto paper = config::preset("paper");
  CHECK(paper.model.resolution == 256);
  CHECK(paper.train.steps_stage1 == 100000);
  CHECK(paper.train.steps_stage2 == 200000);
  CHECK(config::preset("ci").model.resolution == 32);
  CHECK(config::config_hash(paper) != config::config_hash(config::preset("desk")));
}

TEST_CASE("unknown keys are rejected with their path") {
  auto doc = nlohmann::json::parse(config::to_json(config::preset("desk")).dump());
  doc["train"]["stepz"] = 3;
  try {
    config::from_json(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.stepz") != std::string::npos);
  }
  CHECK_THROWS_AS(config::from_json({{"bogus", {}}}), ConfigError);
}

TEST_CASE("values are strictly typed") {
  CHECK_THROWS_AS(config::from_json({{"train", {{"steps_stage1", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(config::from_json({{"train", {{"steps_stage1", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(config::from_json({{"train", {{"seed", -1}}}}), ConfigError);
  CHECK_THROWS_AS(config::from_json({{"model", 4}}), ConfigError);
  CHECK(config::from_json({{"train", {{"lr_segmenter", 1}}}}).train.lr_segmenter == 1.0);
}

TEST_CASE("overrides") {
  nlohmann::json doc = nlohmann::json::object();
  config::apply_override(doc, "train.steps_stage1=12");
  config::apply_override(doc, "experiment.arch=UN");
  config::apply_override(doc, "experiment.seeds=[4,5]");
  CHECK(doc["train"]["steps_stage1"] == 12);
  CHECK(doc["experiment"]["arch"] == "UN");
  const auto cfg = config::from_json(doc);
  CHECK(cfg.experiment.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK_THROWS_AS(config::apply_override(doc, "no-equals"), ConfigError);
  CHECK_THROWS_AS(config::apply_override(doc, "=3"), ConfigError);
}

TEST_CASE("load merges preset, file and overrides, then validates") {
  test::TempDir tmp;
  const auto path = tmp.path() / "run.json";
  std::ofstream(path) << R"({"preset": "ci", "train": {"steps_stage1": 7}})";
  const auto cfg = config::load(path, {"train.steps_stage2=9"});
  CHECK(cfg.preset == "ci");
  CHECK(cfg.model.resolution == 32);
  CHECK(cfg.train.steps_stage1 == 7);
  CHECK(cfg.train.steps_stage2 == 9);
  CHECK_THROWS_AS(config::load(path, {"train.steps_stage2=0"}), ConfigError);
  CHECK_THROWS_AS(config::load(tmp.path() / "absent.json", {}), ConfigError);

  config::write_resolved(cfg, tmp.path() / "resolved.json");
  const auto again = config::load(tmp.path() / "resolved.json", {});
  CHECK(config::config_hash(again) == config::config_hash(cfg));
}

TEST_CASE("mismatched resolutions fail validation") {
  auto cfg = config::preset("desk");
  cfg.preprocess.resolution = 32;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
