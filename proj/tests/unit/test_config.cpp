#include <gtest/gtest.h>

#include <filesystem>

#include "nmer/config.hpp"
#include "nmer/error.hpp"
#include "nmer/io.hpp"
#include "support/test_support.hpp"

namespace nmer {
namespace {

void expect_config_error(const std::string& text, const std::string& fragment) {
  try {
    RunConfig::from_json(text);
    FAIL() << "accepted: " << text;
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(Config, EmptyObjectGivesReferenceDefaults) {
  const RunConfig c = RunConfig::from_json("{}");
  EXPECT_EQ(c.schedule.beta_start, 0.01);
  EXPECT_EQ(c.schedule.beta_end, 0.5);
  EXPECT_EQ(c.schedule.steps, 100);
  EXPECT_EQ(c.noise.impulse_p, 0.3);
  EXPECT_EQ(c.train.lr, 2e-4);
  EXPECT_EQ(c.train.batch_size, 128);
  EXPECT_EQ(c.train.epochs, 80);
  EXPECT_EQ(c.train.folds, 10);
  EXPECT_EQ(c.train.weight_decay, 0.01);
  EXPECT_EQ(c.model.input_dims, (std::array<int, 3>{130, 342, 1024}));
  EXPECT_EQ(c.model.joint_width(), 384);
  EXPECT_EQ(c.eval.intensities, (std::vector<int>{20, 40, 60, 80, 100}));
  EXPECT_EQ(c.eval.conditions.size(), 6u);
  EXPECT_FALSE(c.split_seed.has_value());
  EXPECT_EQ(c.fold_seed(), c.seed);
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath) {
  expect_config_error(R"({"sed": 1})", "config.sed");
  expect_config_error(R"({"train": {"learning_rate": 1}})", "config.train.learning_rate");
  expect_config_error(R"({"model": {"widht": 3}})", "widht");
}

TEST(Config, WrongTypesAndRangesAreRejected) {
  expect_config_error(R"({"seed": "one"})", "seed");
  expect_config_error(R"({"train": {"fold": 10}})", "fold");
  expect_config_error(R"({"schedule": {"beta_start": 0.6}})", "beta_start");
  expect_config_error(R"({"eval": {"intensities": [0]}})", "intensity");
  expect_config_error(R"({"eval": {"conditions": ["{a,v,l}"]}})", "condition");
  expect_config_error(R"({"noise": {"types": ["pink"]}})", "pink");
  expect_config_error(R"({"split_seed": -1})", "split_seed");
  expect_config_error("{", "malformed");
}

TEST(Config, CanonicalJsonRoundTrips) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    RunConfig c;
    c.seed = rng();
    if (trial % 2) c.split_seed = rng();
    c.out_dir = "runs/x" + std::to_string(trial);
    c.train.lr = std::uniform_real_distribution<double>(1e-5, 1e-2)(rng);
    c.train.epochs = testing::random_int(rng, 1, 100);
    c.train.fold = testing::random_int(rng, 0, 9);
    c.noise.impulse_p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    c.model = testing::tiny_model();
    c.model.text_merge = trial % 3 ? TextMerge::sum : TextMerge::concat_project;
    c.eval.intensities = {testing::random_int(rng, 1, 100)};
    const std::string text = c.to_json();
    const RunConfig back = RunConfig::from_json(text);
    EXPECT_EQ(back.to_json(), text);
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.split_seed, c.split_seed);
    EXPECT_EQ(back.train.lr, c.train.lr);
    EXPECT_EQ(back.noise.impulse_p, c.noise.impulse_p);
    EXPECT_EQ(back.model.text_merge, c.model.text_merge);
  }
}

TEST(Config, ModelConfigRoundTrips) {
  const auto m = testing::tiny_model();
  const auto back = model_config_from_json(model_config_to_json(m));
  EXPECT_EQ(model_config_to_json(back), model_config_to_json(m));
  EXPECT_EQ(back.input_dims, m.input_dims);
  EXPECT_EQ(back.decoder_widths, m.decoder_widths);
}

TEST(Config, LoadsFromFileAndDerivesManifestPath) {
  const auto dir = std::filesystem::temp_directory_path() / "nmer_config_test";
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "c.json", R"({"seed": 9, "out_dir": "somewhere"})");
  const RunConfig c = RunConfig::load(dir / "c.json");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.manifest_path(), std::filesystem::path("somewhere") / "data" / "manifest.json");
  EXPECT_THROW(RunConfig::load(dir / "absent.json"), Error);
}

}  // namespace
}  // namespace nmer
