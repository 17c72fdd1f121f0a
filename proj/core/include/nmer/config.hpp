#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nmer/dataset.hpp"
#include "nmer/encoders.hpp"
#include "nmer/losses.hpp"
#include "nmer/noise_scheduler.hpp"

namespace nmer {

struct ScheduleConfig {
  double beta_start = 0.01;
  double beta_end = 0.5;
  int steps = 100;
  ScheduleKind kind = ScheduleKind::scaled_linear;

  NoiseSchedule build() const { return build_schedule(beta_start, beta_end, steps, kind); }
};

struct NoiseConfig {
  std::vector<NoiseKind> types = {NoiseKind::gaussian, NoiseKind::impulse};
  double impulse_p = kDefaultImpulseZeroProbability;

  NoiseType make(NoiseKind kind) const { return {kind, impulse_p}; }
};

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 128;
  int epochs = 80;
  int teacher_epochs = 80;
  int folds = 10;
  int fold = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int lr_pivot = 20;
  double validation_fraction = 0.1;
  LossWeights weights;
  int repeats = 1;
};

struct EvalConfig {
  std::vector<int> intensities = {20, 40, 60, 80, 100};
  std::vector<std::string> conditions = {"{a}", "{v}", "{l}", "{a,v}", "{a,l}", "{v,l}"};
  int draws = 1;
  int batch_size = 128;
};

/// Everything a run needs. Every field is optional in the config file and
/// defaults to the values above; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  /// Seed of the fold split; absent means `seed`. Repeats share it.
  std::optional<std::uint64_t> split_seed;
  std::string out_dir = "runs/default";
  /// Dataset manifest; empty means `<out_dir>/data/manifest.json`.
  std::string manifest;
  SyntheticSpec synthetic;
  ScheduleConfig schedule;
  NoiseConfig noise;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical JSON (stable key order, every field present).
  std::string to_json(int indent = 1) const;

  std::filesystem::path manifest_path() const;
  std::uint64_t fold_seed() const { return split_seed.value_or(seed); }
  /// Throws config errors on out-of-range values.
  void validate() const;
};

/// ModelConfig <-> JSON, used by checkpoints (input_dims included).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace nmer
