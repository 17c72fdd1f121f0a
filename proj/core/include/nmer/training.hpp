#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nmer/config.hpp"
#include "nmer/vae_joint.hpp"

namespace nmer {

/// Flat multiplier up to `pivot`, then linear decay reaching 0 at `total`.
/// Epochs are 1-based.
double lr_lambda(int epoch, int pivot, int total);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParameterStore& store, const TrainConfig& cfg);
  /// Applies one update from the accumulated gradients. Parameters without
  /// a gradient are left alone.
  void step(double lr);
  int steps() const { return steps_; }

 private:
  ParameterStore* store_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  int steps_ = 0;
};

/// Full-modality network that supplies the distillation targets: C_hat is
/// its concatenated specific projections (3 x specific_width) and H its
/// invariance output.
class TeacherModel {
 public:
  TeacherModel(const ModelConfig& cfg, std::uint64_t init_seed);
  TeacherModel(const TeacherModel&) = delete;
  TeacherModel& operator=(const TeacherModel&) = delete;

  struct Output {
    ag::Var joint;      // C_hat
    ag::Var invariant;  // H
    ag::Var logits;
  };
  Output forward(const PaddedBatch& batch, Mode mode, Rng* rng) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  FeatureBackbone backbone_;
  Classifier classifier_;
};

/// Eval-mode teacher outputs for a set of records, one row per id.
struct TeacherTargets {
  std::unordered_map<std::string, Eigen::Index> rows;
  Matrix joint;
  Matrix invariant;

  Matrix gather_joint(std::span<const std::string> ids) const;
  Matrix gather_invariant(std::span<const std::string> ids) const;
};

TeacherTargets compute_targets(const TeacherModel& teacher, const Dataset& dataset, std::span<const std::string> ids,
                               int batch_size);

/// FNV-1a over every parameter name, shape and value bytes.
std::uint64_t parameter_checksum(const ParameterStore& store);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;
  double val_wa = 0.0;
  double val_ua = 0.0;
};

/// Line-oriented training log: a header line with the config snapshot, one
/// line per epoch, and a summary line.
struct RunRecord {
  std::string kind;  // "teacher", "NMER" or "w/o VAE"
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_wa = 0.0;
  double best_val_ua = 0.0;
  std::vector<std::string> checkpoints;
  double wall_seconds = 0.0;  // not part of the log

  std::string header_line() const;
  static std::string epoch_line(const EpochRecord& e);
  std::string summary_line() const;
  std::string to_jsonl() const;
  static RunRecord from_jsonl(const std::string& text);
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TeacherRun {
  std::unique_ptr<TeacherModel> model;
  RunRecord record;
};

struct NmerRun {
  std::unique_ptr<NmerModel> model;
  RunRecord record;
};

/// Stage 1: cls loss on clean inputs. The parameters of the epoch with the
/// best validation WA are restored before returning.
TeacherRun pretrain_teacher(const Dataset& dataset, const FoldPartition& split, const RunConfig& cfg,
                            const EpochCallback& on_epoch = {});

/// Corruption drawn for one training sample in one epoch.
struct TrainingDraw {
  ConditionPattern condition{1};
  int t = 1;
  NoiseKind kind = NoiseKind::gaussian;
};

TrainingDraw draw_training_corruption(std::uint64_t seed, int epoch, const std::string& id, int total_steps,
                                      std::span<const NoiseKind> kinds);

/// Stage 2 against a frozen teacher. The ablation variant optimises
/// inv + cls only. Validation uses one fixed corruption per record.
NmerRun train_nmer(const Dataset& dataset, const FoldPartition& split, const TeacherModel& teacher,
                   const RunConfig& cfg, Variant variant, const EpochCallback& on_epoch = {});

/// Raw checkpoint contents.
struct Checkpoint {
  std::string kind;
  ModelConfig model;
  std::string config_json;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

/// Layout: "NMERCKPT", u32 version, u64 header length, JSON header (kind,
/// model config, config snapshot, tensor names and shapes), then every
/// tensor as little-endian float64 in header order.
void save_checkpoint(const ParameterStore& store, const std::string& kind, const ModelConfig& model,
                     const std::string& config_json, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies tensors into `store`; names and shapes must match exactly.
void load_parameters(ParameterStore& store, const Checkpoint& ckpt);

std::unique_ptr<TeacherModel> load_teacher(const std::filesystem::path& path);
std::unique_ptr<NmerModel> load_nmer(const std::filesystem::path& path);

}  // namespace nmer
