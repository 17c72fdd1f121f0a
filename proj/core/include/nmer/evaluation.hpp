#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nmer/dataset.hpp"
#include "nmer/noise_scheduler.hpp"
#include "nmer/vae_joint.hpp"

namespace nmer {

/// counts[true][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  void add(int label, int predicted);
  std::int64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

ConfusionMatrix confusion_from(std::span<const int> labels, std::span<const int> predictions);

/// trace / total: overall accuracy.
double weighted_accuracy(const ConfusionMatrix& cm);
/// Mean per-class recall over classes that have at least one true sample.
double unweighted_accuracy(const ConfusionMatrix& cm);

std::vector<int> argmax_rows(const Matrix& logits);

using LogitsFn = std::function<Matrix(const PaddedBatch&)>;

/// Eval-mode predictions over `records` in consecutive batches.
ConfusionMatrix evaluate_confusion(const LogitsFn& logits, std::span<const UtteranceRecord* const> records,
                                   int batch_size);

/// Eval-mode logits of a student model (either variant), without graph recording.
LogitsFn eval_logits(const NmerModel& model);

struct GridSpec {
  std::vector<NoiseKind> noise_types = {NoiseKind::gaussian, NoiseKind::impulse};
  std::vector<int> intensities = {20, 40, 60, 80, 100};
  std::vector<ConditionPattern> conditions = ConditionPattern::all();
  double impulse_p = kDefaultImpulseZeroProbability;
  int draws = 1;
  int batch_size = 128;
};

struct ResultCell {
  std::string variant;
  std::string noise_type;
  int intensity = 0;
  std::string condition;
  std::int64_t n = 0;
  double wa = 0.0;
  double ua = 0.0;

  bool operator==(const ResultCell&) const = default;
};

struct AverageRow {
  std::string variant;
  std::string noise_type;
  int intensity = 0;
  double wa = 0.0;
  double ua = 0.0;
};

/// Cells keyed by (variant, noise type, intensity, condition) in grid order.
struct ResultsTable {
  std::vector<ResultCell> cells;

  /// Arithmetic mean of the condition cells for every (variant, type, t),
  /// in first-appearance order.
  std::vector<AverageRow> averages() const;
  const ResultCell& cell(const std::string& variant, const std::string& noise_type, int intensity,
                         const std::string& condition) const;
  std::vector<std::string> variants() const;

  bool operator==(const ResultsTable&) const = default;
};

/// Corrupts the test records for every (type, t, condition) with a seed
/// fixed per cell, runs the eval-mode forward and records WA/UA.
ResultsTable evaluate_grid(const NmerModel& model, const Dataset& dataset, std::span<const std::string> test_ids,
                           const GridSpec& grid, const NoiseSchedule& sched, std::uint64_t seed);

/// Same grid for the "w/o VAE" variant; throws unless the model is one.
ResultsTable evaluate_ablation(const NmerModel& model, const Dataset& dataset, std::span<const std::string> test_ids,
                               const GridSpec& grid, const NoiseSchedule& sched, std::uint64_t seed);

enum class ReportFormat { csv, markdown, structured };

std::string render_report(const ResultsTable& table, ReportFormat format);
void emit_report(const ResultsTable& table, ReportFormat format, const std::filesystem::path& path);
/// Inverse of the structured format.
ResultsTable parse_structured_report(const std::string& text);

/// Per-cell mean of WA/UA over the runs that contain the cell (n is summed).
/// Cells are matched by (variant, type, intensity, condition).
ResultsTable average_tables(std::span<const ResultsTable> runs);
/// Concatenates tables of different variants into one.
ResultsTable merge_tables(std::span<const ResultsTable> tables);

}  // namespace nmer
