#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nmer/autograd.hpp"
#include "nmer/types.hpp"

namespace nmer {

enum class Provenance { synthetic, ingested };

struct RecordDescriptor {
  std::string id;
  int label = 0;
  std::array<std::array<std::int64_t, 2>, 3> shapes{};  // (frames, dim) per modality
  std::array<std::string, 3> paths;                     // relative to the manifest directory

  bool operator==(const RecordDescriptor&) const = default;
};

struct DatasetManifest {
  int version = 1;
  std::array<int, 3> dims{};
  Provenance provenance = Provenance::synthetic;
  std::vector<RecordDescriptor> records;

  bool operator==(const DatasetManifest&) const = default;
};

/// A manifest together with its loaded feature tensors (records[i] matches
/// manifest.records[i]).
struct Dataset {
  DatasetManifest manifest;
  std::vector<UtteranceRecord> records;

  size_t size() const { return records.size(); }
  const UtteranceRecord& record(const std::string& id) const;
  std::vector<std::string> ids() const;
  /// id -> record, for repeated lookups.
  std::unordered_map<std::string, const UtteranceRecord*> index() const;
};

struct SyntheticSpec {
  int n_per_class = 50;
  std::array<int, 3> dims = {130, 342, 1024};
  int latent_dim = 16;
  double separation = 3.0;
  std::array<std::array<int, 2>, 3> length_ranges = {{{10, 20}, {10, 20}, {8, 16}}};
  double frame_noise_variance = 0.1;
  std::uint64_t seed = 0;
};

/// Class-conditional shared latent u ~ N(separation * e_label, I) per
/// utterance; every frame of modality m is A_m u + b_m + eta with
/// eta ~ N(0, frame_noise_variance I). A_m, b_m are drawn once per dataset.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Writes `<dir of manifest_path>/tensors/*.f32` and the manifest itself.
/// Descriptors (shapes and paths) are regenerated from the records.
void save_manifest(Dataset& dataset, const std::filesystem::path& manifest_path);
Dataset load_manifest(const std::filesystem::path& manifest_path);

/// Rebuilds descriptors from in-memory records and checks the manifest invariants.
void refresh_descriptors(Dataset& dataset);
void validate(const Dataset& dataset);

struct FoldSplit {
  int k = 0;
  std::map<std::string, int> assignments;

  std::vector<std::string> fold_ids(int fold) const;
  std::vector<size_t> fold_sizes() const;
};

FoldSplit make_folds(const Dataset& dataset, int k, std::uint64_t seed);

struct FoldPartition {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Test = the given fold; validation = a seeded `validation_fraction` of
/// the remaining ids (at least one when the fraction is positive).
FoldPartition partition_fold(const FoldSplit& split, int fold, double validation_fraction, std::uint64_t seed);

/// One modality of a padded batch. Rows are time-major: row t * batch + b
/// holds frame t of sample b; frames at t >= lengths[b] are zero.
struct PaddedModality {
  Matrix data;
  std::vector<int> lengths;
  int max_length = 0;
  int dim = 0;

  int batch() const { return static_cast<int>(lengths.size()); }
  /// batch x max_length, 1 where a frame is real.
  Matrix mask() const;
};

struct PaddedBatch {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::array<PaddedModality, 3> modalities;

  int size() const { return static_cast<int>(ids.size()); }
  const PaddedModality& modality(Modality m) const { return modalities[index_of(m)]; }
};

/// Pads each modality to the longest sequence (or `min_length`, if larger).
PaddedBatch collate(std::span<const UtteranceRecord* const> records, int min_length = 0);
PaddedBatch collate(std::span<const UtteranceRecord> records, int min_length = 0);

/// Seeded shuffle of `ids` into consecutive batches; the last one may be partial.
std::vector<std::vector<std::string>> plan_batches(std::span<const std::string> ids, int batch_size,
                                                   std::uint64_t seed);

/// Single-consumer stream of padded batches over a dataset.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, std::span<const std::string> ids, int batch_size, std::uint64_t seed);
  std::optional<PaddedBatch> next();
  size_t batch_count() const { return plan_.size(); }

 private:
  const Dataset* dataset_;
  std::vector<std::vector<std::string>> plan_;
  size_t cursor_ = 0;
};

}  // namespace nmer
