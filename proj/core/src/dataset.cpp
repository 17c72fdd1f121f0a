#include "nmer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "nmer/error.hpp"
#include "nmer/io.hpp"
#include "nmer/rng.hpp"

namespace nmer {

using nlohmann::json;

const UtteranceRecord& Dataset::record(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw Error(ErrorKind::invalid_argument, "unknown record id '" + id + "'");
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.id);
  return out;
}

std::unordered_map<std::string, const UtteranceRecord*> Dataset::index() const {
  std::unordered_map<std::string, const UtteranceRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.emplace(r.id, &r);
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_per_class < 1) throw Error(ErrorKind::invalid_argument, "synthetic: n_per_class must be positive");
  if (spec.latent_dim < kNumClasses) {
    throw Error(ErrorKind::invalid_argument, "synthetic: latent_dim must be at least the number of classes");
  }
  for (int m = 0; m < 3; ++m) {
    if (spec.dims[m] < 1) throw Error(ErrorKind::invalid_argument, "synthetic: modality dims must be positive");
    const auto& r = spec.length_ranges[m];
    if (r[0] < 1 || r[1] < r[0]) throw Error(ErrorKind::invalid_argument, "synthetic: invalid length range");
  }
  if (!(spec.separation >= 0.0)) throw Error(ErrorKind::invalid_argument, "synthetic: separation must be >= 0");
  if (!(spec.frame_noise_variance >= 0.0)) {
    throw Error(ErrorKind::invalid_argument, "synthetic: frame noise variance must be >= 0");
  }

  const int latent = spec.latent_dim;
  std::array<Matrix, 3> projection;
  std::array<RowVector, 3> offset;
  {
    Rng rng = make_rng(spec.seed, {0x50524F4AULL});
    std::normal_distribution<double> normal(0.0, 1.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(latent));
    for (int m = 0; m < 3; ++m) {
      projection[m].resize(latent, spec.dims[m]);
      for (Eigen::Index i = 0; i < projection[m].size(); ++i) projection[m].data()[i] = s * normal(rng);
      offset[m].resize(spec.dims[m]);
      for (Eigen::Index i = 0; i < offset[m].size(); ++i) offset[m][i] = normal(rng);
    }
  }

  Dataset ds;
  ds.manifest.provenance = Provenance::synthetic;
  ds.manifest.dims = spec.dims;
  const double frame_std = std::sqrt(spec.frame_noise_variance);
  int index = 0;
  for (int i = 0; i < spec.n_per_class; ++i) {
    for (int label = 0; label < kNumClasses; ++label, ++index) {
      Rng rng = make_rng(spec.seed, {0x52454355ULL, static_cast<std::uint64_t>(index)});
      std::normal_distribution<double> normal(0.0, 1.0);
      RowVector u(latent);
      for (int j = 0; j < latent; ++j) u[j] = normal(rng);
      u[label] += spec.separation;

      UtteranceRecord rec;
      char buf[32];
      std::snprintf(buf, sizeof buf, "utt%05d", index);
      rec.id = buf;
      rec.label = label;
      for (int m = 0; m < 3; ++m) {
        std::uniform_int_distribution<int> len_dist(spec.length_ranges[m][0], spec.length_ranges[m][1]);
        const int len = len_dist(rng);
        const RowVector clean = u * projection[m] + offset[m];
        Matrix frames(len, spec.dims[m]);
        for (int f = 0; f < len; ++f) {
          for (int d = 0; d < spec.dims[m]; ++d) frames(f, d) = clean[d] + frame_std * normal(rng);
        }
        rec.features[m] = frames.cast<float>();
      }
      ds.records.push_back(std::move(rec));
    }
  }
  refresh_descriptors(ds);
  return ds;
}

namespace {

const char* provenance_name(Provenance p) { return p == Provenance::synthetic ? "synthetic" : "ingested"; }

Provenance parse_provenance(const std::string& s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "ingested") return Provenance::ingested;
  throw Error(ErrorKind::format, "manifest: unknown provenance '" + s + "'");
}

constexpr const char* kKeys[3] = {"a", "v", "l"};

}  // namespace

void refresh_descriptors(Dataset& dataset) {
  auto& recs = dataset.manifest.records;
  recs.clear();
  recs.reserve(dataset.records.size());
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    RecordDescriptor d;
    d.id = r.id;
    d.label = r.label;
    for (int m = 0; m < 3; ++m) {
      d.shapes[m] = {r.features[m].rows(), r.features[m].cols()};
      char buf[64];
      std::snprintf(buf, sizeof buf, "tensors/%06zu.%s.f32", i, kKeys[m]);
      d.paths[m] = buf;
    }
    recs.push_back(std::move(d));
  }
  validate(dataset);
}

void validate(const Dataset& dataset) {
  const auto& man = dataset.manifest;
  if (man.records.size() != dataset.records.size()) {
    throw Error(ErrorKind::format, "manifest record count does not match loaded records");
  }
  std::set<std::string> seen;
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    const auto& d = man.records[i];
    if (!seen.insert(r.id).second) throw Error(ErrorKind::format, "duplicate record id '" + r.id + "'");
    if (r.id != d.id) throw Error(ErrorKind::format, "record '" + r.id + "' out of manifest order");
    if (r.label < 0 || r.label >= kNumClasses) {
      throw Error(ErrorKind::format, "record '" + r.id + "': label out of range");
    }
    for (int m = 0; m < 3; ++m) {
      const auto& f = r.features[m];
      if (f.rows() < 1) throw Error(ErrorKind::shape_mismatch, "record '" + r.id + "': empty sequence");
      if (f.cols() != man.dims[m]) {
        throw Error(ErrorKind::shape_mismatch, "record '" + r.id + "': modality " + kKeys[m] + " has dim " +
                                                   std::to_string(f.cols()) + ", manifest says " +
                                                   std::to_string(man.dims[m]));
      }
      if (!f.allFinite()) throw Error(ErrorKind::non_finite, "record '" + r.id + "': non-finite feature values");
    }
  }
}

void save_manifest(Dataset& dataset, const std::filesystem::path& manifest_path) {
  refresh_descriptors(dataset);
  const auto root = manifest_path.has_parent_path() ? manifest_path.parent_path() : std::filesystem::path(".");
  json records = json::array();
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    const auto& d = dataset.manifest.records[i];
    json shapes = json::object();
    json paths = json::object();
    for (int m = 0; m < 3; ++m) {
      shapes[kKeys[m]] = {d.shapes[m][0], d.shapes[m][1]};
      paths[kKeys[m]] = d.paths[m];
      const auto& f = r.features[m];
      io::write_file_atomic(root / d.paths[m], io::encode_f32_le({f.data(), static_cast<size_t>(f.size())}));
    }
    records.push_back({{"id", d.id}, {"label", d.label}, {"shapes", shapes}, {"paths", paths}});
  }
  const auto& dims = dataset.manifest.dims;
  json doc = {
      {"version", dataset.manifest.version},
      {"provenance", provenance_name(dataset.manifest.provenance)},
      {"dims", {{"a", dims[0]}, {"v", dims[1]}, {"l", dims[2]}}},
      {"records", records},
  };
  io::write_file_atomic(manifest_path, doc.dump(1) + "\n");
}

Dataset load_manifest(const std::filesystem::path& manifest_path) {
  json doc;
  try {
    doc = json::parse(io::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "manifest '" + manifest_path.string() + "': " + e.what());
  }
  const auto root = manifest_path.has_parent_path() ? manifest_path.parent_path() : std::filesystem::path(".");
  Dataset ds;
  std::string current = "<header>";
  try {
    ds.manifest.version = doc.at("version").get<int>();
    if (ds.manifest.version != 1) throw Error(ErrorKind::format, "manifest: unsupported version");
    ds.manifest.provenance = parse_provenance(doc.at("provenance").get<std::string>());
    for (int m = 0; m < 3; ++m) ds.manifest.dims[m] = doc.at("dims").at(kKeys[m]).get<int>();
    for (const auto& jr : doc.at("records")) {
      RecordDescriptor d;
      d.id = jr.at("id").get<std::string>();
      current = d.id;
      d.label = jr.at("label").get<int>();
      UtteranceRecord rec;
      rec.id = d.id;
      rec.label = d.label;
      for (int m = 0; m < 3; ++m) {
        const auto& shape = jr.at("shapes").at(kKeys[m]);
        d.shapes[m] = {shape.at(0).get<std::int64_t>(), shape.at(1).get<std::int64_t>()};
        d.paths[m] = jr.at("paths").at(kKeys[m]).get<std::string>();
        const auto [rows, cols] = d.shapes[m];
        if (cols != ds.manifest.dims[m]) {
          throw Error(ErrorKind::shape_mismatch, "record '" + d.id + "': modality " + kKeys[m] + " shape dim " +
                                                     std::to_string(cols) + " != manifest dim " +
                                                     std::to_string(ds.manifest.dims[m]));
        }
        if (rows < 1) throw Error(ErrorKind::shape_mismatch, "record '" + d.id + "': empty sequence");
        std::filesystem::path p = d.paths[m];
        if (p.is_relative()) p = root / p;
        std::string bytes;
        try {
          bytes = io::read_file(p);
        } catch (const Error&) {
          throw Error(ErrorKind::io, "record '" + d.id + "': missing tensor file '" + p.string() + "'");
        }
        const auto expected = static_cast<size_t>(rows * cols) * 4;
        if (bytes.size() != expected) {
          throw Error(ErrorKind::shape_mismatch, "record '" + d.id + "': tensor file '" + p.string() + "' has " +
                                                     std::to_string(bytes.size()) + " bytes, expected " +
                                                     std::to_string(expected));
        }
        const auto values = io::decode_f32_le(bytes);
        rec.features[m] = Eigen::Map<const FloatMatrix>(values.data(), rows, cols);
      }
      ds.manifest.records.push_back(std::move(d));
      ds.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "manifest record '" + current + "': " + e.what());
  }
  validate(ds);
  return ds;
}

std::vector<std::string> FoldSplit::fold_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<size_t> FoldSplit::fold_sizes() const {
  std::vector<size_t> sizes(static_cast<size_t>(k), 0);
  for (const auto& [id, f] : assignments) ++sizes[static_cast<size_t>(f)];
  return sizes;
}

FoldSplit make_folds(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<size_t>(k) > dataset.size()) {
    throw Error(ErrorKind::invalid_argument, "folds: k=" + std::to_string(k) + " must be in [2, " +
                                                 std::to_string(dataset.size()) + "]");
  }
  std::vector<std::string> ids = dataset.ids();
  std::sort(ids.begin(), ids.end());
  Rng rng = make_rng(seed, {0x464F4C44ULL});
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit split;
  split.k = k;
  for (size_t i = 0; i < ids.size(); ++i) split.assignments[ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
  return split;
}

FoldPartition partition_fold(const FoldSplit& split, int fold, double validation_fraction, std::uint64_t seed) {
  if (fold < 0 || fold >= split.k) throw Error(ErrorKind::invalid_argument, "fold index out of range");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "validation fraction must be in [0, 1)");
  }
  FoldPartition part;
  std::vector<std::string> rest;
  for (const auto& [id, f] : split.assignments) (f == fold ? part.test : rest).push_back(id);
  Rng rng = make_rng(seed, {0x56414CULL, static_cast<std::uint64_t>(fold)});
  std::shuffle(rest.begin(), rest.end(), rng);
  size_t n_val = static_cast<size_t>(std::llround(validation_fraction * static_cast<double>(rest.size())));
  if (validation_fraction > 0.0) n_val = std::max<size_t>(n_val, 1);
  n_val = std::min(n_val, rest.size() > 0 ? rest.size() - 1 : 0);
  part.validation.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  part.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  std::sort(part.train.begin(), part.train.end());
  std::sort(part.validation.begin(), part.validation.end());
  return part;
}

Matrix PaddedModality::mask() const {
  Matrix m = Matrix::Zero(batch(), max_length);
  for (int b = 0; b < batch(); ++b) m.row(b).head(lengths[b]).setOnes();
  return m;
}

PaddedBatch collate(std::span<const UtteranceRecord* const> records, int min_length) {
  if (records.empty()) throw Error(ErrorKind::invalid_argument, "collate: empty batch");
  PaddedBatch batch;
  const int n = static_cast<int>(records.size());
  for (const auto* r : records) {
    batch.ids.push_back(r->id);
    batch.labels.push_back(r->label);
  }
  for (int m = 0; m < 3; ++m) {
    auto& pm = batch.modalities[m];
    pm.dim = static_cast<int>(records.front()->features[m].cols());
    pm.max_length = std::max(min_length, 1);
    for (const auto* r : records) {
      const auto& f = r->features[m];
      if (f.cols() != pm.dim) throw Error(ErrorKind::shape_mismatch, "collate: record '" + r->id + "' dim mismatch");
      if (f.rows() < 1) throw Error(ErrorKind::shape_mismatch, "collate: record '" + r->id + "' has no frames");
      pm.lengths.push_back(static_cast<int>(f.rows()));
      pm.max_length = std::max(pm.max_length, static_cast<int>(f.rows()));
    }
    pm.data = Matrix::Zero(static_cast<Eigen::Index>(pm.max_length) * n, pm.dim);
    for (int b = 0; b < n; ++b) {
      const auto& f = records[b]->features[m];
      for (Eigen::Index t = 0; t < f.rows(); ++t) pm.data.row(t * n + b) = f.row(t).cast<double>();
    }
  }
  return batch;
}

PaddedBatch collate(std::span<const UtteranceRecord> records, int min_length) {
  std::vector<const UtteranceRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return collate(std::span<const UtteranceRecord* const>(ptrs), min_length);
}

std::vector<std::vector<std::string>> plan_batches(std::span<const std::string> ids, int batch_size,
                                                   std::uint64_t seed) {
  if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "batch size must be positive");
  std::vector<std::string> order(ids.begin(), ids.end());
  Rng rng = make_rng(seed, {0x42415443ULL});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::string>> plan;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

BatchStream::BatchStream(const Dataset& dataset, std::span<const std::string> ids, int batch_size,
                         std::uint64_t seed)
    : dataset_(&dataset), plan_(plan_batches(ids, batch_size, seed)) {}

std::optional<PaddedBatch> BatchStream::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  const auto& ids = plan_[cursor_++];
  std::vector<const UtteranceRecord*> recs;
  recs.reserve(ids.size());
  for (const auto& id : ids) recs.push_back(&dataset_->record(id));
  return collate(std::span<const UtteranceRecord* const>(recs));
}

}  // namespace nmer
