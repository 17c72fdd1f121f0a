#include "nmer/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "nmer/error.hpp"
#include "nmer/evaluation.hpp"
#include "nmer/io.hpp"
#include "nmer/ops.hpp"

namespace nmer {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'N', 'M', 'E', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr std::uint64_t kTagTeacherInit = 0x7465616368ULL;
constexpr std::uint64_t kTagStudentInit = 0x73747564ULL;
constexpr std::uint64_t kTagBatches = 0x62617463ULL;
constexpr std::uint64_t kTagDropout = 0x64726F70ULL;
constexpr std::uint64_t kTagTrainNoise = 0x6E6F6973ULL;
constexpr std::uint64_t kTagValNoise = 0x76616C6EULL;

std::vector<const UtteranceRecord*> lookup(const Dataset& dataset, std::span<const std::string> ids) {
  const auto index = dataset.index();
  std::vector<const UtteranceRecord*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorKind::invalid_argument, "unknown record '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::pair<std::string, Matrix>> snapshot(const ParameterStore& store) {
  std::vector<std::pair<std::string, Matrix>> out;
  for (const auto& [name, v] : store.entries()) out.emplace_back(name, v.value());
  return out;
}

void restore(ParameterStore& store, const std::vector<std::pair<std::string, Matrix>>& snap) {
  auto& entries = store.entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    ag::Var v = entries[i].second;
    v.mutable_value() = snap[i].second;
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::string_view bytes, size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + static_cast<size_t>(i)])) << (8 * i);
  }
  return v;
}

json loss_json(const LossBreakdown& b) {
  return {{"kl", b.kl}, {"mse_gen", b.mse_gen}, {"gen", b.gen}, {"inv", b.inv}, {"cls", b.cls}, {"total", b.total}};
}

LossBreakdown loss_from_json(const json& j) {
  LossBreakdown b;
  b.kl = j.at("kl").get<double>();
  b.mse_gen = j.at("mse_gen").get<double>();
  b.gen = j.at("gen").get<double>();
  b.inv = j.at("inv").get<double>();
  b.cls = j.at("cls").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

ModelConfig model_for(const RunConfig& cfg, const Dataset& dataset) {
  ModelConfig m = cfg.model;
  m.input_dims = dataset.manifest.dims;
  m.validate();
  return m;
}

/// Tracks the best validation WA and the matching parameter snapshot.
struct BestTracker {
  int epoch = 0;
  double wa = -1.0;
  double ua = 0.0;
  std::vector<std::pair<std::string, Matrix>> params;

  void offer(const EpochRecord& e, const ParameterStore& store) {
    if (e.val_wa > wa) {
      epoch = e.epoch;
      wa = e.val_wa;
      ua = e.val_ua;
      params = snapshot(store);
    }
  }
};

void require_finite_loss(double v, const char* stage, int epoch) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::divergence, std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch));
  }
}

}  // namespace

double lr_lambda(int epoch, int pivot, int total) {
  if (epoch < 1) throw Error(ErrorKind::invalid_argument, "lr_lambda: epochs are 1-based");
  if (epoch <= pivot || total <= pivot) return 1.0;
  return std::max(0.0, static_cast<double>(total - epoch) / static_cast<double>(total - pivot));
}

AdamW::AdamW(ParameterStore& store, const TrainConfig& cfg)
    : store_(&store), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
  for (const auto& [name, v] : store.entries()) {
    m_.push_back(Matrix::Zero(v.rows(), v.cols()));
    v_.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
}

void AdamW::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, steps_);
  const double c2 = 1.0 - std::pow(beta2_, steps_);
  auto& entries = store_->entries();
  for (size_t i = 0; i < entries.size(); ++i) {
    ag::Var p = entries[i].second;
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    w *= 1.0 - lr * weight_decay_;
    w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

TeacherModel::TeacherModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(init_seed, {0x494E4954ULL});
  backbone_ = FeatureBackbone(store_, cfg_, rng);
  classifier_ = Classifier(store_, "classifier", cfg_.joint_width() + cfg_.invariant_width, cfg_, rng);
}

TeacherModel::Output TeacherModel::forward(const PaddedBatch& batch, Mode mode, Rng* rng) const {
  ForwardContext ctx;
  ctx.training = mode == Mode::train;
  ctx.dropout = cfg_.dropout;
  ctx.rng = rng;
  if (ctx.training && rng == nullptr) throw Error(ErrorKind::invalid_argument, "train-mode forward needs an rng");
  auto features = backbone_(batch, ctx);
  Output out;
  out.joint = features.specific;
  out.invariant = features.invariant;
  const std::array<ag::Var, 2> parts = {features.specific, features.invariant};
  out.logits = classifier_(ag::concat_cols(parts), ctx);
  return out;
}

Matrix TeacherTargets::gather_joint(std::span<const std::string> ids) const {
  Matrix out(static_cast<Eigen::Index>(ids.size()), joint.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = rows.find(ids[i]);
    if (it == rows.end()) throw Error(ErrorKind::invalid_argument, "missing teacher target for '" + ids[i] + "'");
    out.row(static_cast<Eigen::Index>(i)) = joint.row(it->second);
  }
  return out;
}

Matrix TeacherTargets::gather_invariant(std::span<const std::string> ids) const {
  Matrix out(static_cast<Eigen::Index>(ids.size()), invariant.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = rows.find(ids[i]);
    if (it == rows.end()) throw Error(ErrorKind::invalid_argument, "missing teacher target for '" + ids[i] + "'");
    out.row(static_cast<Eigen::Index>(i)) = invariant.row(it->second);
  }
  return out;
}

TeacherTargets compute_targets(const TeacherModel& teacher, const Dataset& dataset, std::span<const std::string> ids,
                               int batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "compute_targets: batch size must be positive");
  const auto records = lookup(dataset, ids);
  const auto& cfg = teacher.config();
  TeacherTargets out;
  out.joint.resize(static_cast<Eigen::Index>(ids.size()), cfg.joint_width());
  out.invariant.resize(static_cast<Eigen::Index>(ids.size()), cfg.invariant_width);
  ag::NoGradGuard no_grad;
  for (size_t i = 0; i < records.size(); i += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(records.size() - i, static_cast<size_t>(batch_size));
    const auto chunk = std::span<const UtteranceRecord* const>(records).subspan(i, n);
    const auto o = teacher.forward(collate(chunk), Mode::eval, nullptr);
    const auto r0 = static_cast<Eigen::Index>(i);
    const auto rn = static_cast<Eigen::Index>(n);
    out.joint.middleRows(r0, rn) = o.joint.value();
    out.invariant.middleRows(r0, rn) = o.invariant.value();
  }
  for (size_t i = 0; i < ids.size(); ++i) out.rows.emplace(ids[i], static_cast<Eigen::Index>(i));
  return out;
}

std::uint64_t parameter_checksum(const ParameterStore& store) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, v] : store.entries()) {
    mix(name.data(), name.size());
    const std::int64_t shape[2] = {v.rows(), v.cols()};
    mix(shape, sizeof shape);
    mix(v.value().data(), static_cast<size_t>(v.value().size()) * sizeof(double));
  }
  return h;
}

std::string RunRecord::header_line() const {
  json cfg = config_json.empty() ? json::object() : json::parse(config_json);
  return json{{"type", "header"}, {"kind", kind}, {"seed", seed}, {"config", cfg}}.dump();
}

std::string RunRecord::epoch_line(const EpochRecord& e) {
  return json{{"type", "epoch"}, {"epoch", e.epoch},       {"lr", e.lr},
              {"loss", loss_json(e.train)}, {"val_wa", e.val_wa}, {"val_ua", e.val_ua}}
      .dump();
}

std::string RunRecord::summary_line() const {
  return json{{"type", "summary"},
              {"best_epoch", best_epoch},
              {"best_val_wa", best_val_wa},
              {"best_val_ua", best_val_ua},
              {"checkpoints", checkpoints}}
      .dump();
}

std::string RunRecord::to_jsonl() const {
  std::string out = header_line() + "\n";
  for (const auto& e : epochs) out += epoch_line(e) + "\n";
  out += summary_line() + "\n";
  return out;
}

RunRecord RunRecord::from_jsonl(const std::string& text) {
  RunRecord r;
  size_t pos = 0;
  int line_no = 0;
  try {
    while (pos < text.size()) {
      size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        r.kind = j.at("kind").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config_json = j.at("config").dump();
      } else if (type == "epoch") {
        EpochRecord e;
        e.epoch = j.at("epoch").get<int>();
        e.lr = j.at("lr").get<double>();
        e.train = loss_from_json(j.at("loss"));
        e.val_wa = j.at("val_wa").get<double>();
        e.val_ua = j.at("val_ua").get<double>();
        r.epochs.push_back(e);
      } else if (type == "summary") {
        r.best_epoch = j.at("best_epoch").get<int>();
        r.best_val_wa = j.at("best_val_wa").get<double>();
        r.best_val_ua = j.at("best_val_ua").get<double>();
        r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
      } else {
        throw Error(ErrorKind::format, "run record line " + std::to_string(line_no) + ": unknown type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, "run record line " + std::to_string(line_no) + ": " + e.what());
  }
  return r;
}

TeacherRun pretrain_teacher(const Dataset& dataset, const FoldPartition& split, const RunConfig& cfg,
                            const EpochCallback& on_epoch) {
  if (split.train.empty()) throw Error(ErrorKind::invalid_argument, "pretrain_teacher: empty training split");
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = cfg.train;
  TeacherRun run;
  run.model = std::make_unique<TeacherModel>(model_for(cfg, dataset), derive_seed(cfg.seed, {kTagTeacherInit}));
  TeacherModel& model = *run.model;
  AdamW opt(model.parameters(), tc);
  const auto val = lookup(dataset, split.validation);
  const LogitsFn val_logits = [&model](const PaddedBatch& b) {
    ag::NoGradGuard no_grad;
    return Matrix(model.forward(b, Mode::eval, nullptr).logits.value());
  };

  run.record.kind = "teacher";
  run.record.seed = cfg.seed;
  run.record.config_json = cfg.to_json(-1);
  BestTracker best;
  for (int epoch = 1; epoch <= tc.teacher_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = tc.lr * lr_lambda(epoch, tc.lr_pivot, tc.teacher_epochs);
    Rng dropout_rng = make_rng(cfg.seed, {kTagTeacherInit, kTagDropout, static_cast<std::uint64_t>(epoch)});
    BatchStream stream(dataset, split.train, tc.batch_size,
                       derive_seed(cfg.seed, {kTagTeacherInit, kTagBatches, static_cast<std::uint64_t>(epoch)}));
    double seen = 0.0;
    while (auto batch = stream.next()) {
      model.parameters().zero_grad();
      ag::Var loss;
      try {
        loss = cls_loss(model.forward(*batch, Mode::train, &dropout_rng).logits, batch->labels);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite) throw;
        require_finite_loss(NAN, "teacher", epoch);
      }
      require_finite_loss(loss.scalar(), "teacher", epoch);
      ag::backward(loss);
      opt.step(rec.lr);
      const double n = batch->size();
      rec.train += total_loss(0.0, 0.0, 0.0, loss.scalar(), tc.weights).scaled(n);
      seen += n;
    }
    rec.train = rec.train.scaled(1.0 / seen);
    if (!val.empty()) {
      const auto cm = evaluate_confusion(val_logits, val, cfg.eval.batch_size);
      rec.val_wa = weighted_accuracy(cm);
      rec.val_ua = unweighted_accuracy(cm);
    }
    best.offer(rec, model.parameters());
    run.record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (val.empty()) best.params = snapshot(model.parameters()), best.epoch = tc.teacher_epochs, best.wa = 0.0;
  restore(model.parameters(), best.params);
  model.parameters().zero_grad();
  run.record.best_epoch = best.epoch;
  run.record.best_val_wa = std::max(best.wa, 0.0);
  run.record.best_val_ua = best.ua;
  run.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

TrainingDraw draw_training_corruption(std::uint64_t seed, int epoch, const std::string& id, int total_steps,
                                      std::span<const NoiseKind> kinds) {
  if (kinds.empty()) throw Error(ErrorKind::invalid_argument, "no noise types configured");
  if (total_steps < 1) throw Error(ErrorKind::invalid_argument, "total_steps must be >= 1");
  Rng rng = make_rng(seed, {kTagTrainNoise, static_cast<std::uint64_t>(epoch), fnv1a(id)});
  const auto& all = ConditionPattern::all();
  TrainingDraw d;
  d.condition = all[std::uniform_int_distribution<size_t>(0, all.size() - 1)(rng)];
  d.t = std::uniform_int_distribution<int>(1, total_steps)(rng);
  d.kind = kinds[std::uniform_int_distribution<size_t>(0, kinds.size() - 1)(rng)];
  return d;
}

NmerRun train_nmer(const Dataset& dataset, const FoldPartition& split, const TeacherModel& teacher,
                   const RunConfig& cfg, Variant variant, const EpochCallback& on_epoch) {
  if (split.train.empty()) throw Error(ErrorKind::invalid_argument, "train_nmer: empty training split");
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& tc = cfg.train;
  const NoiseSchedule sched = cfg.schedule.build();
  const auto& kinds = cfg.noise.types;

  NmerRun run;
  run.model = std::make_unique<NmerModel>(model_for(cfg, dataset), variant, derive_seed(cfg.seed, {kTagStudentInit}));
  NmerModel& model = *run.model;
  if (teacher.config().joint_width() != model.config().joint_width() ||
      teacher.config().invariant_width != model.config().invariant_width) {
    throw Error(ErrorKind::shape_mismatch, "train_nmer: teacher target widths do not match the student");
  }
  const TeacherTargets targets = compute_targets(teacher, dataset, split.train, cfg.eval.batch_size);
  AdamW opt(model.parameters(), tc);

  std::vector<UtteranceRecord> val_noisy;
  for (const auto* r : lookup(dataset, split.validation)) {
    Rng rng = make_rng(cfg.seed, {kTagValNoise, fnv1a(r->id)});
    const auto& all = ConditionPattern::all();
    const auto cond = all[std::uniform_int_distribution<size_t>(0, all.size() - 1)(rng)];
    const int t = std::uniform_int_distribution<int>(1, sched.total_steps)(rng);
    const NoiseKind kind = kinds[std::uniform_int_distribution<size_t>(0, kinds.size() - 1)(rng)];
    val_noisy.push_back(corrupt_condition(*r, cond, cfg.noise.make(kind), t, sched, rng));
  }
  std::vector<const UtteranceRecord*> val;
  for (const auto& r : val_noisy) val.push_back(&r);
  const LogitsFn val_logits = eval_logits(model);

  const std::uint64_t tag = variant == Variant::full ? kTagStudentInit : kTagStudentInit + 1;
  const auto index = dataset.index();
  run.record.kind = variant_tag(variant);
  run.record.seed = cfg.seed;
  run.record.config_json = cfg.to_json(-1);
  BestTracker best;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = tc.lr * lr_lambda(epoch, tc.lr_pivot, tc.epochs);
    Rng dropout_rng = make_rng(cfg.seed, {tag, kTagDropout, static_cast<std::uint64_t>(epoch)});
    const auto plan =
        plan_batches(split.train, tc.batch_size, derive_seed(cfg.seed, {tag, kTagBatches, static_cast<std::uint64_t>(epoch)}));
    double seen = 0.0;
    for (const auto& ids : plan) {
      std::vector<UtteranceRecord> noisy;
      noisy.reserve(ids.size());
      for (const auto& id : ids) {
        const auto d = draw_training_corruption(cfg.seed, epoch, id, sched.total_steps, kinds);
        Rng rng = corruption_rng(derive_seed(cfg.seed, {kTagTrainNoise, static_cast<std::uint64_t>(epoch)}), id, d.t);
        noisy.push_back(corrupt_condition(*index.at(id), d.condition, cfg.noise.make(d.kind), d.t, sched, rng));
      }
      const PaddedBatch batch = collate(std::span<const UtteranceRecord>(noisy));
      const Matrix target_h = targets.gather_invariant(ids);

      model.parameters().zero_grad();
      double kl = 0.0, mse = 0.0;
      ag::Var total;
      ag::Var inv, cls;
      try {
        if (variant == Variant::full) {
          const auto out = model.forward(batch, Mode::train, &dropout_rng);
          const ag::Var kl_v = kl_loss(out.latent->mean, out.latent->logvar);
          const ag::Var mse_v = mse_loss(out.joint, ag::constant(targets.gather_joint(ids)));
          inv = inv_loss(out.invariant, target_h);
          cls = cls_loss(out.logits, batch.labels);
          const ag::Var gen = ag::add(ag::scale(kl_v, tc.weights.kl), mse_v);
          total = ag::add(ag::add(ag::scale(gen, tc.weights.gen), ag::scale(inv, tc.weights.inv)),
                          ag::scale(cls, tc.weights.cls));
          kl = kl_v.scalar();
          mse = mse_v.scalar();
        } else {
          const auto out = model.forward_ablation(batch, Mode::train, &dropout_rng);
          inv = inv_loss(out.invariant, target_h);
          cls = cls_loss(out.logits, batch.labels);
          total = ag::add(ag::scale(inv, tc.weights.inv), ag::scale(cls, tc.weights.cls));
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite) throw;
        require_finite_loss(NAN, variant_tag(variant), epoch);
      }
      require_finite_loss(total.scalar(), variant_tag(variant), epoch);
      ag::backward(total);
      opt.step(rec.lr);
      LossBreakdown b = total_loss(kl, mse, inv.scalar(), cls.scalar(), tc.weights);
      b.total = total.scalar();
      const double n = static_cast<double>(ids.size());
      rec.train += b.scaled(n);
      seen += n;
    }
    rec.train = rec.train.scaled(1.0 / seen);
    if (!val.empty()) {
      const auto cm = evaluate_confusion(val_logits, val, cfg.eval.batch_size);
      rec.val_wa = weighted_accuracy(cm);
      rec.val_ua = unweighted_accuracy(cm);
    }
    best.offer(rec, model.parameters());
    run.record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (val.empty()) best.params = snapshot(model.parameters()), best.epoch = tc.epochs, best.wa = 0.0;
  restore(model.parameters(), best.params);
  model.parameters().zero_grad();
  run.record.best_epoch = best.epoch;
  run.record.best_val_wa = std::max(best.wa, 0.0);
  run.record.best_val_ua = best.ua;
  run.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

void save_checkpoint(const ParameterStore& store, const std::string& kind, const ModelConfig& model,
                     const std::string& config_json, const std::filesystem::path& path) {
  json tensors = json::array();
  for (const auto& [name, v] : store.entries()) tensors.push_back({{"name", name}, {"shape", {v.rows(), v.cols()}}});
  const json header = {{"kind", kind},
                       {"model", json::parse(model_config_to_json(model))},
                       {"config", config_json.empty() ? json::object() : json::parse(config_json)},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + store.scalar_count() * 8);
  for (const auto& [name, v] : store.entries()) {
    const Matrix& m = v.value();
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  io::write_file_atomic(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string where = "checkpoint '" + path.string() + "'";
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::format, where + ": not a checkpoint file");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::format, where + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 12, 8);
  if (header_len > bytes.size() - 20) throw Error(ErrorKind::format, where + ": truncated header");
  Checkpoint ckpt;
  size_t offset = 20 + header_len;
  try {
    const json header = json::parse(bytes.substr(20, header_len));
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.model = model_config_from_json(header.at("model").dump());
    ckpt.config_json = header.at("config").dump();
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw Error(ErrorKind::format, where + ": bad shape for tensor '" + name + "'");
      Matrix m(rows, cols);
      const size_t need = static_cast<size_t>(m.size()) * 8;
      if (bytes.size() - offset < need) throw Error(ErrorKind::format, where + ": truncated tensor '" + name + "'");
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = std::bit_cast<double>(get_le(bytes, offset, 8));
        offset += 8;
      }
      ckpt.tensors.emplace_back(name, std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, where + ": bad header: " + e.what());
  }
  if (offset != bytes.size()) throw Error(ErrorKind::format, where + ": trailing bytes");
  return ckpt;
}

void load_parameters(ParameterStore& store, const Checkpoint& ckpt) {
  const auto& entries = store.entries();
  for (const auto& [name, m] : ckpt.tensors) {
    if (!store.contains(name)) throw Error(ErrorKind::shape_mismatch, "checkpoint tensor '" + name + "' is not in the model");
  }
  for (const auto& [name, v] : entries) {
    auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(), [&](const auto& t) { return t.first == name; });
    if (it == ckpt.tensors.end()) throw Error(ErrorKind::shape_mismatch, "checkpoint lacks tensor '" + name + "'");
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw Error(ErrorKind::shape_mismatch,
                  "tensor '" + name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                      std::to_string(it->second.cols()) + " in the checkpoint, model expects " +
                      std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
    }
  }
  for (const auto& [name, v] : entries) {
    auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(), [&](const auto& t) { return t.first == name; });
    ag::Var p = v;
    p.mutable_value() = it->second;
  }
}

std::unique_ptr<TeacherModel> load_teacher(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "teacher") {
    throw Error(ErrorKind::format, "checkpoint '" + path.string() + "' holds '" + ckpt.kind + "', not a teacher");
  }
  auto model = std::make_unique<TeacherModel>(ckpt.model, 0);
  load_parameters(model->parameters(), ckpt);
  return model;
}

std::unique_ptr<NmerModel> load_nmer(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Variant variant;
  if (ckpt.kind == variant_tag(Variant::full)) {
    variant = Variant::full;
  } else if (ckpt.kind == variant_tag(Variant::ablation)) {
    variant = Variant::ablation;
  } else {
    throw Error(ErrorKind::format, "checkpoint '" + path.string() + "' holds '" + ckpt.kind + "', not a student model");
  }
  auto model = std::make_unique<NmerModel>(ckpt.model, variant, 0);
  load_parameters(model->parameters(), ckpt);
  return model;
}

}  // namespace nmer
