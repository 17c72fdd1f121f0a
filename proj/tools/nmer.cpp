// nmer: command-line driver for data synthesis, training, evaluation and reporting.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nmer/config.hpp"
#include "nmer/dataset.hpp"
#include "nmer/error.hpp"
#include "nmer/evaluation.hpp"
#include "nmer/io.hpp"
#include "nmer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nmer;

namespace {

constexpr const char* kOutRootEnv = "NMER_OUT_ROOT";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App& cmd, CommonOptions& opts) {
  cmd.add_option("--config", opts.config, "Run config (JSON); every key optional")->check(CLI::ExistingFile);
  cmd.add_option("--seed", opts.seed, "Seed overriding the config");
  cmd.add_option("--out", opts.out,
                 std::string("Output directory; defaults to $") + kOutRootEnv + ", then the config's out_dir");
}

RunConfig resolve(const CommonOptions& opts) {
  RunConfig cfg = opts.config.empty() ? RunConfig{} : RunConfig::load(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out.empty()) {
    cfg.out_dir = opts.out;
  } else if (const char* env = std::getenv(kOutRootEnv); env && *env) {
    cfg.out_dir = env;
  }
  cfg.validate();
  return cfg;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

/// Timestamps and wall-clock live here so every other artifact stays byte-stable.
void write_meta(const fs::path& dir, const std::string& command, double wall_seconds,
                const char* name = "meta.json") {
  const json meta = {{"command", command}, {"finished_at", timestamp()}, {"wall_seconds", wall_seconds}};
  io::write_file_atomic(dir / name, meta.dump(1) + "\n");
}

void write_config(const fs::path& dir, const RunConfig& cfg) {
  io::write_file_atomic(dir / "config.json", cfg.to_json(1) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

FoldPartition split_for(const Dataset& ds, const RunConfig& cfg) {
  const FoldSplit folds = make_folds(ds, cfg.train.folds, cfg.fold_seed());
  return partition_fold(folds, cfg.train.fold, cfg.train.validation_fraction, cfg.fold_seed());
}

void log_epoch(const char* stage, const EpochRecord& e) {
  std::fprintf(stderr, "[%s] epoch %d lr %.3g loss %.5f val_wa %.4f val_ua %.4f\n", stage, e.epoch, e.lr,
               e.train.total, e.val_wa, e.val_ua);
}

fs::path teacher_path(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "teacher" / "teacher.ckpt"; }

const char* variant_dir(Variant v) { return v == Variant::full ? "nmer" : "ablation"; }

// ---------------------------------------------------------------- commands

int cmd_synth(const RunConfig& cfg) {
  Dataset ds = generate_synthetic(cfg.synthetic);
  const fs::path manifest = cfg.manifest_path();
  save_manifest(ds, manifest);
  write_config(manifest.parent_path(), cfg);
  std::cout << manifest.string() << "\n";
  return 0;
}

int cmd_teacher_train(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset ds = load_manifest(cfg.manifest_path());
  const FoldPartition split = split_for(ds, cfg);
  const fs::path dir = teacher_path(cfg).parent_path();
  fs::create_directories(dir);
  TeacherRun run = pretrain_teacher(ds, split, cfg, [](const EpochRecord& e) { log_epoch("teacher", e); });
  save_checkpoint(run.model->parameters(), "teacher", run.model->config(), cfg.to_json(-1), teacher_path(cfg));
  run.record.checkpoints = {teacher_path(cfg).filename().string()};
  io::write_file_atomic(dir / "run.jsonl", run.record.to_jsonl());
  write_config(dir, cfg);
  write_meta(dir, "teacher-train", seconds_since(start));
  std::cout << teacher_path(cfg).string() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, bool ablation, int repeats, const std::string& teacher_override) {
  const auto start = std::chrono::steady_clock::now();
  if (repeats > 0) cfg.train.repeats = repeats;
  const Variant variant = ablation ? Variant::ablation : Variant::full;
  const Dataset ds = load_manifest(cfg.manifest_path());
  const fs::path tpath = teacher_override.empty() ? teacher_path(cfg) : fs::path(teacher_override);
  if (!fs::exists(tpath)) {
    throw Error(ErrorKind::io, "missing teacher checkpoint '" + tpath.string() + "' (run teacher-train first)");
  }
  const auto teacher = load_teacher(tpath);
  const std::uint64_t checksum = parameter_checksum(teacher->parameters());

  for (int r = 0; r < cfg.train.repeats; ++r) {
    const auto run_start = std::chrono::steady_clock::now();
    RunConfig rc = cfg;
    rc.split_seed = cfg.fold_seed();
    rc.seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)});
    rc.train.repeats = 1;
    const fs::path dir = fs::path(cfg.out_dir) / variant_dir(variant) / ("r" + std::to_string(r));
    fs::create_directories(dir);
    const FoldPartition split = split_for(ds, rc);
    const std::string stage = std::string(variant_tag(variant)) + " r" + std::to_string(r);
    NmerRun run = train_nmer(ds, split, *teacher, rc, variant,
                             [&stage](const EpochRecord& e) { log_epoch(stage.c_str(), e); });
    if (parameter_checksum(teacher->parameters()) != checksum) {
      throw Error(ErrorKind::invalid_argument, "teacher parameters changed during training");
    }
    save_checkpoint(run.model->parameters(), variant_tag(variant), run.model->config(), rc.to_json(-1),
                    dir / "model.ckpt");
    run.record.checkpoints = {"model.ckpt"};
    io::write_file_atomic(dir / "run.jsonl", run.record.to_jsonl());
    write_config(dir, rc);
    write_meta(dir, std::string("train") + (ablation ? " --ablation" : ""), seconds_since(run_start));
    std::cout << (dir / "model.ckpt").string() << "\n";
  }
  std::fprintf(stderr, "[train] done in %.1fs\n", seconds_since(start));
  return 0;
}

int cmd_corrupt(const RunConfig& cfg, const std::string& input, const std::string& output,
                const std::string& noise_type, int t, const std::string& condition) {
  const NoiseSchedule sched = cfg.schedule.build();
  if (t < 0 || t > sched.total_steps) {
    throw Error(ErrorKind::invalid_argument,
                "--t " + std::to_string(t) + " outside [0, " + std::to_string(sched.total_steps) + "]");
  }
  const NoiseKind kind = parse_noise_kind(noise_type);
  const ConditionPattern cond = ConditionPattern::parse(condition);
  if (fs::weakly_canonical(input) == fs::weakly_canonical(output)) {
    throw Error(ErrorKind::invalid_argument, "--output must differ from --input");
  }
  Dataset ds = load_manifest(input);
  const std::uint64_t seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(kind), cond.mask()});
  for (auto& r : ds.records) {
    Rng rng = corruption_rng(seed, r.id, t);
    r = corrupt_condition(r, cond, cfg.noise.make(kind), t, sched, rng);
  }
  save_manifest(ds, output);
  std::cout << output << "\n";
  return 0;
}

std::vector<fs::path> discover_checkpoints(const RunConfig& cfg) {
  std::vector<fs::path> out;
  for (Variant v : {Variant::full, Variant::ablation}) {
    const fs::path root = fs::path(cfg.out_dir) / variant_dir(v);
    if (!fs::is_directory(root)) continue;
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (fs::exists(entry.path() / "model.ckpt")) found.push_back(entry.path() / "model.ckpt");
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

int cmd_evaluate(const RunConfig& cfg, std::vector<std::string> checkpoints, int draws,
                 const std::vector<std::string>& noise_types, const std::vector<int>& intensities,
                 const std::vector<std::string>& conditions) {
  if (checkpoints.empty()) {
    for (const auto& p : discover_checkpoints(cfg)) checkpoints.push_back(p.string());
  }
  if (checkpoints.empty()) {
    throw Error(ErrorKind::io, "missing checkpoint: none given and none found under '" + cfg.out_dir + "'");
  }
  const NoiseSchedule sched = cfg.schedule.build();
  GridSpec grid;
  grid.noise_types = cfg.noise.types;
  if (!noise_types.empty()) {
    grid.noise_types.clear();
    for (const auto& n : noise_types) grid.noise_types.push_back(parse_noise_kind(n));
  }
  grid.intensities = intensities.empty() ? cfg.eval.intensities : intensities;
  for (int t : grid.intensities) {
    if (t < 1 || t > sched.total_steps) {
      throw Error(ErrorKind::invalid_argument,
                  "intensity " + std::to_string(t) + " outside [1, " + std::to_string(sched.total_steps) + "]");
    }
  }
  grid.conditions.clear();
  for (const auto& c : conditions.empty() ? cfg.eval.conditions : conditions) {
    grid.conditions.push_back(ConditionPattern::parse(c));
  }
  grid.impulse_p = cfg.noise.impulse_p;
  grid.draws = draws > 0 ? draws : cfg.eval.draws;
  grid.batch_size = cfg.eval.batch_size;

  std::optional<Dataset> ds;
  for (const auto& path : checkpoints) {
    const auto start = std::chrono::steady_clock::now();
    if (!fs::exists(path)) throw Error(ErrorKind::io, "missing checkpoint '" + path + "'");
    const Checkpoint ckpt = read_checkpoint(path);
    const RunConfig trained = RunConfig::from_json(ckpt.config_json);
    const auto model = load_nmer(path);
    if (!ds) ds = load_manifest(cfg.manifest_path());
    const FoldPartition split = split_for(*ds, trained);
    const ResultsTable table = model->variant() == Variant::ablation
                                   ? evaluate_ablation(*model, *ds, split.test, grid, sched, trained.seed)
                                   : evaluate_grid(*model, *ds, split.test, grid, sched, trained.seed);
    const fs::path dir = fs::path(path).parent_path();
    emit_report(table, ReportFormat::csv, dir / "results.csv");
    emit_report(table, ReportFormat::markdown, dir / "results.md");
    emit_report(table, ReportFormat::structured, dir / "results.json");
    write_meta(dir, "evaluate", seconds_since(start), "eval_meta.json");
    std::cout << (dir / "results.json").string() << "\n";
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
  std::vector<ResultsTable> runs;
  for (const auto& d : run_dirs) {
    const fs::path file = fs::is_directory(d) ? fs::path(d) / "results.json" : fs::path(d);
    if (!fs::exists(file)) throw Error(ErrorKind::io, "missing results '" + file.string() + "' (run evaluate first)");
    runs.push_back(parse_structured_report(io::read_file(file)));
  }
  // Average within each variant, then lay the variants side by side.
  std::vector<std::string> variants;
  for (const auto& r : runs) {
    for (const auto& v : r.variants()) {
      if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
    }
  }
  std::vector<ResultsTable> averaged;
  for (const auto& v : variants) {
    std::vector<ResultsTable> same;
    for (const auto& r : runs) {
      ResultsTable only;
      for (const auto& c : r.cells) {
        if (c.variant == v) only.cells.push_back(c);
      }
      if (!only.cells.empty()) same.push_back(std::move(only));
    }
    averaged.push_back(average_tables(same));
  }
  const ResultsTable report = merge_tables(averaged);
  const fs::path dir(out);
  emit_report(report, ReportFormat::csv, dir / "report.csv");
  emit_report(report, ReportFormat::markdown, dir / "report.md");
  emit_report(report, ReportFormat::structured, dir / "report.json");
  std::cout << (dir / "report.md").string() << "\n";
  return 0;
}

std::string render_svg(const std::vector<EpochRecord>& epochs) {
  const double w = 640, h = 400, left = 70, right = 20, top = 30, bottom = 50;
  double lo = epochs.front().train.gen, hi = lo;
  for (const auto& e : epochs) {
    lo = std::min(lo, e.train.gen);
    hi = std::max(hi, e.train.gen);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const int n = static_cast<int>(epochs.size());
  auto x_of = [&](int epoch) { return left + (n > 1 ? (epoch - 1.0) / (n - 1.0) : 0.5) * (w - left - right); };
  auto y_of = [&](double v) { return top + (hi - v) / (hi - lo) * (h - top - bottom); };
  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << " " << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << "L_gen per epoch</text>\n"
      << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << y_of(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  svg << "<text x=\"" << left << "\" y=\"" << h - bottom + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\">1</text>\n"
      << "<text x=\"" << w - right << "\" y=\"" << h - bottom + 18
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << n << "</text>\n"
      << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n"
      << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& e : epochs) svg << x_of(e.epoch) << "," << y_of(e.train.gen) << " ";
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

int cmd_plot_loss(const std::string& run_dir) {
  const fs::path log = fs::path(run_dir) / "run.jsonl";
  if (!fs::exists(log)) throw Error(ErrorKind::io, "missing run log '" + log.string() + "'");
  const RunRecord rec = RunRecord::from_jsonl(io::read_file(log));
  if (rec.epochs.empty()) throw Error(ErrorKind::format, "run log '" + log.string() + "' has no epochs");
  std::string csv = "epoch,L_gen,L_kl,L_mse\n";
  for (const auto& e : rec.epochs) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", e.epoch, e.train.gen, e.train.kl, e.train.mse_gen);
    csv += buf;
  }
  io::write_file_atomic(fs::path(run_dir) / "loss_gen.csv", csv);
  io::write_file_atomic(fs::path(run_dir) / "loss_gen.svg", render_svg(rec.epochs));
  std::cout << (fs::path(run_dir) / "loss_gen.svg").string() << "\n";
  return 0;
}

void fail_line(const char* kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-robust multimodal emotion recognition pipeline"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  CommonOptions synth_opts, teacher_opts, train_opts, corrupt_opts, eval_opts;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(*synth, synth_opts);

  auto* teacher = app.add_subcommand("teacher-train", "Pretrain the full-modality teacher");
  add_common(*teacher, teacher_opts);

  auto* train = app.add_subcommand("train", "Train the student against the frozen teacher");
  add_common(*train, train_opts);
  bool ablation = false;
  int repeats = 0;
  std::string teacher_ckpt;
  train->add_flag("--ablation", ablation, "Train the w/o VAE variant");
  train->add_option("--repeats", repeats, "Independent runs with derived seeds (0 = config value)")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--teacher", teacher_ckpt, "Teacher checkpoint (default <out>/teacher/teacher.ckpt)");

  auto* corrupt = app.add_subcommand("corrupt", "Apply the noise scheduler to a dataset");
  add_common(*corrupt, corrupt_opts);
  std::string input, output, noise_type = "gaussian", condition = "{a}";
  int t = 0;
  corrupt->add_option("--input", input, "Input manifest")->required()->check(CLI::ExistingFile);
  corrupt->add_option("--output", output, "Output manifest")->required();
  corrupt->add_option("--noise-type", noise_type, "gaussian or impulse");
  corrupt->add_option("--t", t, "Noise intensity, 0..T (0 copies the input)");
  corrupt->add_option("--condition", condition, "Clean modalities, e.g. {a,l}");

  auto* evaluate = app.add_subcommand("evaluate", "Run the evaluation grid on checkpoints");
  add_common(*evaluate, eval_opts);
  std::vector<std::string> checkpoints, eval_types, eval_conditions;
  std::vector<int> eval_t;
  int draws = 0;
  evaluate->add_option("--checkpoint", checkpoints, "Student checkpoint(s); default: every run under <out>");
  evaluate->add_option("--eval-draws", draws, "Seeded corruption draws pooled per cell (0 = config value)")
      ->check(CLI::NonNegativeNumber);
  evaluate->add_option("--noise-type", eval_types, "Restrict the grid to these noise types");
  evaluate->add_option("--t", eval_t, "Restrict the grid to these intensities");
  evaluate->add_option("--condition", eval_conditions, "Restrict the grid to these conditions");

  auto* report = app.add_subcommand("report", "Average runs and merge variants into one table");
  std::vector<std::string> run_dirs;
  std::string report_out = "report";
  report->add_option("runs", run_dirs, "Run directories (or results.json files)")->required();
  report->add_option("--out", report_out, "Output directory");

  auto* plot = app.add_subcommand("plot-loss", "Write the L_gen trajectory as csv and svg");
  std::string plot_dir;
  plot->add_option("run", plot_dir, "Run directory holding run.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 2;
  }

  try {
    if (*synth) return cmd_synth(resolve(synth_opts));
    if (*teacher) return cmd_teacher_train(resolve(teacher_opts));
    if (*train) return cmd_train(resolve(train_opts), ablation, repeats, teacher_ckpt);
    if (*corrupt) return cmd_corrupt(resolve(corrupt_opts), input, output, noise_type, t, condition);
    if (*evaluate) return cmd_evaluate(resolve(eval_opts), checkpoints, draws, eval_types, eval_t, eval_conditions);
    if (*report) return cmd_report(run_dirs, report_out);
    if (*plot) return cmd_plot_loss(plot_dir);
  } catch (const Error& e) {
    fail_line(to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return 1;
  }
  return 2;
}
