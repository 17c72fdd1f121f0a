#include "nmer/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "nmer/error.hpp"
#include "nmer/io.hpp"

namespace nmer {

using nlohmann::json;

void ConfusionMatrix::add(int label, int predicted) {
  if (label < 0 || label >= kNumClasses || predicted < 0 || predicted >= kNumClasses) {
    throw Error(ErrorKind::invalid_argument, "confusion: class index out of range");
  }
  ++counts[static_cast<size_t>(label)][static_cast<size_t>(predicted)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (auto c : row) n += c;
  }
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  for (size_t i = 0; i < counts.size(); ++i) {
    for (size_t j = 0; j < counts.size(); ++j) counts[i][j] += o.counts[i][j];
  }
  return *this;
}

ConfusionMatrix confusion_from(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw Error(ErrorKind::invalid_argument, "confusion: length mismatch");
  ConfusionMatrix cm;
  for (size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

double weighted_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw Error(ErrorKind::invalid_argument, "weighted_accuracy: empty confusion matrix");
  std::int64_t correct = 0;
  for (size_t i = 0; i < cm.counts.size(); ++i) correct += cm.counts[i][i];
  return static_cast<double>(correct) / static_cast<double>(total);
}

double unweighted_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorKind::invalid_argument, "unweighted_accuracy: empty confusion matrix");
  double recall_sum = 0.0;
  int present = 0;
  for (size_t i = 0; i < cm.counts.size(); ++i) {
    std::int64_t row = 0;
    for (auto c : cm.counts[i]) row += c;
    if (row == 0) continue;
    recall_sum += static_cast<double>(cm.counts[i][i]) / static_cast<double>(row);
    ++present;
  }
  return recall_sum / present;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(static_cast<size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

ConfusionMatrix evaluate_confusion(const LogitsFn& logits, std::span<const UtteranceRecord* const> records,
                                   int batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "evaluate: batch size must be positive");
  ConfusionMatrix cm;
  for (size_t i = 0; i < records.size(); i += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(records.size() - i, static_cast<size_t>(batch_size));
    auto chunk = records.subspan(i, n);
    PaddedBatch batch = collate(chunk);
    const auto preds = argmax_rows(logits(batch));
    for (size_t j = 0; j < n; ++j) cm.add(chunk[j]->label, preds[j]);
  }
  return cm;
}

LogitsFn eval_logits(const NmerModel& model) {
  return [&model](const PaddedBatch& batch) {
    ag::NoGradGuard no_grad;
    return Matrix(model.logits(batch, Mode::eval, nullptr).value());
  };
}

namespace {

ResultsTable run_grid(const NmerModel& model, const Dataset& dataset, std::span<const std::string> test_ids,
                      const GridSpec& grid, const NoiseSchedule& sched, std::uint64_t seed) {
  if (test_ids.empty()) throw Error(ErrorKind::invalid_argument, "evaluate_grid: no test records");
  if (grid.draws < 1) throw Error(ErrorKind::invalid_argument, "evaluate_grid: draws must be >= 1");
  for (int t : grid.intensities) {
    if (t < 1 || t > sched.total_steps) {
      throw Error(ErrorKind::invalid_argument, "evaluate_grid: intensity " + std::to_string(t) + " outside [1, " +
                                                   std::to_string(sched.total_steps) + "]");
    }
  }
  const auto index = dataset.index();
  std::vector<const UtteranceRecord*> clean;
  clean.reserve(test_ids.size());
  for (const auto& id : test_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error(ErrorKind::invalid_argument, "evaluate_grid: unknown record '" + id + "'");
    clean.push_back(it->second);
  }
  const LogitsFn logits = eval_logits(model);
  const std::string variant = variant_tag(model.variant());

  ResultsTable table;
  for (NoiseKind kind : grid.noise_types) {
    const NoiseType noise{kind, grid.impulse_p};
    for (int t : grid.intensities) {
      for (const auto& cond : grid.conditions) {
        ConfusionMatrix cm;
        for (int draw = 0; draw < grid.draws; ++draw) {
          const std::uint64_t cell_seed =
              derive_seed(seed, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(t), cond.mask(),
                                 static_cast<std::uint64_t>(draw)});
          std::vector<UtteranceRecord> noisy;
          noisy.reserve(clean.size());
          for (const auto* r : clean) {
            Rng rng = corruption_rng(cell_seed, r->id, t);
            noisy.push_back(corrupt_condition(*r, cond, noise, t, sched, rng));
          }
          std::vector<const UtteranceRecord*> ptrs;
          for (const auto& r : noisy) ptrs.push_back(&r);
          cm += evaluate_confusion(logits, ptrs, grid.batch_size);
        }
        table.cells.push_back({variant, std::string(to_string(kind)), t, cond.name(), cm.total(),
                               weighted_accuracy(cm), unweighted_accuracy(cm)});
      }
    }
  }
  return table;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string render_csv(const ResultsTable& table) {
  std::string out = "variant,noise_type,intensity,condition,n,WA,UA\n";
  for (const auto& c : table.cells) {
    out += c.variant + "," + c.noise_type + "," + std::to_string(c.intensity) + ",\"" + c.condition + "\"," +
           std::to_string(c.n) + "," + fmt("%.10f", c.wa) + "," + fmt("%.10f", c.ua) + "\n";
  }
  return out;
}

template <typename T>
std::vector<T> unique_in_order(const std::vector<T>& xs) {
  std::vector<T> out;
  for (const auto& x : xs) {
    if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  }
  return out;
}

std::string render_markdown(const ResultsTable& table) {
  const auto avgs = table.averages();
  std::vector<std::string> types;
  std::vector<int> intensities;
  std::vector<std::string> conditions;
  for (const auto& c : table.cells) {
    types.push_back(c.noise_type);
    intensities.push_back(c.intensity);
    conditions.push_back(c.condition);
  }
  types = unique_in_order(types);
  intensities = unique_in_order(intensities);
  std::sort(intensities.rbegin(), intensities.rend());
  conditions = unique_in_order(conditions);
  const auto variants = table.variants();

  auto find_avg = [&](const std::string& v, const std::string& ty, int t) -> const AverageRow* {
    for (const auto& a : avgs) {
      if (a.variant == v && a.noise_type == ty && a.intensity == t) return &a;
    }
    return nullptr;
  };

  std::ostringstream md;
  md << "## Condition-averaged results\n\n| System |";
  for (int t : intensities) {
    for (const auto& ty : types) md << " " << t << " (Avg) " << ty << " WA | UA |";
  }
  md << "\n|---|";
  for (size_t i = 0; i < intensities.size() * types.size(); ++i) md << "---:|---:|";
  md << "\n";
  for (const auto& v : variants) {
    md << "| " << v << " |";
    for (int t : intensities) {
      for (const auto& ty : types) {
        const AverageRow* a = find_avg(v, ty, t);
        md << (a ? " " + fmt("%.4f", a->wa) + " | " + fmt("%.4f", a->ua) + " |" : " - | - |");
      }
    }
    md << "\n";
  }

  md << "\n## Average rows\n\n| System | Noise | Intensity | WA | UA |\n|---|---|---:|---:|---:|\n";
  for (const auto& a : avgs) {
    md << "| " << a.variant << " | " << a.noise_type << " | " << a.intensity << " | " << fmt("%.4f", a.wa) << " | "
       << fmt("%.4f", a.ua) << " |\n";
  }

  for (const auto& v : variants) {
    for (const auto& ty : types) {
      md << "\n## " << v << ", " << ty << " noise, per condition\n\n| Intensity |";
      for (const auto& c : conditions) md << " " << c << " WA | UA |";
      md << " Avg WA | UA |\n|---:|";
      for (size_t i = 0; i <= conditions.size(); ++i) md << "---:|---:|";
      md << "\n";
      for (int t : intensities) {
        const AverageRow* a = find_avg(v, ty, t);
        if (!a) continue;
        md << "| " << t << " |";
        for (const auto& c : conditions) {
          bool found = false;
          for (const auto& cell : table.cells) {
            if (cell.variant == v && cell.noise_type == ty && cell.intensity == t && cell.condition == c) {
              md << " " << fmt("%.4f", cell.wa) << " | " << fmt("%.4f", cell.ua) << " |";
              found = true;
              break;
            }
          }
          if (!found) md << " - | - |";
        }
        md << " " << fmt("%.4f", a->wa) << " | " << fmt("%.4f", a->ua) << " |\n";
      }
    }
  }
  return md.str();
}

std::string render_structured(const ResultsTable& table) {
  json cells = json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"variant", c.variant},
                     {"noise_type", c.noise_type},
                     {"intensity", c.intensity},
                     {"condition", c.condition},
                     {"n", c.n},
                     {"WA", c.wa},
                     {"UA", c.ua}});
  }
  json averages = json::array();
  for (const auto& a : table.averages()) {
    averages.push_back(
        {{"variant", a.variant}, {"noise_type", a.noise_type}, {"intensity", a.intensity}, {"WA", a.wa}, {"UA", a.ua}});
  }
  return json{{"version", 1}, {"cells", cells}, {"averages", averages}}.dump(1) + "\n";
}

}  // namespace

std::vector<AverageRow> ResultsTable::averages() const {
  std::vector<AverageRow> rows;
  std::vector<int> counts;
  for (const auto& c : cells) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AverageRow& r) {
      return r.variant == c.variant && r.noise_type == c.noise_type && r.intensity == c.intensity;
    });
    if (it == rows.end()) {
      rows.push_back({c.variant, c.noise_type, c.intensity, 0.0, 0.0});
      counts.push_back(0);
      it = rows.end() - 1;
    }
    const auto k = static_cast<size_t>(it - rows.begin());
    it->wa += c.wa;
    it->ua += c.ua;
    ++counts[k];
  }
  for (size_t k = 0; k < rows.size(); ++k) {
    rows[k].wa /= counts[k];
    rows[k].ua /= counts[k];
  }
  return rows;
}

const ResultCell& ResultsTable::cell(const std::string& variant, const std::string& noise_type, int intensity,
                                     const std::string& condition) const {
  for (const auto& c : cells) {
    if (c.variant == variant && c.noise_type == noise_type && c.intensity == intensity && c.condition == condition) {
      return c;
    }
  }
  throw Error(ErrorKind::invalid_argument, "results: no cell for " + variant + "/" + noise_type + "/" +
                                               std::to_string(intensity) + "/" + condition);
}

std::vector<std::string> ResultsTable::variants() const {
  std::vector<std::string> v;
  for (const auto& c : cells) v.push_back(c.variant);
  return unique_in_order(v);
}

ResultsTable evaluate_grid(const NmerModel& model, const Dataset& dataset, std::span<const std::string> test_ids,
                           const GridSpec& grid, const NoiseSchedule& sched, std::uint64_t seed) {
  return run_grid(model, dataset, test_ids, grid, sched, seed);
}

ResultsTable evaluate_ablation(const NmerModel& model, const Dataset& dataset, std::span<const std::string> test_ids,
                               const GridSpec& grid, const NoiseSchedule& sched, std::uint64_t seed) {
  if (model.variant() != Variant::ablation) {
    throw Error(ErrorKind::invalid_argument, "evaluate_ablation: model is not the w/o VAE variant");
  }
  return run_grid(model, dataset, test_ids, grid, sched, seed);
}

std::string render_report(const ResultsTable& table, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: return render_csv(table);
    case ReportFormat::markdown: return render_markdown(table);
    case ReportFormat::structured: return render_structured(table);
  }
  throw Error(ErrorKind::invalid_argument, "unknown report format");
}

void emit_report(const ResultsTable& table, ReportFormat format, const std::filesystem::path& path) {
  io::write_file_atomic(path, render_report(table, format));
}

ResultsTable parse_structured_report(const std::string& text) {
  ResultsTable table;
  try {
    const json doc = json::parse(text);
    if (doc.at("version").get<int>() != 1) throw Error(ErrorKind::format, "results: unsupported version");
    for (const auto& c : doc.at("cells")) {
      table.cells.push_back({c.at("variant").get<std::string>(), c.at("noise_type").get<std::string>(),
                             c.at("intensity").get<int>(), c.at("condition").get<std::string>(),
                             c.at("n").get<std::int64_t>(), c.at("WA").get<double>(), c.at("UA").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("results: ") + e.what());
  }
  return table;
}

ResultsTable average_tables(std::span<const ResultsTable> runs) {
  if (runs.empty()) throw Error(ErrorKind::invalid_argument, "average_tables: no runs");
  using Key = std::tuple<std::string, std::string, int, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ResultCell*>> grouped;
  for (const auto& run : runs) {
    for (const auto& c : run.cells) {
      Key k{c.variant, c.noise_type, c.intensity, c.condition};
      auto& bucket = grouped[k];
      if (bucket.empty()) order.push_back(k);
      bucket.push_back(&c);
    }
  }
  ResultsTable out;
  for (const auto& k : order) {
    const auto& bucket = grouped[k];
    ResultCell m{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), 0, 0.0, 0.0};
    for (const auto* c : bucket) {
      m.n += c->n;
      m.wa += c->wa;
      m.ua += c->ua;
    }
    m.wa /= static_cast<double>(bucket.size());
    m.ua /= static_cast<double>(bucket.size());
    out.cells.push_back(m);
  }
  return out;
}

ResultsTable merge_tables(std::span<const ResultsTable> tables) {
  ResultsTable out;
  for (const auto& t : tables) out.cells.insert(out.cells.end(), t.cells.begin(), t.cells.end());
  return out;
}

}  // namespace nmer
