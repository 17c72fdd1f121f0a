#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "nmer/error.hpp"
#include "nmer/evaluation.hpp"
#include "support/test_support.hpp"

namespace nmer {
namespace {

// Straight from the definitions, without a confusion matrix.
double wa_oracle(const std::vector<int>& y, const std::vector<int>& p) {
  int hit = 0;
  for (size_t i = 0; i < y.size(); ++i) hit += y[i] == p[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

double ua_oracle(const std::vector<int>& y, const std::vector<int>& p) {
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    int total = 0, hit = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      if (y[i] != c) continue;
      ++total;
      hit += p[i] == c;
    }
    if (total == 0) continue;
    sum += static_cast<double>(hit) / total;
    ++present;
  }
  return sum / present;
}

TEST(Metrics, HandExample) {
  const std::vector<int> y = {0, 0, 0, 1, 1, 2};
  const std::vector<int> p = {0, 0, 1, 1, 0, 2};
  const auto cm = confusion_from(y, p);
  EXPECT_NEAR(weighted_accuracy(cm), 4.0 / 6.0, 1e-15);
  EXPECT_NEAR(unweighted_accuracy(cm), (2.0 / 3.0 + 0.5 + 1.0) / 3.0, 1e-15);
  EXPECT_NEAR(unweighted_accuracy(cm), 0.7222, 1e-4);
}

TEST(Metrics, PropertyMatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = testing::random_int(rng, 1, 60);
    std::vector<int> y, p;
    for (int i = 0; i < n; ++i) {
      y.push_back(testing::random_int(rng, 0, 3));
      p.push_back(testing::random_int(rng, 0, 3));
    }
    const auto cm = confusion_from(y, p);
    EXPECT_EQ(cm.total(), n);
    EXPECT_NEAR(weighted_accuracy(cm), wa_oracle(y, p), 1e-12);
    EXPECT_NEAR(unweighted_accuracy(cm), ua_oracle(y, p), 1e-12);
  }
}

TEST(Metrics, BalancedClassesMakeWaEqualUaOnlyWhenRecallIsEven) {
  const std::vector<int> y = {0, 1, 2, 3};
  EXPECT_EQ(weighted_accuracy(confusion_from(y, y)), 1.0);
  EXPECT_EQ(unweighted_accuracy(confusion_from(y, y)), 1.0);
  const std::vector<int> skew_y = {0, 0, 0, 0, 1};
  const std::vector<int> skew_p = {0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(weighted_accuracy(confusion_from(skew_y, skew_p)), 0.8);
  EXPECT_DOUBLE_EQ(unweighted_accuracy(confusion_from(skew_y, skew_p)), 0.5);
}

TEST(Metrics, RejectsEmptyAndOutOfRange) {
  ConfusionMatrix cm;
  EXPECT_THROW(weighted_accuracy(cm), Error);
  EXPECT_THROW(unweighted_accuracy(cm), Error);
  EXPECT_THROW(cm.add(4, 0), Error);
  EXPECT_THROW(cm.add(0, -1), Error);
  EXPECT_THROW(confusion_from(std::vector<int>{1}, std::vector<int>{}), Error);
}

TEST(Metrics, ArgmaxTakesFirstOnTies) {
  Matrix z(3, 4);
  z << 0, 1, 1, 0, 5, 4, 3, 2, -1, -1, -1, -0.5;
  EXPECT_EQ(argmax_rows(z), (std::vector<int>{1, 0, 3}));
}

ResultsTable sample_table(const std::string& variant, std::uint64_t seed) {
  Rng rng(seed);
  ResultsTable t;
  for (const char* type : {"gaussian", "impulse"}) {
    for (int i : {20, 40, 60, 80, 100}) {
      for (const auto& c : ConditionPattern::all()) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        t.cells.push_back({variant, type, i, c.name(), 48, u(rng), u(rng)});
      }
    }
  }
  return t;
}

TEST(Reports, StructuredRoundTripIsExact) {
  const ResultsTable t = sample_table("NMER", 3);
  EXPECT_EQ(parse_structured_report(render_report(t, ReportFormat::structured)), t);
  EXPECT_THROW(parse_structured_report("{\"version\":2,\"cells\":[]}"), Error);
  EXPECT_THROW(parse_structured_report("[1,2"), Error);
}

TEST(Reports, CsvIsStableAndWellFormed) {
  const ResultsTable t = sample_table("w/o VAE", 4);
  const std::string csv = render_report(t, ReportFormat::csv);
  EXPECT_EQ(csv, render_report(t, ReportFormat::csv));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,noise_type,intensity,condition,n,WA,UA");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 61);
  EXPECT_NE(csv.find("w/o VAE,gaussian,20,\"{a}\",48,"), std::string::npos);
}

TEST(Reports, MarkdownHasAverageAndDetailTables) {
  const ResultsTable t = merge_tables(std::vector<ResultsTable>{sample_table("NMER", 1), sample_table("w/o VAE", 2)});
  const std::string md = render_report(t, ReportFormat::markdown);
  EXPECT_NE(md.find("## Condition-averaged results"), std::string::npos);
  EXPECT_NE(md.find("w/o VAE"), std::string::npos);
  EXPECT_NE(md.find("{v,l}"), std::string::npos);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", t.averages().front().wa);
  EXPECT_NE(md.find(buf), std::string::npos);
}

TEST(Reports, AveragesAreConditionMeans) {
  const ResultsTable t = sample_table("NMER", 5);
  const auto avg = t.averages();
  ASSERT_EQ(avg.size(), 10u);
  for (const auto& a : avg) {
    double wa = 0.0, ua = 0.0;
    for (const auto& c : ConditionPattern::all()) {
      wa += t.cell(a.variant, a.noise_type, a.intensity, c.name()).wa;
      ua += t.cell(a.variant, a.noise_type, a.intensity, c.name()).ua;
    }
    EXPECT_NEAR(a.wa, wa / 6.0, 1e-15);
    EXPECT_NEAR(a.ua, ua / 6.0, 1e-15);
  }
  EXPECT_THROW(t.cell("NMER", "gaussian", 30, "{a}"), Error);
}

TEST(Reports, AverageTablesIsCellwiseMean) {
  const std::vector<ResultsTable> runs = {sample_table("NMER", 1), sample_table("NMER", 2), sample_table("NMER", 3)};
  const ResultsTable mean = average_tables(runs);
  ASSERT_EQ(mean.cells.size(), 60u);
  for (size_t i = 0; i < 60; ++i) {
    EXPECT_NEAR(mean.cells[i].wa, (runs[0].cells[i].wa + runs[1].cells[i].wa + runs[2].cells[i].wa) / 3.0, 1e-15);
    EXPECT_NEAR(mean.cells[i].ua, (runs[0].cells[i].ua + runs[1].cells[i].ua + runs[2].cells[i].ua) / 3.0, 1e-15);
    EXPECT_EQ(mean.cells[i].n, 144);
    EXPECT_EQ(mean.cells[i].condition, runs[0].cells[i].condition);
  }
  EXPECT_THROW(average_tables(std::vector<ResultsTable>{}), Error);
}

struct GridFixture {
  ModelConfig cfg = testing::tiny_model();
  Dataset data;
  std::vector<std::string> ids;
  NoiseSchedule sched = build_schedule(0.01, 0.5, 100, ScheduleKind::scaled_linear);
  GridFixture() {
    SyntheticSpec s;
    s.n_per_class = 3;
    s.dims = cfg.input_dims;
    s.latent_dim = 4;
    s.length_ranges = {{{2, 3}, {2, 3}, {3, 4}}};
    s.seed = 2;
    data = generate_synthetic(s);
    ids = data.ids();
  }
};

TEST(Grid, SixtyCellsInTableOrder) {
  GridFixture f;
  NmerModel model(f.cfg, Variant::full, 1);
  GridSpec g;
  g.batch_size = 5;
  const auto table = evaluate_grid(model, f.data, f.ids, g, f.sched, 7);
  ASSERT_EQ(table.cells.size(), 60u);
  std::set<std::tuple<std::string, int, std::string>> keys;
  for (const auto& c : table.cells) {
    EXPECT_EQ(c.variant, "NMER");
    EXPECT_EQ(c.n, 12);
    EXPECT_GE(c.wa, 0.0);
    EXPECT_LE(c.wa, 1.0);
    keys.insert({c.noise_type, c.intensity, c.condition});
  }
  EXPECT_EQ(keys.size(), 60u);
  EXPECT_EQ(table.cells[0].noise_type, "gaussian");
  EXPECT_EQ(table.cells[0].condition, "{a}");
  EXPECT_EQ(table.cells[59].noise_type, "impulse");
  EXPECT_EQ(table.cells[59].intensity, 100);
  EXPECT_EQ(table.cells[59].condition, "{v,l}");
  EXPECT_EQ(render_report(table, ReportFormat::csv),
            render_report(evaluate_grid(model, f.data, f.ids, g, f.sched, 7), ReportFormat::csv));
}

TEST(Grid, CellsMatchManualCorruptionAndDrawsPool) {
  GridFixture f;
  NmerModel model(f.cfg, Variant::full, 2);
  GridSpec g;
  g.noise_types = {NoiseKind::impulse};
  g.intensities = {60};
  g.conditions = {ConditionPattern::parse("{a,l}")};
  g.batch_size = 4;
  const auto one = evaluate_grid(model, f.data, f.ids, g, f.sched, 11);
  ASSERT_EQ(one.cells.size(), 1u);

  // Recompute the cell from the per-sample streams.
  const std::uint64_t cell_seed = derive_seed(11, {static_cast<std::uint64_t>(NoiseKind::impulse), 60u, 5u, 0u});
  std::vector<UtteranceRecord> noisy;
  for (const auto& r : f.data.records) {
    Rng rng = corruption_rng(cell_seed, r.id, 60);
    noisy.push_back(corrupt_condition(r, g.conditions[0], NoiseType::impulse(), 60, f.sched, rng));
  }
  std::vector<const UtteranceRecord*> ptrs;
  for (const auto& r : noisy) ptrs.push_back(&r);
  const auto cm = evaluate_confusion(eval_logits(model), ptrs, 100);
  EXPECT_EQ(one.cells[0].wa, weighted_accuracy(cm));
  EXPECT_EQ(one.cells[0].ua, unweighted_accuracy(cm));

  g.draws = 3;
  const auto pooled = evaluate_grid(model, f.data, f.ids, g, f.sched, 11);
  EXPECT_EQ(pooled.cells[0].n, 36);
}

TEST(Grid, RejectsBadRequests) {
  GridFixture f;
  NmerModel model(f.cfg, Variant::full, 1);
  GridSpec g;
  g.intensities = {0};
  EXPECT_THROW(evaluate_grid(model, f.data, f.ids, g, f.sched, 1), Error);
  g.intensities = {101};
  EXPECT_THROW(evaluate_grid(model, f.data, f.ids, g, f.sched, 1), Error);
  g = GridSpec{};
  g.draws = 0;
  EXPECT_THROW(evaluate_grid(model, f.data, f.ids, g, f.sched, 1), Error);
  EXPECT_THROW(evaluate_grid(model, f.data, std::vector<std::string>{}, GridSpec{}, f.sched, 1), Error);
  EXPECT_THROW(evaluate_grid(model, f.data, std::vector<std::string>{"ghost"}, GridSpec{}, f.sched, 1), Error);
  EXPECT_THROW(evaluate_ablation(model, f.data, f.ids, GridSpec{}, f.sched, 1), Error);
}

TEST(Grid, AblationTableSharesSchema) {
  GridFixture f;
  NmerModel full(f.cfg, Variant::full, 1);
  NmerModel ablation(f.cfg, Variant::ablation, 1);
  GridSpec g;
  g.intensities = {20, 100};
  const auto a = evaluate_grid(full, f.data, f.ids, g, f.sched, 3);
  const auto b = evaluate_ablation(ablation, f.data, f.ids, g, f.sched, 3);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (size_t i = 0; i < a.cells.size(); ++i) {
    EXPECT_EQ(b.cells[i].variant, "w/o VAE");
    EXPECT_EQ(a.cells[i].noise_type, b.cells[i].noise_type);
    EXPECT_EQ(a.cells[i].intensity, b.cells[i].intensity);
    EXPECT_EQ(a.cells[i].condition, b.cells[i].condition);
  }
  const auto csv_a = render_report(a, ReportFormat::csv);
  const auto csv_b = render_report(b, ReportFormat::csv);
  EXPECT_EQ(csv_a.substr(0, csv_a.find('\n')), csv_b.substr(0, csv_b.find('\n')));
}

}  // namespace
}  // namespace nmer
