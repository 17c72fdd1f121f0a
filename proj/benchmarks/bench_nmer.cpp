#include <benchmark/benchmark.h>

#include "nmer/config.hpp"
#include "nmer/dataset.hpp"
#include "nmer/evaluation.hpp"
#include "nmer/losses.hpp"
#include "nmer/noise_scheduler.hpp"
#include "nmer/training.hpp"

namespace {

using namespace nmer;

std::vector<UtteranceRecord> sample_records(int n) {
  SyntheticSpec spec;
  spec.n_per_class = (n + kNumClasses - 1) / kNumClasses;
  spec.seed = 11;
  auto records = generate_synthetic(spec).records;
  records.resize(static_cast<size_t>(n));
  return records;
}

void BM_BuildSchedule(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_schedule(0.01, 0.5, static_cast<int>(state.range(0)), ScheduleKind::scaled_linear));
  }
}
BENCHMARK(BM_BuildSchedule)->Arg(100)->Arg(1000);

void BM_CorruptCondition(benchmark::State& state) {
  const auto records = sample_records(32);
  const auto sched = build_schedule(0.01, 0.5, 100, ScheduleKind::scaled_linear);
  const auto noise = state.range(0) == 0 ? NoiseType::gaussian() : NoiseType::impulse();
  const ConditionPattern cond(1);
  Rng rng(3);
  for (auto _ : state) {
    for (const auto& r : records) benchmark::DoNotOptimize(corrupt_condition(r, cond, noise, 60, sched, rng));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_CorruptCondition)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_EvalForward(benchmark::State& state) {
  const auto records = sample_records(static_cast<int>(state.range(0)));
  const auto batch = collate(std::span<const UtteranceRecord>(records));
  const NmerModel model(ModelConfig{}, Variant::full, 5);
  for (auto _ : state) {
    ag::NoGradGuard guard;
    benchmark::DoNotOptimize(model.logits(batch, Mode::eval, nullptr).value());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EvalForward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_StudentTrainStep(benchmark::State& state) {
  const auto records = sample_records(static_cast<int>(state.range(0)));
  const auto batch = collate(std::span<const UtteranceRecord>(records));
  NmerModel model(ModelConfig{}, Variant::full, 5);
  AdamW opt(model.parameters(), TrainConfig{});
  Rng rng(9);
  const auto& cfg = model.config();
  const Matrix joint_target = Matrix::Zero(batch.labels.size(), cfg.joint_width());
  const Matrix inv_target = Matrix::Zero(batch.labels.size(), cfg.invariant_width);
  for (auto _ : state) {
    model.parameters().zero_grad();
    const auto out = model.forward(batch, Mode::train, &rng);
    const auto loss = ag::add(ag::add(gen_loss(out.joint, joint_target, out.latent->mean, out.latent->logvar),
                                      inv_loss(out.invariant, inv_target)),
                              cls_loss(out.logits, batch.labels));
    ag::backward(loss);
    opt.step(2e-4);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_StudentTrainStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MetricsFromLabels(benchmark::State& state) {
  Rng rng(4);
  std::vector<int> y(static_cast<size_t>(state.range(0))), p(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<int>(rng() % kNumClasses);
    p[i] = static_cast<int>(rng() % kNumClasses);
  }
  for (auto _ : state) {
    const auto cm = confusion_from(y, p);
    benchmark::DoNotOptimize(weighted_accuracy(cm) + unweighted_accuracy(cm));
  }
}
BENCHMARK(BM_MetricsFromLabels)->Arg(1 << 12);

}  // namespace

BENCHMARK_MAIN();
