#include <gtest/gtest.h>

#include "nmer/encoders.hpp"
#include "nmer/error.hpp"
#include "support/test_support.hpp"

namespace nmer {
namespace {

using testing::random_records;
using testing::tiny_model;

struct Fixture {
  ModelConfig cfg = tiny_model();
  ParameterStore store;
  FeatureBackbone backbone;
  explicit Fixture(std::uint64_t seed = 1) {
    Rng rng(seed);
    backbone = FeatureBackbone(store, cfg, rng);
  }
  FeatureBackbone::Output eval(const PaddedBatch& b) const {
    ag::NoGradGuard g;
    return backbone(b, ForwardContext{});
  }
};

TEST(Encoders, OutputShapes) {
  Fixture f;
  Rng rng(2);
  const auto recs = random_records(5, f.cfg.input_dims, rng);
  const auto out = f.eval(collate(std::span<const UtteranceRecord>(recs)));
  for (const auto& p : out.pooled) {
    EXPECT_EQ(p.rows(), 5);
    EXPECT_EQ(p.cols(), f.cfg.encoder_width);
  }
  EXPECT_EQ(out.specific.cols(), f.cfg.joint_width());
  EXPECT_EQ(out.invariant.cols(), f.cfg.invariant_width);
  EXPECT_TRUE(out.specific.value().allFinite());
  EXPECT_GE(out.specific.value().minCoeff(), 0.0);
}

TEST(Encoders, ExtraPaddingDoesNotChangeOutputs) {
  Fixture f;
  Rng rng(3);
  const auto recs = random_records(4, f.cfg.input_dims, rng, 1, 5);
  const auto tight = f.eval(collate(std::span<const UtteranceRecord>(recs)));
  const auto padded = f.eval(collate(std::span<const UtteranceRecord>(recs), 11));
  EXPECT_LT((tight.specific.value() - padded.specific.value()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((tight.invariant.value() - padded.invariant.value()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoders, SampleOutputIndependentOfBatchMates) {
  Fixture f;
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto recs = random_records(testing::random_int(rng, 2, 6), f.cfg.input_dims, rng, 1, 7);
    const auto batch = f.eval(collate(std::span<const UtteranceRecord>(recs)));
    for (size_t i = 0; i < recs.size(); ++i) {
      const auto alone = f.eval(collate(std::span<const UtteranceRecord>(&recs[i], 1)));
      const auto row = static_cast<Eigen::Index>(i);
      EXPECT_LT((batch.specific.value().row(row) - alone.specific.value().row(0)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((batch.invariant.value().row(row) - alone.invariant.value().row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Encoders, TextShorterThanKernelStillEncodes) {
  Fixture f;
  Rng rng(5);
  auto recs = random_records(2, f.cfg.input_dims, rng);
  recs[0].features[2] = FloatMatrix::Ones(1, f.cfg.input_dims[2]);
  const auto out = f.eval(collate(std::span<const UtteranceRecord>(recs)));
  EXPECT_TRUE(out.invariant.value().allFinite());
}

TEST(Encoders, DeterministicInitialisation) {
  Fixture a(7), b(7), c(8);
  ASSERT_EQ(a.store.entries().size(), b.store.entries().size());
  bool any_diff = false;
  for (size_t i = 0; i < a.store.entries().size(); ++i) {
    EXPECT_EQ(a.store.entries()[i].first, b.store.entries()[i].first);
    EXPECT_EQ(a.store.entries()[i].second.value(), b.store.entries()[i].second.value());
    any_diff |= a.store.entries()[i].second.value() != c.store.entries()[i].second.value();
  }
  EXPECT_TRUE(any_diff);
}

TEST(Encoders, EveryParameterReceivesGradient) {
  Fixture f;
  Rng rng(6);
  const auto recs = random_records(6, f.cfg.input_dims, rng, 2, 6);
  const auto batch = collate(std::span<const UtteranceRecord>(recs));
  const auto out = f.backbone(batch, ForwardContext{});
  ag::backward(ag::add(ag::sum(ag::mul(out.specific, out.specific)), ag::sum(ag::mul(out.invariant, out.invariant))));
  for (const auto& [name, p] : f.store.entries()) {
    ASSERT_TRUE(p.has_grad()) << name;
    EXPECT_GT(p.grad().norm(), 0.0) << name;
  }
}

TEST(Encoders, GradientCheckTinyBackbone) {
  Fixture f;
  Rng rng(7);
  const auto recs = random_records(3, f.cfg.input_dims, rng, 2, 4);
  const auto batch = collate(std::span<const UtteranceRecord>(recs));
  Rng w(8);
  const Matrix ws = testing::random_matrix(3, f.cfg.joint_width(), w);
  const Matrix wi = testing::random_matrix(3, f.cfg.invariant_width, w);
  const auto loss = [&] {
    const auto out = f.backbone(batch, ForwardContext{});
    return ag::add(ag::sum(ag::mul(out.specific, ag::constant(ws))), ag::sum(ag::mul(out.invariant, ag::constant(wi))));
  };
  const auto r = testing::gradient_check(loss, f.store.entries());
  EXPECT_LT(r.worst_error, 1e-3) << r.worst_tensor;
}

TEST(Encoders, ConcatProjectMergeHasOwnProjection) {
  auto cfg = tiny_model();
  cfg.text_merge = TextMerge::concat_project;
  ParameterStore store;
  Rng rng(1);
  FeatureBackbone bb(store, cfg, rng);
  bool found = false;
  for (const auto& [name, p] : store.entries()) found |= name.find("project") != std::string::npos;
  EXPECT_TRUE(found);
  Rng data(2);
  const auto recs = random_records(2, cfg.input_dims, data);
  ag::NoGradGuard g;
  EXPECT_EQ(bb(collate(std::span<const UtteranceRecord>(recs)), ForwardContext{}).pooled[2].cols(), cfg.encoder_width);
}

TEST(ModelConfig, RejectsInconsistentWidths) {
  auto cfg = tiny_model();
  cfg.vae_heads = 5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_model();
  cfg.classifier_widths.back() = 3;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_model();
  cfg.decoder_widths.back() = 11;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_model();
  cfg.text_kernels.clear();
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(tiny_model().validate());
  EXPECT_NO_THROW(ModelConfig{}.validate());
}

}  // namespace
}  // namespace nmer
